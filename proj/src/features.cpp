#include "geoaddr/features.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"

namespace geoaddr {

SampleFeatures featurize_local(const SampledSubgraph& s, std::vector<int> degrees) {
    const int n = static_cast<int>(s.size());
    SampleFeatures f;
    f.n = n;
    f.degrees = std::move(degrees);
    f.positions.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) f.positions[static_cast<std::size_t>(i)] = i + 1;

    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (const auto& [ij, code] : s.induced_edges) {
        adj[static_cast<std::size_t>(ij.first)].push_back(ij.second);
        adj[static_cast<std::size_t>(ij.second)].push_back(ij.first);
    }
    for (auto& a : adj) std::sort(a.begin(), a.end());

    f.dist.assign(static_cast<std::size_t>(n * n), n);
    for (int src = 0; src < n; ++src) {
        int* row = &f.dist[static_cast<std::size_t>(src * n)];
        row[src] = 0;
        std::deque<int> queue{src};
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (int v : adj[static_cast<std::size_t>(u)]) {
                if (row[v] != n) continue;
                row[v] = row[u] + 1;
                queue.push_back(v);
            }
        }
    }

    const int slots = f.path_slots();
    f.route_types.assign(static_cast<std::size_t>(n * n * slots), 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int d = f.distance(i, j);
            if (i == j || d == n) continue;
            // Lexicographically smallest shortest path: step to the lowest-index
            // neighbour that is one hop closer to j.
            int cur = i;
            for (int slot = 0; slot < d; ++slot) {
                int next = -1;
                for (int v : adj[static_cast<std::size_t>(cur)]) {
                    if (f.distance(v, j) == f.distance(cur, j) - 1) {
                        next = v;
                        break;
                    }
                }
                f.route_types[static_cast<std::size_t>((i * n + j) * slots + slot)] = s.edge(cur, next).bits;
                cur = next;
            }
        }
    }
    return f;
}

SampleFeatures featurize(const HeteroGraph& g, const SampledSubgraph& s, const FeaturizeOptions& opts) {
    std::vector<int> degrees;
    degrees.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const NodeId v = s.node_ids[i];
        if (!g.contains(v)) throw InconsistentSample("sample node " + std::to_string(v) + " is not in the graph");
        if (opts.degree_from_subgraph) {
            int d = 0;
            for (const auto& [ij, code] : s.induced_edges)
                if (ij.first == static_cast<int>(i) || ij.second == static_cast<int>(i)) ++d;
            degrees.push_back(d);
        } else {
            degrees.push_back(static_cast<int>(g.degree(v)));
        }
    }
    return featurize_local(s, std::move(degrees));
}

namespace {

std::string part_stem(std::size_t part) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "part-%05zu", part);
    return buf;
}

}  // namespace

void save_features(const std::vector<SampleFeatures>& feats, const std::filesystem::path& dir, std::size_t per_part) {
    if (per_part == 0) throw ConfigError("per_part must be >= 1");
    std::filesystem::create_directories(dir);
    const std::size_t parts = std::max<std::size_t>(1, (feats.size() + per_part - 1) / per_part);
    for (std::size_t part = 0; part < parts; ++part) {
        std::vector<std::uint8_t> bytes;
        nlohmann::json samples = nlohmann::json::array();
        for (std::size_t i = part * per_part; i < std::min(feats.size(), (part + 1) * per_part); ++i) {
            const auto& f = feats[i];
            samples.push_back({{"n", f.n}, {"offset", bytes.size()}});
            for (int v : f.degrees) io::append_le(bytes, static_cast<std::int32_t>(v));
            for (int v : f.positions) io::append_le(bytes, static_cast<std::int32_t>(v));
            for (int v : f.dist) io::append_le(bytes, static_cast<std::int32_t>(v));
            for (auto v : f.route_types) io::append_le(bytes, static_cast<std::int32_t>(v));
        }
        nlohmann::json meta{{"format", "geoaddr-features-v1"},
                            {"dtype", "int32-le"},
                            {"layout", {"degrees[n]", "positions[n]", "dist[n,n]", "route_types[n,n,n-1]"}},
                            {"bytes", bytes.size()},
                            {"samples", samples}};
        io::write_binary(dir / (part_stem(part) + ".bin"), bytes);
        io::write_text(dir / (part_stem(part) + ".meta.json"), meta.dump(2) + "\n");
    }
}

std::vector<SampleFeatures> load_features(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> metas;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("part-", 0) == 0 && name.size() > 10 && name.ends_with(".meta.json")) metas.push_back(e.path());
    }
    std::sort(metas.begin(), metas.end());
    std::vector<SampleFeatures> out;
    for (const auto& meta_path : metas) {
        const auto meta = nlohmann::json::parse(io::read_text(meta_path));
        std::string stem = meta_path.filename().string();
        stem.resize(stem.size() - std::string(".meta.json").size());
        const auto bytes = io::read_binary(meta_path.parent_path() / (stem + ".bin"));
        if (bytes.size() != meta.at("bytes").get<std::size_t>()) throw FormatError(stem + ".bin size disagrees with meta");
        for (const auto& s : meta.at("samples")) {
            SampleFeatures f;
            f.n = s.at("n").get<int>();
            std::size_t off = s.at("offset").get<std::size_t>();
            auto take = [&](std::size_t count, auto& vec) {
                vec.resize(count);
                for (std::size_t k = 0; k < count; ++k, off += 4)
                    vec[k] = static_cast<std::remove_reference_t<decltype(vec[0])>>(io::read_le_i32(bytes, off));
            };
            const auto n = static_cast<std::size_t>(f.n);
            take(n, f.degrees);
            take(n, f.positions);
            take(n * n, f.dist);
            take(n * n * static_cast<std::size_t>(f.path_slots()), f.route_types);
            out.push_back(std::move(f));
        }
    }
    return out;
}

}  // namespace geoaddr
