#include "geoaddr/sampler.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr {

void SampleConfig::validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0,1]");
}

EdgeCode SampledSubgraph::edge(int i, int j) const {
    if (i > j) std::swap(i, j);
    auto it = induced_edges.find({i, j});
    return it == induced_edges.end() ? EdgeCode{} : it->second;
}

void to_json(nlohmann::json& j, const SampledSubgraph& s) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [ij, code] : s.induced_edges) edges.push_back({ij.first, ij.second, code.bits});
    j = nlohmann::json{{"node_ids", s.node_ids}, {"edges", edges}};
}

void from_json(const nlohmann::json& j, SampledSubgraph& s) {
    j.at("node_ids").get_to(s.node_ids);
    s.induced_edges.clear();
    const int n = static_cast<int>(s.node_ids.size());
    for (const auto& e : j.at("edges")) {
        const int a = e.at(0).get<int>(), b = e.at(1).get<int>();
        const int bits = e.at(2).get<int>();
        if (a < 0 || b >= n || a >= b || bits < 1 || bits > 7) throw FormatError("malformed sample edge");
        s.induced_edges[{a, b}] = EdgeCode{static_cast<std::uint8_t>(bits)};
    }
}

std::map<std::pair<int, int>, EdgeCode> induce_edges(const HeteroGraph& g, const std::vector<NodeId>& node_ids) {
    std::map<std::pair<int, int>, EdgeCode> out;
    const int n = static_cast<int>(node_ids.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (EdgeCode e = g.edge(node_ids[static_cast<std::size_t>(i)], node_ids[static_cast<std::size_t>(j)]); e.bits)
                out[{i, j}] = e;
    return out;
}

namespace {

std::vector<NodeId> neighbor_ids(const HeteroGraph& g, NodeId v) {
    std::vector<NodeId> out;
    for (const auto& [u, code] : g.adjacency(v)) out.push_back(u);
    return out;
}

}  // namespace

SampledSubgraph sample(const HeteroGraph& g, NodeId base, const SampleConfig& cfg) {
    cfg.validate();
    if (!g.contains(base)) throw NodeNotFound("base node " + std::to_string(base));
    Rng rng(cfg.seed);
    SampledSubgraph out;
    std::unordered_set<NodeId> in_sample{base};
    out.node_ids.push_back(base);
    std::vector<NodeId> frontier = neighbor_ids(g, base);

    auto reroot = [&] {
        const NodeId root = out.node_ids[rng.index(out.node_ids.size())];
        frontier = neighbor_ids(g, root);
    };
    auto expandable = [&] {
        for (NodeId v : out.node_ids)
            for (const auto& [u, code] : g.adjacency(v))
                if (!in_sample.count(u)) return true;
        return false;
    };

    const auto k = static_cast<std::size_t>(cfg.k);
    while (out.node_ids.size() < k) {
        if (!frontier.empty()) {
            const std::size_t pick = rng.index(frontier.size());
            const NodeId v = frontier[pick];
            frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
            if (in_sample.count(v)) continue;
            in_sample.insert(v);
            out.node_ids.push_back(v);
            if (rng.uniform() < cfg.p) reroot();
        } else {
            // The component is exhausted: nothing left to reach from S.
            if (!expandable()) break;
            reroot();
        }
    }
    out.induced_edges = induce_edges(g, out.node_ids);
    return out;
}

SampledSubgraph sample_at(const HeteroGraph& g, std::size_t index, const SampleConfig& cfg) {
    if (g.num_nodes() == 0) throw EmptyGraph("cannot sample from an empty graph");
    const std::uint64_t stream = derive_seed(cfg.seed, index);
    Rng rng(stream);
    const auto base = static_cast<NodeId>(rng.index(g.num_nodes()));
    SampleConfig local = cfg;
    local.seed = splitmix64(stream);
    return sample(g, base, local);
}

std::vector<SampledSubgraph> sample_corpus(const HeteroGraph& g, std::size_t n_samples, const SampleConfig& cfg) {
    cfg.validate();
    if (g.num_nodes() == 0) throw EmptyGraph("cannot sample from an empty graph");
    std::vector<SampledSubgraph> out;
    out.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) out.push_back(sample_at(g, i, cfg));
    return out;
}

namespace {

std::string part_name(std::size_t part, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "part-%05zu%s", part, ext);
    return buf;
}

}  // namespace

void save_samples(const std::vector<SampledSubgraph>& samples, const std::filesystem::path& dir, std::size_t per_part) {
    if (per_part == 0) throw ConfigError("per_part must be >= 1");
    std::filesystem::create_directories(dir);
    for (std::size_t part = 0; part * per_part < samples.size() || (part == 0 && samples.empty()); ++part) {
        std::vector<nlohmann::json> rows;
        for (std::size_t i = part * per_part; i < std::min(samples.size(), (part + 1) * per_part); ++i)
            rows.emplace_back(samples[i]);
        io::write_jsonl(dir / part_name(part, ".jsonl"), rows);
        if (samples.empty()) break;
    }
}

std::vector<SampledSubgraph> load_samples(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> parts;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("part-", 0) == 0 && e.path().extension() == ".jsonl") parts.push_back(e.path());
    }
    std::sort(parts.begin(), parts.end());
    std::vector<SampledSubgraph> out;
    for (const auto& p : parts)
        io::for_each_jsonl(p, [&](const nlohmann::json& j, std::size_t) { out.push_back(j.get<SampledSubgraph>()); });
    return out;
}

}  // namespace geoaddr
