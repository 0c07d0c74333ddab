#include "geoaddr/checks.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "geoaddr/errors.hpp"
#include "geoaddr/geocode.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/pipeline.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr::checks {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- oracles

std::vector<int> floyd_warshall(const SampledSubgraph& s) {
    const int n = static_cast<int>(s.node_ids.size());
    std::vector<int> d(static_cast<std::size_t>(n * n), n);
    auto at = [&](int i, int j) -> int& { return d[static_cast<std::size_t>(i * n + j)]; };
    for (int i = 0; i < n; ++i) at(i, i) = 0;
    for (const auto& [key, code] : s.induced_edges) {
        if (code.bits == 0) continue;
        at(key.first, key.second) = 1;
        at(key.second, key.first) = 1;
    }
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (at(i, k) + at(k, j) < at(i, j)) at(i, j) = at(i, k) + at(k, j);
    return d;
}

std::vector<std::uint8_t> replay_routes(const SampledSubgraph& s, const std::vector<int>& dist) {
    const int n = static_cast<int>(s.node_ids.size());
    const int slots = n > 1 ? n - 1 : 0;
    std::vector<std::vector<std::uint8_t>> code(static_cast<std::size_t>(n), std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
    for (const auto& [key, c] : s.induced_edges) {
        code[static_cast<std::size_t>(key.first)][static_cast<std::size_t>(key.second)] = c.bits;
        code[static_cast<std::size_t>(key.second)][static_cast<std::size_t>(key.first)] = c.bits;
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n * n * slots), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const int len = dist[static_cast<std::size_t>(i * n + j)];
            if (i == j || len >= n) continue;
            // Every simple path of exactly `len` hops from i to j.
            std::vector<std::vector<int>> paths;
            std::vector<int> cur{i};
            std::vector<bool> seen(static_cast<std::size_t>(n), false);
            seen[static_cast<std::size_t>(i)] = true;
            std::function<void()> dfs = [&] {
                const int u = cur.back();
                if (static_cast<int>(cur.size()) - 1 == len) {
                    if (u == j) paths.push_back(cur);
                    return;
                }
                for (int v = 0; v < n; ++v) {
                    if (seen[static_cast<std::size_t>(v)] || code[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] == 0) continue;
                    seen[static_cast<std::size_t>(v)] = true;
                    cur.push_back(v);
                    dfs();
                    cur.pop_back();
                    seen[static_cast<std::size_t>(v)] = false;
                }
            };
            dfs();
            if (paths.empty()) continue;
            const auto& best = *std::min_element(paths.begin(), paths.end());
            for (int k = 0; k < len; ++k)
                out[static_cast<std::size_t>((i * n + j) * slots + k)] =
                    code[static_cast<std::size_t>(best[static_cast<std::size_t>(k)])][static_cast<std::size_t>(best[static_cast<std::size_t>(k) + 1])];
        }
    return out;
}

std::set<NodeId> bfs_component(const HeteroGraph& g, NodeId start) {
    std::set<NodeId> seen{start};
    std::deque<NodeId> q{start};
    while (!q.empty()) {
        const NodeId u = q.front();
        q.pop_front();
        for (const auto& [v, code] : g.adjacency(u))
            if (code.bits != 0 && seen.insert(v).second) q.push_back(v);
    }
    return seen;
}

std::map<std::pair<int, int>, EdgeCode> recheck_edges(const HeteroGraph& g, const std::vector<NodeId>& nodes) {
    std::map<NodeId, int> local;
    for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = static_cast<int>(i);
    std::map<std::pair<int, int>, EdgeCode> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (const auto& [v, code] : g.adjacency(nodes[i])) {
            const auto it = local.find(v);
            if (it == local.end() || code.bits == 0) continue;
            const int a = std::min(static_cast<int>(i), it->second), b = std::max(static_cast<int>(i), it->second);
            out[{a, b}] = code;
        }
    return out;
}

GradCheckReport gradient_check(const Model& model, std::span<const Example> batch, const TaskWeights& w, double h) {
    const ModelParams analytic = model.gradients(batch, w);
    Model probe = model;
    std::vector<std::pair<std::string, Tensor*>> tensors;
    for_each_tensor(probe.params(), [&](const std::string& name, Tensor& t) { tensors.emplace_back(name, &t); });
    std::vector<const Tensor*> grads;
    for_each_tensor(analytic, [&](const std::string&, const Tensor& t) { grads.push_back(&t); });

    GradCheckReport r;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Tensor& t = *tensors[k].second;
        double diff = 0.0, amax = 0.0, nmax = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.data[i];
            t.data[i] = orig + h;
            const double up = probe.evaluate_loss(batch, w).total;
            t.data[i] = orig - h;
            const double down = probe.evaluate_loss(batch, w).total;
            t.data[i] = orig;
            const double num = (up - down) / (2.0 * h);
            const double ana = grads[k]->data[i];
            diff = std::max(diff, std::abs(ana - num));
            amax = std::max(amax, std::abs(ana));
            nmax = std::max(nmax, std::abs(num));
        }
        const double rel = diff / std::max({amax, nmax, 1e-8});
        r.per_tensor.emplace_back(tensors[k].first, rel);
        if (rel >= r.max_rel) {
            r.max_rel = rel;
            r.worst = tensors[k].first;
        }
    }
    return r;
}

std::vector<bool> span_score(const std::vector<int>& gold, const std::vector<int>& pred) {
    const int other = static_cast<int>(EntityLabel::Other);
    std::vector<bool> out;
    std::size_t i = 0;
    while (i < gold.size()) {
        if (gold[i] < 0 || gold[i] == other) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < gold.size() && gold[j] == gold[i]) ++j;
        const std::vector<int> want(gold.begin() + static_cast<std::ptrdiff_t>(i), gold.begin() + static_cast<std::ptrdiff_t>(j));
        const std::vector<int> got(pred.begin() + static_cast<std::ptrdiff_t>(i), pred.begin() + static_cast<std::ptrdiff_t>(j));
        out.push_back(want == got);
        i = j;
    }
    return out;
}

double disk_box_fraction(LatLon center, double radius_km, const BoundingBox& box) {
    // Integrate over latitude; at each latitude the disk covers a longitude
    // interval with a closed form from the spherical law of cosines.
    constexpr double kDeg = std::numbers::pi / 180.0;
    const double c = std::cos(radius_km / kEarthRadiusKm);
    const double p1 = center.lat * kDeg;
    const int steps = 20000;
    const double a = box.lat_min * kDeg, b = box.lat_max * kDeg;
    const double dphi = (b - a) / steps;
    double inside = 0.0, total = 0.0;
    for (int s = 0; s < steps; ++s) {
        const double phi = a + (s + 0.5) * dphi;
        const double wgt = std::cos(phi) * dphi;
        total += wgt * (box.lon_max - box.lon_min) * kDeg;
        const double denom = std::cos(p1) * std::cos(phi);
        const double arg = (c - std::sin(p1) * std::sin(phi)) / denom;
        if (arg > 1.0) continue;
        const double half = arg < -1.0 ? std::numbers::pi : std::acos(arg);
        const double lo = std::max(center.lon * kDeg - half, box.lon_min * kDeg);
        const double hi = std::min(center.lon * kDeg + half, box.lon_max * kDeg);
        if (hi > lo) inside += wgt * (hi - lo);
    }
    return inside / total;
}

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
    return m;
}

Mat mat_mul(const Mat& a, const Tensor& w) {
    Mat out(a.size(), std::vector<double>(w.shape[1], 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < w.shape[1]; ++j)
            for (std::size_t k = 0; k < w.shape[0]; ++k) out[i][j] += a[i][k] * w(k, j);
    return out;
}

Mat layer_norm_ref(const Mat& x, const LayerNormParams& ln, double eps) {
    Mat out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(x[i].size());
        double mean = 0.0;
        for (double v : x[i]) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : x[i]) var += (v - mean) * (v - mean);
        var /= n;
        for (std::size_t j = 0; j < x[i].size(); ++j)
            out[i][j] = (x[i][j] - mean) / std::sqrt(var + eps) * ln.gamma.data[j] + ln.beta.data[j];
    }
    return out;
}

double gelu_ref(double v) { return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (v + 0.044715 * v * v * v))); }

}  // namespace

Tensor reference_graph_encode(const ModelParams& p, const ModelConfig& cfg, const Tensor& h, const SampleFeatures* feats) {
    const std::size_t n = h.rows(), d = h.cols();
    const auto H = static_cast<std::size_t>(cfg.n_heads_graph);
    const std::size_t dh = d / H;
    auto bias = [&](std::size_t head, std::size_t i, std::size_t j) {
        if (!feats) return 0.0;
        const int dist = feats->distance(static_cast<int>(i), static_cast<int>(j));
        const int row = dist == feats->unreachable() ? cfg.max_dist + 1 : dist;
        double b = p.dist_bias(static_cast<std::size_t>(row), head);
        double sum = 0.0;
        int cnt = 0;
        for (int s = 0; s < feats->path_slots(); ++s) {
            const auto code = feats->route(static_cast<int>(i), static_cast<int>(j), s);
            if (code == 0) continue;
            sum += p.route_bias(code, head);
            ++cnt;
        }
        return cnt ? b + sum / cnt : b;
    };
    Mat x = to_mat(h);
    for (const auto& g : p.graph_layers) {
        const Mat z = layer_norm_ref(x, g.ln1, cfg.layer_norm_eps);
        const Mat q = mat_mul(z, g.wq), k = mat_mul(z, g.wk), v = mat_mul(z, g.wv);
        Mat att(n, std::vector<double>(d, 0.0));
        for (std::size_t hd = 0; hd < H; ++hd)
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> s(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) dot += q[i][c] * k[j][c];
                    s[j] = dot / std::sqrt(static_cast<double>(dh)) + bias(hd, i, j);
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double z_sum = 0.0;
                for (double& e : s) z_sum += (e = std::exp(e - mx));
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) att[i][c] += s[j] / z_sum * v[j][c];
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) x[i][c] += att[i][c];
        const Mat z2 = layer_norm_ref(x, g.ln2, cfg.layer_norm_eps);
        Mat hid = mat_mul(z2, g.fc1.w);
        for (auto& row : hid)
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = gelu_ref(row[c] + g.fc1.b.data[c]);
        const Mat out = mat_mul(hid, g.fc2.w);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) x[i][c] += out[i][c] + g.fc2.b.data[c];
    }
    Tensor r({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) r(i, c) = x[i][c];
    return r;
}

// ---------------------------------------------------------------- criteria

namespace {

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(4);
    ss << v;
    return ss.str();
}

// Collects failures; the first few go into the detail line.
struct Failures {
    std::size_t count = 0;
    std::vector<std::string> first;
    void add(const std::string& what) {
        if (first.size() < 3) first.push_back(what);
        ++count;
    }
    std::string summary() const {
        std::string s = std::to_string(count) + " failure(s)";
        for (const auto& f : first) s += "; " + f;
        return s;
    }
};

HeteroGraph graph_from(const World& w);

// Some POIs carry several addresses, so the node count varies by seed; take
// the first seed that lands on exactly 200 nodes.
WorldConfig graph_world() {
    WorldConfig wc;
    wc.n_aois = 36;
    wc.pois_per_aoi_min = 5;
    wc.pois_per_aoi_max = 5;
    for (wc.seed = 2024; wc.seed < 3024; ++wc.seed)
        if (graph_from(generate_world(wc)).num_nodes() == 200) return wc;
    throw std::runtime_error("no seed gives a 200-node graph");
}

HeteroGraph graph_from(const World& w) { return build_graph(w.deliveries, w.pois, w.tree); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

Tensor graph_encode_value(const Model& m, const Tensor& h, const SampleFeatures& f) {
    ad::Tape tape;
    nn::Binder b(tape, m.params(), nullptr);
    const ad::Var x = tape.constant(h);
    return tape.value(nn::graph_encode(b, m.params(), m.config(), x, f));
}

// Small generic model config for structural checks.
ModelConfig toy_config(const Vocab& vocab, const AdminTree& tree, int d, int heads) {
    ModelConfig c;
    c.d_model = d;
    c.n_heads_text = heads;
    c.n_heads_graph = heads;
    c.n_layers_text = 1;
    c.n_layers_graph = 1;
    c.n_layers_pre = 1;
    return fit_model_config(c, vocab, tree);
}

void jitter(ModelParams& p, Rng& rng, double sd) {
    for_each_tensor(p, [&](const std::string&, Tensor& t) {
        for (double& v : t.data) v += rng.normal() * sd;
    });
}

std::vector<NormalizedAddress> all_addresses(const World& w) {
    std::vector<NormalizedAddress> out;
    for (const auto& p : w.pois.records()) out.insert(out.end(), p.addresses.begin(), p.addresses.end());
    return out;
}

}  // namespace

CriterionResult gradient_oracle() {
    Timer timer;
    CriterionResult r{1, "gradient oracle", false, "", 0.0};
    WorldConfig wc;
    wc.seed = 5;
    wc.n_aois = 4;
    wc.n_couriers = 2;
    wc.deliveries_per_courier = 8;
    SampleConfig sc;
    sc.k = 2;
    sc.seed = 3;
    const PretrainCorpus c = build_corpus(wc, sc, 8, 64);
    std::size_t pick = c.samples.size();
    for (std::size_t i = 0; i < c.samples.size(); ++i)
        if (c.samples[i].size() == 2) {
            pick = i;
            break;
        }
    if (pick == c.samples.size()) {
        r.detail = "no 2-node sample in the toy corpus";
        return r;
    }
    ModelConfig cfg = toy_config(c.vocab, c.world.tree, 8, 2);
    Model model = Model::init(cfg, 17);
    Rng rng(99);
    jitter(model.params(), rng, 0.05);

    const HtcLabelSpace space(c.world.tree);
    Example ex = make_example(c.pretrain[pick], c.features[pick], space);
    for (auto& node : ex.nodes) {
        // Guarantee MLM targets on every node, including one [MASK] input.
        node.mlm_targets.assign(node.input_tokens.size(), kIgnoreTarget);
        const std::size_t last = node.input_tokens.size() - 1;
        node.mlm_targets[1] = node.input_tokens[1];
        node.mlm_targets[last] = node.input_tokens[last];
        node.input_tokens[last] = kMaskToken;
        node.finetune_geo.resize(static_cast<std::size_t>(cfg.finetune_geo_chars));
        for (int& v : node.finetune_geo) v = static_cast<int>(rng.index(3));
    }
    const TaskWeights w{1.0, 0.8, 1.2, 0.5, 0.7};
    const std::vector<Example> batch{ex};
    const GradCheckReport g = gradient_check(model, batch, w, 1e-5);
    const double secs = timer.seconds();
    r.pass = g.max_rel < 1e-6 && secs < 60.0;
    r.detail = std::to_string(g.per_tensor.size()) + " tensors, max rel err " + fmt(g.max_rel) + " (" + g.worst + "), " +
               fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult sampler_oracle() {
    Timer timer;
    CriterionResult r{2, "sampler oracle", false, "", 0.0};
    const World w = generate_world(graph_world());
    const HeteroGraph g = graph_from(w);
    Failures f;
    SampleConfig sc;
    sc.k = 6;
    sc.seed = 11;
    const auto samples = sample_corpus(g, 1000, sc);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::set<NodeId> uniq(s.node_ids.begin(), s.node_ids.end());
        if (uniq.size() != s.node_ids.size()) f.add("sample " + std::to_string(i) + " repeats a node");
        const auto comp = bfs_component(g, s.node_ids.front());
        if (s.size() != std::min<std::size_t>(static_cast<std::size_t>(sc.k), comp.size()))
            f.add("sample " + std::to_string(i) + " has the wrong size");
        if (s.induced_edges != recheck_edges(g, s.node_ids)) f.add("sample " + std::to_string(i) + " induced edges differ");
        for (NodeId v : s.node_ids)
            if (!comp.count(v)) f.add("sample " + std::to_string(i) + " leaves the base component");
    }
    // k beyond the component: the sampler must return exactly the component.
    SampleConfig big = sc;
    big.k = static_cast<int>(g.num_nodes()) + 25;
    std::size_t full_runs = 0;
    for (NodeId base = 0; base < g.num_nodes(); base += 2, ++full_runs) {
        big.seed = base;
        const auto s = sample(g, base, big);
        const std::set<NodeId> got(s.node_ids.begin(), s.node_ids.end());
        if (got != bfs_component(g, base)) f.add("full-component sample from " + std::to_string(base) + " differs");
    }
    // Disconnected graph: a path of 3, a star of 4 and an isolated node.
    HeteroGraph d;
    for (int i = 0; i < 8; ++i) d.add_node(AddressNode{});
    d.add_edge(0, 1, EdgeCode::kDeliveryRoute);
    d.add_edge(1, 2, EdgeCode::kAoiColocate);
    for (NodeId leaf : {4u, 5u, 6u}) d.add_edge(3, leaf, EdgeCode::kAlias);
    SampleConfig dk;
    dk.k = 10;
    for (NodeId base = 0; base < d.num_nodes(); ++base)
        for (std::uint64_t seed = 0; seed < 20; ++seed, ++full_runs) {
            dk.seed = seed;
            const auto s = sample(d, base, dk);
            const std::set<NodeId> got(s.node_ids.begin(), s.node_ids.end());
            if (got != bfs_component(d, base)) f.add("disconnected graph: base " + std::to_string(base) + " differs");
        }
    const double secs = timer.seconds();
    r.pass = f.count == 0 && g.num_nodes() == 200 && secs < 30.0;
    r.detail = std::to_string(g.num_nodes()) + "-node graph, 1000 samples, " + std::to_string(full_runs) +
               " full-component runs, " + (f.count ? f.summary() : "no mismatches") + ", " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult shortest_path_oracle() {
    Timer timer;
    CriterionResult r{3, "shortest-path oracle", false, "", 0.0};
    const World w = generate_world(graph_world());
    const HeteroGraph g = graph_from(w);
    SampleConfig sc;
    sc.k = 8;
    sc.seed = 13;
    sc.p = 0.5;
    const auto samples = sample_corpus(g, 500, sc);
    Failures f;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.size() > 8) f.add("sample " + std::to_string(i) + " exceeds 8 nodes");
        const SampleFeatures feat = featurize(g, s);
        const auto dist = floyd_warshall(s);
        if (feat.dist != dist) f.add("sample " + std::to_string(i) + " dist differs from Floyd-Warshall");
        if (feat.route_types != replay_routes(s, dist)) f.add("sample " + std::to_string(i) + " routes differ from replay");
        const int n = feat.n;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b, ++pairs) {
                int prefix = 0;
                while (prefix < feat.path_slots() && feat.route(a, b, prefix) != 0) ++prefix;
                int nonzero = 0;
                for (int k = 0; k < feat.path_slots(); ++k) nonzero += feat.route(a, b, k) != 0;
                const int want = dist[static_cast<std::size_t>(a * n + b)] == n ? 0 : dist[static_cast<std::size_t>(a * n + b)];
                if (prefix != want || nonzero != want)
                    f.add("sample " + std::to_string(i) + " pair (" + std::to_string(a) + "," + std::to_string(b) + ") prefix count");
            }
    }
    const double secs = timer.seconds();
    r.pass = f.count == 0;
    r.detail = "500 samples, " + std::to_string(pairs) + " pairs, " + (f.count ? f.summary() : "no mismatches") + ", " +
               fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult geocode_bijection() {
    Timer timer;
    CriterionResult r{4, "geocode bijection", false, "", 0.0};
    Failures f;
    std::size_t exhaustive = 0;
    for (int face = 0; face < 6; ++face)
        for (int level = 1; level <= 3; ++level)
            for (std::uint32_t code = 0; code < (1u << (2 * level)); ++code, ++exhaustive) {
                CellId c{face, level, {}};
                for (int k = level - 1; k >= 0; --k) c.path.push_back(static_cast<std::uint8_t>((code >> (2 * k)) & 3u));
                const LabelChars l = encode_2lt3c(c);
                if (l.chars.size() != static_cast<std::size_t>(label_length(level))) f.add("label length at level " + std::to_string(level));
                if (!(decode_2lt3c(l, face) == c)) f.add("roundtrip failed at level " + std::to_string(level));
            }
    Rng rng(4242);
    for (int level : {kPretrainCellLevel, kFinetuneCellLevel})
        for (int i = 0; i < 10000; ++i) {
            CellId c{static_cast<int>(rng.index(6)), level, {}};
            for (int k = 0; k < level; ++k) c.path.push_back(static_cast<std::uint8_t>(rng.index(4)));
            const LabelChars l = encode_2lt3c(c);
            if (l.chars.size() != static_cast<std::size_t>(label_length(level))) f.add("label length at level " + std::to_string(level));
            if (!(decode_2lt3c(l, c.face) == c)) f.add("random roundtrip failed at level " + std::to_string(level));
        }
    const bool lengths = label_length(kPretrainCellLevel) == 27 && label_length(kFinetuneCellLevel) == 33;
    // Centers of level-18 cells versus their source points, anywhere on the globe.
    const double bound_m = 2.0 * std::sqrt(1200.0) * std::numbers::sqrt2 / 2.0;
    double worst_m = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double lat = std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / std::numbers::pi;
        const double lon = rng.uniform(-180.0, 180.0);
        const CellId c = cell_from_latlon(lat, lon, kPretrainCellLevel);
        const LatLon center = cell_center(decode_2lt3c(encode_2lt3c(c), c.face));
        worst_m = std::max(worst_m, 1000.0 * haversine_km(center, {lat, lon}));
    }
    const double secs = timer.seconds();
    r.pass = f.count == 0 && lengths && worst_m <= bound_m;
    r.detail = std::to_string(exhaustive) + " exhaustive + 20000 random roundtrips, lengths 27/33 " +
               (lengths ? "ok" : "WRONG") + ", worst center offset " + fmt(worst_m) + " m (bound " + fmt(bound_m) + " m)" +
               (f.count ? ", " + f.summary() : "") + ", " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult masking_statistics() {
    Timer timer;
    CriterionResult r{5, "masking statistics", false, "", 0.0};
    WorldConfig wc;
    wc.seed = 31;
    const World w = generate_world(wc);
    const HeteroGraph g = graph_from(w);
    const Vocab vocab = build_vocab(g, w.tree);
    std::vector<TokenizedNode> toks;
    for (const auto& a : all_addresses(w)) toks.push_back(tokenize(a, vocab));
    std::vector<std::size_t> unit_counts;
    for (const auto& t : toks) unit_counts.push_back(mlm_units(t, vocab).size());
    std::size_t units = 0, admin_units = 0, selected = 0, mask = 0, replace = 0, keep = 0, fallback = 0;
    Rng rng(2718);
    for (std::size_t round = 0; units < 100000; ++round) {
        const std::size_t i = round % toks.size();
        const MlmExample ex = make_mlm(toks[i], vocab, rng);
        const auto us = mlm_units(toks[i], vocab);
        units += us.size();
        for (const auto& u : us) admin_units += u.unit_level <= kAdminLevels;
        for (const auto& a : ex.corruption_log) {
            ++selected;
            if (a.fallback) {
                ++replace;
                ++fallback;
            } else if (a.action == MlmAction::MaskAll) {
                ++mask;
            } else if (a.action == MlmAction::ReplaceSameLevel) {
                ++replace;
            } else {
                ++keep;
            }
        }
    }
    const double rate = static_cast<double>(selected) / static_cast<double>(units);
    const double pm = static_cast<double>(mask) / static_cast<double>(selected);
    const double pr = static_cast<double>(replace) / static_cast<double>(selected);
    const double pk = static_cast<double>(keep) / static_cast<double>(selected);
    const double secs = timer.seconds();
    r.pass = std::abs(rate - 0.15) <= 0.01 && std::abs(pm - 0.8) <= 0.01 && std::abs(pr - 0.1) <= 0.01 &&
             std::abs(pk - 0.1) <= 0.01;
    r.detail = std::to_string(units) + " units (" + std::to_string(admin_units) + " admin), selection " + fmt(rate) +
               ", mask/replace/keep " + fmt(pm) + "/" + fmt(pr) + "/" + fmt(pk) + " (" + std::to_string(fallback) +
               " replace fallbacks), " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult overfit_target() {
    Timer timer;
    CriterionResult r{6, "overfit target", false, "", 0.0};
    WorldConfig wc;
    wc.seed = 7;
    wc.n_aois = 12;
    wc.n_couriers = 4;
    wc.deliveries_per_courier = 30;
    SampleConfig sc;
    sc.k = 6;
    sc.seed = 0;
    const PretrainCorpus c = build_corpus(wc, sc, 50, 64);
    const ModelConfig cfg = fit_model_config(ModelConfig{}, c.vocab, c.world.tree);
    Model model = Model::init(cfg, 1);
    PretrainOptions po;
    po.steps = 2000;
    po.batch_size = 4;
    po.lr = 4e-3;
    po.linear_decay = true;
    po.seed = 7;
    pretrain(model, c.pretrain, c.features, c.vocab, c.world.tree, po);
    const HtcLabelSpace space(c.world.tree);
    std::vector<Example> eval;
    for (const auto& s : c.pretrain) eval.push_back(make_example(s, c.features[s.features_index], space));
    const TrainingMetrics m = measure_pretraining(model, eval, space);
    const double secs = timer.seconds();
    r.pass = m.mlm_accuracy >= 0.95 && m.geo_exact >= 0.90 && m.htc_exact >= 0.95 && secs < 900.0;
    r.detail = "50 samples, " + std::to_string(m.nodes) + " nodes, d_model " + std::to_string(cfg.d_model) + ", " +
               std::to_string(po.steps) + " steps: MLM acc " + fmt(m.mlm_accuracy) + " (" +
               std::to_string(m.mlm_targets) + " targets), geo exact " + fmt(m.geo_exact) + ", HTC exact " +
               fmt(m.htc_exact) + ", " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult downstream_pipeline() {
    Timer timer;
    CriterionResult r{7, "downstream pipeline", false, "", 0.0};
    Failures f;
    WorldConfig wc;
    wc.seed = 77;
    const World w = generate_world(wc);

    // Gold labels at both levels.
    const auto cases = geo_cases(w);
    const double one[] = {1.0};
    for (int level : {kPretrainCellLevel, kFinetuneCellLevel}) {
        const auto gold = eval_geocoding(cases, [level](const GeoCase& c) {
            const CellId cell = cell_from_latlon(c.truth, level);
            return GeoPrediction{encode_2lt3c(cell), cell.face};
        }, one);
        if (gold.acc_at_km.at(1.0) != 1.0) f.add("gold geocoding Acc@1 = " + fmt(gold.acc_at_km.at(1.0)));
    }

    // Constant cell over points spread uniformly (by area) across a ~5 km box.
    const BoundingBox box{30.225, 30.275, 120.125, 120.175};
    Rng rng(606);
    std::vector<GeoCase> spread;
    const double s0 = std::sin(box.lat_min * std::numbers::pi / 180.0), s1 = std::sin(box.lat_max * std::numbers::pi / 180.0);
    for (int i = 0; i < 20000; ++i)
        spread.push_back({NormalizedAddress{}, {std::asin(rng.uniform(s0, s1)) * 180.0 / std::numbers::pi,
                                                rng.uniform(box.lon_min, box.lon_max)}});
    const CellId fixed = cell_from_latlon(30.25, 120.15, kPretrainCellLevel);
    const auto constant = eval_geocoding(spread, [&](const GeoCase&) { return GeoPrediction{encode_2lt3c(fixed), fixed.face}; }, one);
    const double expected = disk_box_fraction(cell_center(fixed), 1.0, box);
    const double got = constant.acc_at_km.at(1.0);
    if (std::abs(got - expected) > 0.03) f.add("constant-cell accuracy " + fmt(got) + " vs " + fmt(expected));

    // AEP with the gold oracle, and a constant predictor against label frequency.
    const auto addrs = all_addresses(w);
    Rng arng(808);
    const auto aep = make_aep_cases(addrs, w.tree, arng);
    const auto gold_aep = eval_aep(aep, [](const AepCase& c) { return c.gold; });
    if (gold_aep.accuracy != 1.0) f.add("AEP gold oracle " + fmt(gold_aep.accuracy));
    const RegionId most = aep.front().gold;
    std::size_t freq = 0;
    for (const auto& c : aep) freq += c.gold == most;
    const auto const_aep = eval_aep(aep, [most](const AepCase&) { return most; });
    if (const_aep.correct != freq) f.add("AEP constant predictor disagrees with label frequency");

    // AET against the span scorer: noisy gold labels and an untrained model.
    const HeteroGraph g = graph_from(w);
    const Vocab vocab = build_vocab(g, w.tree);
    const Model model = Model::init(toy_config(vocab, w.tree, 16, 2), 3);
    const AetPredictor untrained = model_aet_predictor(model);
    std::size_t disagreements = 0, entities = 0;
    const std::size_t n_cases = 5000;
    for (std::size_t i = 0; i < n_cases; ++i) {
        const AetCase c{tokenize(addrs[i % addrs.size()], vocab)};
        const auto gold = token_entity_labels(c.tokens);
        std::vector<int> pred;
        if (i % 10 == 0) {
            pred = untrained(c);
        } else {
            Rng noise(derive_seed(909, i));
            pred = gold;
            for (std::size_t k = 1; k < pred.size(); ++k)
                if (noise.bernoulli(0.08)) pred[k] = static_cast<int>(noise.index(kEntityLabels));
        }
        const AetCase one_case = c;
        const auto res = eval_aet(std::span<const AetCase>(&one_case, 1), [&](const AetCase&) { return pred; });
        const auto oracle = span_score(gold, pred);
        const auto oracle_correct = static_cast<std::size_t>(std::count(oracle.begin(), oracle.end(), true));
        entities += oracle.size();
        disagreements += res.total != oracle.size() || res.correct != oracle_correct;
    }
    if (disagreements) f.add(std::to_string(disagreements) + " AET disagreements");
    const double secs = timer.seconds();
    r.pass = f.count == 0;
    r.detail = "gold Acc@1km 1.0 at levels 18/22, constant-cell " + fmt(got) + " vs area fraction " + fmt(expected) +
               ", AEP gold " + fmt(gold_aep.accuracy) + " on " + std::to_string(aep.size()) + ", AET " +
               std::to_string(n_cases) + " addresses / " + std::to_string(entities) + " entities, " +
               std::to_string(disagreements) + " disagreements" + (f.count ? ", " + f.summary() : "") + ", " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

CriterionResult structural_invariants() {
    Timer timer;
    CriterionResult r{8, "structural invariants", false, "", 0.0};
    Failures f;
    const World w = generate_world(graph_world());
    const HeteroGraph g = graph_from(w);

    // Symmetry, no self-loops, no empty codes.
    for (NodeId a = 0; a < g.num_nodes(); ++a)
        for (const auto& [b, code] : g.neighbors(a)) {
            if (a == b || code.bits == 0) f.add("bad edge at " + std::to_string(a));
            if (!(g.edge(b, a) == code)) f.add("asymmetric edge " + std::to_string(a) + "-" + std::to_string(b));
        }

    // Delivery Route + Alias between two POIs in different AOIs gives code 5 ("101").
    {
        std::vector<PoiRecord> recs(w.pois.records().begin(), w.pois.records().end());
        std::size_t other = 1;
        while (recs[other].aoi_id == recs[0].aoi_id) ++other;
        std::vector<PoiRecord> two{recs[0], recs[other]};
        two[0].alias_of.reset();
        two[1].alias_of = two[0].poi_id;
        const PoiTable table(two);
        std::vector<DeliveryRecord> del(2);
        del[0].poi_id = two[0].poi_id;
        del[1].poi_id = two[1].poi_id;
        del[1].step_index = 1;
        const HeteroGraph tiny = build_graph(del, table, w.tree);
        const auto bits = tiny.edge(0, 1).bits;
        std::string binary;
        for (int k = 2; k >= 0; --k) binary += ((bits >> k) & 1u) ? '1' : '0';
        if (bits != 5 || binary != "101") f.add("route+alias edge code " + std::to_string(bits));
    }

    // Permutation equivariance and zero-bias reduction of graph_encode.
    const Vocab vocab = build_vocab(g, w.tree);
    ModelConfig cfg = toy_config(vocab, w.tree, 16, 4);
    cfg.n_layers_graph = 2;
    Model model = Model::init(cfg, 21);
    Rng rng(1234);
    jitter(model.params(), rng, 0.3);
    SampleConfig sc;
    sc.k = 6;
    sc.seed = 5;
    double worst_perm = 0.0, worst_zero = 0.0, worst_ref = 0.0;
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const SampledSubgraph s = sample_at(g, trial, sc);
        const SampleFeatures feat = featurize(g, s);
        const auto n = static_cast<std::size_t>(feat.n);
        const auto d = static_cast<std::size_t>(cfg.d_model);
        Tensor h({n, d});
        for (double& v : h.data) v = rng.normal();
        const Tensor out = graph_encode_value(model, h, feat);
        worst_ref = std::max(worst_ref, max_abs_diff(out, reference_graph_encode(model.params(), cfg, h, &feat)));

        std::vector<std::size_t> pi(n);
        for (std::size_t i = 0; i < n; ++i) pi[i] = i;
        rng.shuffle(pi);
        SampleFeatures pf = feat;
        Tensor ph({n, d});
        const auto slots = static_cast<std::size_t>(feat.path_slots());
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(h.row(pi[i]), d, ph.row(i));
            pf.degrees[i] = feat.degrees[pi[i]];
            pf.positions[i] = feat.positions[pi[i]];
            for (std::size_t j = 0; j < n; ++j) {
                pf.dist[i * n + j] = feat.dist[pi[i] * n + pi[j]];
                for (std::size_t k = 0; k < slots; ++k)
                    pf.route_types[(i * n + j) * slots + k] = feat.route_types[(pi[i] * n + pi[j]) * slots + k];
            }
        }
        const Tensor pout = graph_encode_value(model, ph, pf);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) worst_perm = std::max(worst_perm, std::abs(pout(i, c) - out(pi[i], c)));

        Model zeroed = model;
        std::fill(zeroed.params().dist_bias.data.begin(), zeroed.params().dist_bias.data.end(), 0.0);
        std::fill(zeroed.params().route_bias.data.begin(), zeroed.params().route_bias.data.end(), 0.0);
        worst_zero = std::max(worst_zero, max_abs_diff(graph_encode_value(zeroed, h, feat),
                                                       reference_graph_encode(zeroed.params(), cfg, h, nullptr)));
    }
    if (worst_perm > 1e-10) f.add("permutation equivariance off by " + fmt(worst_perm));
    if (worst_zero > 1e-12) f.add("zero-bias reduction off by " + fmt(worst_zero));
    if (worst_ref > 1e-12) f.add("biased reference off by " + fmt(worst_ref));

    // Checkpoint roundtrip, bit-exact, and a byte-identical re-save.
    const fs::path tmp = fs::temp_directory_path() / ("geoaddr-check-" + std::to_string(derive_seed(std::random_device{}(), 1)));
    try {
        model.save(tmp / "a");
        const Model back = Model::load(tmp / "a");
        if (!(back.params() == model.params()) || !(back.config() == model.config())) f.add("checkpoint roundtrip differs");
        back.save(tmp / "b");
        if (checkpoint_hash(tmp / "a") != checkpoint_hash(tmp / "b")) f.add("checkpoint re-save is not byte-identical");
    } catch (const std::exception& e) {
        f.add(std::string("checkpoint: ") + e.what());
    }
    std::error_code ec;
    fs::remove_all(tmp, ec);

    const double secs = timer.seconds();
    r.pass = f.count == 0;
    r.detail = "symmetry ok over " + std::to_string(g.num_edges()) + " edges, route+alias = 101, permutation " +
               fmt(worst_perm) + ", zero-bias " + fmt(worst_zero) + ", reference " + fmt(worst_ref) +
               ", checkpoint bit-exact" + (f.count ? ", " + f.summary() : "") + ", " + fmt(secs) + " s";
    r.seconds = secs;
    return r;
}

std::vector<CriterionResult> run_all(bool include_overfit) {
    std::vector<std::function<CriterionResult()>> all{gradient_oracle,    sampler_oracle,      shortest_path_oracle,
                                                      geocode_bijection,  masking_statistics,  overfit_target,
                                                      downstream_pipeline, structural_invariants};
    std::vector<CriterionResult> out;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (!include_overfit && i == 5) continue;
        try {
            out.push_back(all[i]());
        } catch (const std::exception& e) {
            out.push_back({static_cast<int>(i + 1), "criterion " + std::to_string(i + 1), false, e.what(), 0.0});
        }
    }
    return out;
}

}  // namespace geoaddr::checks
