#include "geoaddr/model.hpp"

#include <cmath>
#include <limits>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr {

using nlohmann::json;

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    need(d_model > 0, "d_model must be positive");
    need(n_heads_text > 0 && d_model % n_heads_text == 0, "d_model must be divisible by n_heads_text");
    need(n_heads_graph > 0 && d_model % n_heads_graph == 0, "d_model must be divisible by n_heads_graph");
    need(n_layers_text >= 0 && n_layers_graph >= 0 && n_layers_pre >= 0, "layer counts must be non-negative");
    need(d_ff >= 0, "d_ff must be non-negative");
    need(max_seq_len >= 1, "max_seq_len must be at least 1");
    need(vocab_size > kUnkToken, "vocab_size must cover the special tokens");
    need(max_degree >= 0 && max_nodes >= 1 && max_dist >= 0, "structural table sizes must be non-negative");
    need(geo_chars > 0 && finetune_geo_chars > 0, "geo label lengths must be positive");
    for (int s : htc_level_sizes) need(s > 0, "every admin level needs at least one region");
    need(entity_labels > 0, "entity_labels must be positive");
    need(layer_norm_eps > 0.0, "layer_norm_eps must be positive");
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"d_model", c.d_model},
             {"n_heads_text", c.n_heads_text},
             {"n_heads_graph", c.n_heads_graph},
             {"n_layers_text", c.n_layers_text},
             {"n_layers_graph", c.n_layers_graph},
             {"n_layers_pre", c.n_layers_pre},
             {"d_ff", c.d_ff},
             {"max_seq_len", c.max_seq_len},
             {"vocab_size", c.vocab_size},
             {"max_degree", c.max_degree},
             {"max_nodes", c.max_nodes},
             {"max_dist", c.max_dist},
             {"geo_chars", c.geo_chars},
             {"finetune_geo_chars", c.finetune_geo_chars},
             {"htc_level_sizes", c.htc_level_sizes},
             {"entity_labels", c.entity_labels},
             {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.d_model = j.value("d_model", d.d_model);
    c.n_heads_text = j.value("n_heads_text", d.n_heads_text);
    c.n_heads_graph = j.value("n_heads_graph", d.n_heads_graph);
    c.n_layers_text = j.value("n_layers_text", d.n_layers_text);
    c.n_layers_graph = j.value("n_layers_graph", d.n_layers_graph);
    c.n_layers_pre = j.value("n_layers_pre", d.n_layers_pre);
    c.d_ff = j.value("d_ff", d.d_ff);
    c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.max_degree = j.value("max_degree", d.max_degree);
    c.max_nodes = j.value("max_nodes", d.max_nodes);
    c.max_dist = j.value("max_dist", d.max_dist);
    c.geo_chars = j.value("geo_chars", d.geo_chars);
    c.finetune_geo_chars = j.value("finetune_geo_chars", d.finetune_geo_chars);
    c.htc_level_sizes = j.value("htc_level_sizes", d.htc_level_sizes);
    c.entity_labels = j.value("entity_labels", d.entity_labels);
    c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

// ---------------------------------------------------------------- parameters

namespace {

template <class P, class T, class Fn>
void visit_params(P& p, Fn&& fn) {
    auto lin = [&](const std::string& n, auto& l) {
        fn(n + ".w", l.w);
        fn(n + ".b", l.b);
    };
    auto ln = [&](const std::string& n, auto& l) {
        fn(n + ".gamma", l.gamma);
        fn(n + ".beta", l.beta);
    };
    auto enc = [&](const std::string& n, auto& e) {
        ln(n + ".ln1", e.ln1);
        lin(n + ".q", e.q);
        lin(n + ".k", e.k);
        lin(n + ".v", e.v);
        lin(n + ".o", e.o);
        ln(n + ".ln2", e.ln2);
        lin(n + ".ff1", e.ff1);
        lin(n + ".ff2", e.ff2);
    };
    fn("token_emb", p.token_emb);
    fn("text_pos_emb", p.text_pos_emb);
    for (std::size_t i = 0; i < p.text_layers.size(); ++i) enc("text." + std::to_string(i), p.text_layers[i]);
    ln("text_ln", p.text_ln);
    fn("degree_emb", p.degree_emb);
    fn("node_pos_emb", p.node_pos_emb);
    fn("dist_bias", p.dist_bias);
    fn("route_bias", p.route_bias);
    for (std::size_t i = 0; i < p.graph_layers.size(); ++i) {
        auto& g = p.graph_layers[i];
        const std::string n = "graph." + std::to_string(i);
        ln(n + ".ln1", g.ln1);
        fn(n + ".wq", g.wq);
        fn(n + ".wk", g.wk);
        fn(n + ".wv", g.wv);
        ln(n + ".ln2", g.ln2);
        lin(n + ".fc1", g.fc1);
        lin(n + ".fc2", g.fc2);
    }
    for (std::size_t i = 0; i < p.pre_layers.size(); ++i) enc("pre." + std::to_string(i), p.pre_layers[i]);
    ln("head_ln", p.head_ln);
    lin("mlm", p.mlm);
    lin("geo", p.geo);
    for (std::size_t l = 0; l < p.htc.size(); ++l) lin("htc." + std::to_string(l + 1), p.htc[l]);
    lin("aet_hidden", p.aet_hidden);
    lin("aet_out", p.aet_out);
    lin("geo_finetune", p.geo_finetune);
}

}  // namespace

void for_each_tensor(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_params<ModelParams, Tensor>(p, fn);
}

void for_each_tensor(const ModelParams& p, const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_params<const ModelParams, const Tensor>(p, fn);
}

bool ModelParams::operator==(const ModelParams& o) const {
    std::vector<const Tensor*> a, b;
    for_each_tensor(*this, [&](const std::string&, const Tensor& t) { a.push_back(&t); });
    for_each_tensor(o, [&](const std::string&, const Tensor& t) { b.push_back(&t); });
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(*a[i] == *b[i])) return false;
    return true;
}

std::size_t parameter_count(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

namespace {

Linear make_linear(std::size_t in, std::size_t out) { return {Tensor({in, out}), Tensor({out})}; }
LayerNormParams make_ln(std::size_t d) { return {Tensor({d}, 1.0), Tensor({d}, 0.0)}; }

EncoderLayer make_encoder(std::size_t d, std::size_t ff) {
    return {make_ln(d), make_linear(d, d), make_linear(d, d), make_linear(d, d), make_linear(d, d),
            make_ln(d), make_linear(d, ff), make_linear(ff, d)};
}

// Zero-valued parameters with the shapes implied by the config.
ModelParams shaped_params(const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto ff = static_cast<std::size_t>(cfg.ff_width());
    const auto hg = static_cast<std::size_t>(cfg.n_heads_graph);
    ModelParams p;
    p.token_emb = Tensor({static_cast<std::size_t>(cfg.vocab_size), d});
    p.text_pos_emb = Tensor({static_cast<std::size_t>(cfg.max_seq_len), d});
    for (int i = 0; i < cfg.n_layers_text; ++i) p.text_layers.push_back(make_encoder(d, ff));
    p.text_ln = make_ln(d);
    p.degree_emb = Tensor({static_cast<std::size_t>(cfg.max_degree) + 1, d});
    p.node_pos_emb = Tensor({static_cast<std::size_t>(cfg.max_nodes) + 1, d});
    p.dist_bias = Tensor({static_cast<std::size_t>(cfg.max_dist) + 2, hg});
    p.route_bias = Tensor({static_cast<std::size_t>(EdgeCode::kNumCodes), hg});
    for (int i = 0; i < cfg.n_layers_graph; ++i)
        p.graph_layers.push_back(
            {make_ln(d), Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), make_ln(d), make_linear(d, ff), make_linear(ff, d)});
    for (int i = 0; i < cfg.n_layers_pre; ++i) p.pre_layers.push_back(make_encoder(d, ff));
    p.head_ln = make_ln(d);
    p.mlm = make_linear(d, static_cast<std::size_t>(cfg.vocab_size));
    p.geo = make_linear(d, static_cast<std::size_t>(cfg.geo_chars) * 3);
    for (int l = 0; l < kAdminLevels; ++l)
        p.htc[static_cast<std::size_t>(l)] = make_linear(d, static_cast<std::size_t>(cfg.htc_level_sizes[static_cast<std::size_t>(l)]));
    p.aet_hidden = make_linear(d, d);
    p.aet_out = make_linear(d, static_cast<std::size_t>(cfg.entity_labels));
    p.geo_finetune = make_linear(d, static_cast<std::size_t>(cfg.finetune_geo_chars) * 3);
    return p;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p = shaped_params(cfg);
    Rng rng(seed);
    for_each_tensor(p, [&](const std::string& name, Tensor& t) {
        if (ends_with(name, ".gamma")) return;  // ones
        if (ends_with(name, ".beta") || ends_with(name, ".b")) return;  // zeros
        double sd = 0.02;
        if (ends_with(name, "_emb")) sd = 0.1;
        else if (t.shape.size() == 2 && name != "dist_bias" && name != "route_bias")
            sd = 1.0 / std::sqrt(static_cast<double>(t.shape[0]));
        for (double& v : t.data) v = rng.normal() * sd;
    });
    return p;
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for_each_tensor(z, [](const std::string&, Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
    return z;
}

void validate_shapes(const ModelParams& p, const ModelConfig& cfg) {
    const ModelParams ref = shaped_params(cfg);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> want, got;
    for_each_tensor(ref, [&](const std::string& n, const Tensor& t) { want.emplace_back(n, t.shape); });
    for_each_tensor(p, [&](const std::string& n, const Tensor& t) {
        if (t.data.size() != Tensor::numel(t.shape)) throw FormatError(n + ": data length does not match shape");
        got.emplace_back(n, t.shape);
    });
    if (want.size() != got.size()) throw FormatError("parameter tensor count does not match config");
    for (std::size_t i = 0; i < want.size(); ++i)
        if (want[i] != got[i]) throw FormatError(got[i].first + ": shape does not match config");
}

// ---------------------------------------------------------------- HTC labels

HtcLabelSpace::HtcLabelSpace(const AdminTree& tree) {
    for (int l = 1; l <= kAdminLevels; ++l) {
        auto& rs = regions_[static_cast<std::size_t>(l - 1)];
        rs = tree.regions_at_level(l);
        for (std::size_t c = 0; c < rs.size(); ++c) {
            index_[rs[c]] = {l, static_cast<int>(c)};
            parent_[rs[c]] = tree.parent_or_root(rs[c]);
        }
    }
    for (std::size_t c = 0; c < regions_[0].size(); ++c) all_level1_.push_back(static_cast<int>(c));
    for (int l = 2; l <= kAdminLevels; ++l) {
        auto& ch = children_[static_cast<std::size_t>(l - 1)];
        ch.assign(regions_[static_cast<std::size_t>(l - 2)].size(), {});
        const auto& rs = regions_[static_cast<std::size_t>(l - 1)];
        for (std::size_t c = 0; c < rs.size(); ++c) {
            const auto it = index_.find(parent_.at(rs[c]));
            if (it == index_.end() || it->second.first != l - 1)
                throw InconsistentHierarchy("region " + std::to_string(rs[c]) + " has no parent one level up");
            ch[static_cast<std::size_t>(it->second.second)].push_back(static_cast<int>(c));
        }
    }
}

std::array<int, kAdminLevels> HtcLabelSpace::level_sizes() const {
    std::array<int, kAdminLevels> s{};
    for (std::size_t l = 0; l < s.size(); ++l) s[l] = static_cast<int>(regions_[l].size());
    return s;
}

int HtcLabelSpace::class_of(RegionId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InconsistentHierarchy("unknown region " + std::to_string(id));
    return it->second.second;
}

int HtcLabelSpace::level_of(RegionId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InconsistentHierarchy("unknown region " + std::to_string(id));
    return it->second.first;
}

RegionId HtcLabelSpace::region(int level, int cls) const {
    return regions_.at(static_cast<std::size_t>(level - 1)).at(static_cast<std::size_t>(cls));
}

const std::vector<int>& HtcLabelSpace::candidates(int level, int parent_cls) const {
    if (level == 1) return all_level1_;
    return children_.at(static_cast<std::size_t>(level - 1)).at(static_cast<std::size_t>(parent_cls));
}

std::vector<int> HtcLabelSpace::candidates_below(RegionId ancestor, int level) const {
    std::vector<int> out;
    const auto& rs = regions_.at(static_cast<std::size_t>(level - 1));
    for (std::size_t c = 0; c < rs.size(); ++c) {
        RegionId r = rs[c];
        bool below = ancestor == kRootRegion;
        while (!below && r != kRootRegion) {
            r = parent_.at(r);
            below = r == ancestor;
        }
        if (below || rs[c] == ancestor) out.push_back(static_cast<int>(c));
    }
    return out;
}

// ---------------------------------------------------------------- network

namespace nn {

Binder::Binder(ad::Tape& tape, const ModelParams& params, ModelParams* grads) : tape_(tape) {
    if (!grads) return;
    std::vector<const Tensor*> ps;
    std::vector<Tensor*> gs;
    for_each_tensor(params, [&](const std::string&, const Tensor& t) { ps.push_back(&t); });
    for_each_tensor(*grads, [&](const std::string&, Tensor& t) { gs.push_back(&t); });
    if (ps.size() != gs.size()) throw DomainError("gradient buffer does not match the parameters");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (gs[i]->size() != ps[i]->size()) throw DomainError("gradient buffer does not match the parameters");
        sinks_[ps[i]] = gs[i];
    }
}

ad::Var Binder::operator()(const Tensor& t) {
    const auto it = cache_.find(&t);
    if (it != cache_.end()) return it->second;
    const auto s = sinks_.find(&t);
    const ad::Var v = tape_.param(t, s == sinks_.end() ? nullptr : s->second);
    cache_[&t] = v;
    return v;
}

ad::Var linear(Binder& b, ad::Var x, const Linear& l) {
    auto& t = b.tape();
    return ad::add_bias(t, ad::matmul(t, x, b(l.w)), b(l.b));
}

namespace {

ad::Var norm(Binder& b, ad::Var x, const LayerNormParams& ln, double eps) {
    return ad::layer_norm(b.tape(), x, b(ln.gamma), b(ln.beta), eps);
}

}  // namespace

ad::Var encoder_layer(Binder& b, ad::Var x, const EncoderLayer& layer, int heads, std::size_t valid, double eps) {
    auto& t = b.tape();
    const ad::Var h = norm(b, x, layer.ln1, eps);
    const ad::Var a = ad::attention(t, linear(b, h, layer.q), linear(b, h, layer.k), linear(b, h, layer.v), heads,
                                    ad::Var{}, valid);
    x = ad::add(t, x, linear(b, a, layer.o));
    const ad::Var h2 = norm(b, x, layer.ln2, eps);
    return ad::add(t, x, linear(b, ad::gelu(t, linear(b, h2, layer.ff1)), layer.ff2));
}

ad::Var encode_text(Binder& b, const ModelParams& p, const ModelConfig& cfg, std::span<const TokenId> tokens,
                    std::size_t valid) {
    if (tokens.empty()) throw DomainError("empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len))
        throw DomainError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len");
    if (valid < 1 || valid > tokens.size()) throw DomainError("valid length out of range");
    std::vector<int> ids, pos;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size)
            throw DomainError("token id " + std::to_string(tokens[i]) + " outside vocabulary");
        ids.push_back(tokens[i]);
        pos.push_back(static_cast<int>(i));
    }
    auto& t = b.tape();
    ad::Var x = ad::add(t, ad::gather_rows(t, b(p.token_emb), ids), ad::gather_rows(t, b(p.text_pos_emb), pos));
    for (const auto& layer : p.text_layers) x = encoder_layer(b, x, layer, cfg.n_heads_text, valid, cfg.layer_norm_eps);
    return norm(b, x, p.text_ln, cfg.layer_norm_eps);
}

ad::Var node_repr(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var h_cls, std::span<const int> degrees,
                  std::span<const int> positions) {
    if (degrees.size() != positions.size()) throw DomainError("degree/position count mismatch");
    std::vector<int> deg, pos;
    for (std::size_t i = 0; i < degrees.size(); ++i) {
        if (degrees[i] < 0) throw DomainError("negative degree");
        if (positions[i] < 0 || positions[i] > cfg.max_nodes) throw DomainError("node position outside table");
        deg.push_back(std::min(degrees[i], cfg.max_degree));
        pos.push_back(positions[i]);
    }
    auto& t = b.tape();
    return ad::add(t, ad::add(t, h_cls, ad::gather_rows(t, b(p.degree_emb), deg)), ad::gather_rows(t, b(p.node_pos_emb), pos));
}

ad::Var structural_bias(Binder& b, const ModelParams& p, const ModelConfig& cfg, const SampleFeatures& f) {
    const auto n = static_cast<std::size_t>(f.n);
    std::vector<int> idx(n * n);
    for (std::size_t q = 0; q < n * n; ++q) {
        const int d = f.dist[q];
        if (d == f.unreachable()) idx[q] = cfg.max_dist + 1;
        else if (d < 0 || d > cfg.max_dist) throw DomainError("distance " + std::to_string(d) + " exceeds max_dist");
        else idx[q] = d;
    }
    auto& t = b.tape();
    const ad::Var e = ad::lookup_bias(t, b(p.dist_bias), std::move(idx), n);
    const ad::Var r = ad::route_bias(t, b(p.route_bias), f.route_types, n, static_cast<std::size_t>(f.path_slots()));
    return ad::add(t, e, r);
}

ad::Var graph_encode(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var h, const SampleFeatures& f) {
    auto& t = b.tape();
    if (t.value(h).rows() != static_cast<std::size_t>(f.n)) throw DomainError("feature size does not match node count");
    const ad::Var bias = structural_bias(b, p, cfg, f);  // shared by every layer
    ad::Var x = h;
    for (const auto& g : p.graph_layers) {
        const ad::Var z = norm(b, x, g.ln1, cfg.layer_norm_eps);
        const ad::Var a = ad::attention(t, ad::matmul(t, z, b(g.wq)), ad::matmul(t, z, b(g.wk)), ad::matmul(t, z, b(g.wv)),
                                        cfg.n_heads_graph, bias, static_cast<std::size_t>(f.n));
        x = ad::add(t, x, a);
        const ad::Var z2 = norm(b, x, g.ln2, cfg.layer_norm_eps);
        x = ad::add(t, x, linear(b, ad::gelu(t, linear(b, z2, g.fc1)), g.fc2));
    }
    return x;
}

ad::Var realign(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var node_row, ad::Var text_rows) {
    auto& t = b.tape();
    ad::Var x = ad::concat_rows(t, node_row, text_rows);
    const std::size_t m = t.value(x).rows();
    for (const auto& layer : p.pre_layers) x = encoder_layer(b, x, layer, cfg.n_heads_text, m, cfg.layer_norm_eps);
    return x;
}

ForwardVars forward(Binder& b, const ModelParams& p, const ModelConfig& cfg, const Example& ex) {
    auto& t = b.tape();
    const auto n = ex.nodes.size();
    if (n == 0) throw DomainError("example has no nodes");
    if (static_cast<std::size_t>(ex.feats.n) != n) throw DomainError("feature size does not match node count");
    ForwardVars fw;
    for (const auto& node : ex.nodes) fw.text.push_back(encode_text(b, p, cfg, node.input_tokens, node.input_tokens.size()));
    fw.h_cls = ad::slice_rows(t, fw.text[0], 0, 1);
    for (std::size_t i = 1; i < n; ++i) fw.h_cls = ad::concat_rows(t, fw.h_cls, ad::slice_rows(t, fw.text[i], 0, 1));
    const ad::Var h = node_repr(b, p, cfg, fw.h_cls, ex.feats.degrees, ex.feats.positions);
    fw.graph_out = graph_encode(b, p, cfg, h, ex.feats);
    ad::Var nodes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t L = t.value(fw.text[i]).rows();
        const ad::Var r = realign(b, p, cfg, ad::slice_rows(t, fw.graph_out, i, i + 1), ad::slice_rows(t, fw.text[i], 1, L));
        fw.realigned.push_back(r);
        const ad::Var row = ad::slice_rows(t, r, 0, 1);
        nodes = i == 0 ? row : ad::concat_rows(t, nodes, row);
        fw.text_final.push_back(norm(b, ad::slice_rows(t, r, 1, L), p.head_ln, cfg.layer_norm_eps));
    }
    fw.node_final = norm(b, nodes, p.head_ln, cfg.layer_norm_eps);
    return fw;
}

ad::Var add_terms(ad::Tape& t, std::span<const ad::Var> parts) {
    std::vector<double> ones(parts.size(), 1.0);
    return ad::sum_scalars(t, parts, ones);
}

void loss_terms(Binder& b, const ModelParams& p, const ModelConfig& cfg, const Example& ex, const ForwardVars& fw,
                const TaskWeights& w, TaskTerms& terms) {
    auto& t = b.tape();
    const auto n = ex.nodes.size();
    auto push = [&](Task task, ad::Var v, std::size_t count) {
        terms.parts[static_cast<std::size_t>(task)].push_back(v);
        terms.counts[static_cast<std::size_t>(task)] += count;
    };

    if (w.mlm != 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& node = ex.nodes[i];
            std::vector<int> rows, targets;
            for (std::size_t k = 1; k < node.mlm_targets.size(); ++k)
                if (node.mlm_targets[k] != kIgnoreTarget) {
                    rows.push_back(static_cast<int>(k - 1));
                    targets.push_back(node.mlm_targets[k]);
                }
            if (rows.empty()) continue;
            const std::size_t cnt = rows.size();
            const ad::Var picked = ad::gather_rows(t, fw.text_final[i], std::move(rows));
            push(Task::Mlm, ad::cross_entropy_sum(t, linear(b, picked, p.mlm), std::move(targets)), cnt);
        }
    }

    auto char_task = [&](Task task, int chars, const Linear& head, auto member) {
        const auto c = static_cast<std::size_t>(chars);
        std::vector<int> targets;
        std::size_t cnt = 0;
        for (const auto& node : ex.nodes) {
            const std::vector<int>& lab = node.*member;
            if (lab.empty()) {
                targets.insert(targets.end(), c, -1);
                continue;
            }
            if (lab.size() != c) throw DomainError("geo label length mismatch");
            targets.insert(targets.end(), lab.begin(), lab.end());
            cnt += c;
        }
        if (cnt == 0) return;
        const ad::Var logits = ad::reshape(t, linear(b, fw.node_final, head), {n * c, 3});
        push(task, ad::cross_entropy_sum(t, logits, std::move(targets)), cnt);
    };
    if (w.geo != 0.0) char_task(Task::Geo, cfg.geo_chars, p.geo, &NodeExample::geo_chars);

    if (w.htc != 0.0) {
        for (int l = 1; l <= kAdminLevels; ++l) {
            std::vector<int> targets(n, -1);
            std::vector<std::vector<int>> cands(n);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (const auto& ht : ex.nodes[i].htc)
                    if (ht.level == l) {
                        targets[i] = ht.cls;
                        cands[i] = ht.candidates;
                        ++cnt;
                    }
            if (cnt == 0) continue;
            const ad::Var logits = linear(b, fw.node_final, p.htc[static_cast<std::size_t>(l - 1)]);
            push(Task::Htc, ad::cross_entropy_sum(t, logits, std::move(targets), &cands), cnt);
        }
    }

    if (w.aet != 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& labels = ex.nodes[i].aet_labels;
            if (labels.size() < 2) continue;
            std::vector<int> targets(labels.begin() + 1, labels.end());
            std::size_t cnt = 0;
            for (int v : targets) cnt += v >= 0;
            if (cnt == 0) continue;
            const ad::Var hdn = ad::gelu(t, linear(b, fw.text_final[i], p.aet_hidden));
            push(Task::Aet, ad::cross_entropy_sum(t, linear(b, hdn, p.aet_out), std::move(targets)), cnt);
        }
    }

    if (w.finetune_geo != 0.0)
        char_task(Task::FinetuneGeo, cfg.finetune_geo_chars, p.geo_finetune, &NodeExample::finetune_geo);
}

ad::Var batch_loss(Binder& b, const ModelParams& p, const ModelConfig& cfg, std::span<const Example> batch,
                   const TaskWeights& w, LossBreakdown& out) {
    auto& t = b.tape();
    TaskTerms terms;
    for (const auto& ex : batch) loss_terms(b, p, cfg, ex, forward(b, p, cfg, ex), w, terms);
    const std::array<double, kNumTasks> weight{w.mlm, w.geo, w.htc, w.aet, w.finetune_geo};
    std::array<double*, kNumTasks> slot{&out.mlm, &out.geo, &out.htc, &out.aet, &out.finetune_geo};
    std::array<std::size_t*, kNumTasks> count{&out.mlm_count, &out.geo_count, &out.htc_count, &out.aet_count,
                                              &out.finetune_geo_count};
    std::vector<ad::Var> means;
    std::vector<double> ws;
    for (std::size_t k = 0; k < kNumTasks; ++k) {
        *count[k] = terms.counts[k];
        *slot[k] = 0.0;
        if (terms.counts[k] == 0) continue;
        const ad::Var mean = ad::scale(t, add_terms(t, terms.parts[k]), 1.0 / static_cast<double>(terms.counts[k]));
        *slot[k] = t.value(mean).data[0];
        means.push_back(mean);
        ws.push_back(weight[k]);
    }
    const ad::Var total = ad::sum_scalars(t, means, ws);
    out.total = t.value(total).data[0];
    return total;
}

}  // namespace nn

// ---------------------------------------------------------------- model

Logits Model::logits(const Example& ex) const {
    ad::Tape tape;
    nn::Binder b(tape, params_, nullptr);
    const nn::ForwardVars fw = nn::forward(b, params_, cfg_, ex);
    const auto n = ex.nodes.size();
    Logits out;
    for (std::size_t i = 0; i < n; ++i) {
        out.mlm.push_back(tape.value(nn::linear(b, fw.text_final[i], params_.mlm)));
        const ad::Var hdn = ad::gelu(tape, nn::linear(b, fw.text_final[i], params_.aet_hidden));
        out.aet.push_back(tape.value(nn::linear(b, hdn, params_.aet_out)));
    }
    out.geo = tape.value(nn::linear(b, fw.node_final, params_.geo));
    out.geo.shape = {n, static_cast<std::size_t>(cfg_.geo_chars), 3};
    for (std::size_t l = 0; l < kAdminLevels; ++l) out.htc[l] = tape.value(nn::linear(b, fw.node_final, params_.htc[l]));
    out.finetune_geo = tape.value(nn::linear(b, fw.node_final, params_.geo_finetune));
    out.finetune_geo.shape = {n, static_cast<std::size_t>(cfg_.finetune_geo_chars), 3};
    out.h_cls = tape.value(fw.h_cls);
    out.node_repr = tape.value(fw.node_final);
    return out;
}

LossBreakdown Model::evaluate_loss(std::span<const Example> batch, const TaskWeights& w) const {
    ad::Tape tape;
    nn::Binder b(tape, params_, nullptr);
    LossBreakdown out;
    nn::batch_loss(b, params_, cfg_, batch, w, out);
    return out;
}

ModelParams Model::gradients(std::span<const Example> batch, const TaskWeights& w, LossBreakdown* breakdown) const {
    ModelParams grads = zeros_like(params_);
    LossBreakdown out;
    {
        ad::Tape tape;
        nn::Binder b(tape, params_, &grads);
        const ad::Var total = nn::batch_loss(b, params_, cfg_, batch, w, out);
        if (!std::isfinite(out.total)) throw NumericalError("loss is not finite");
        tape.backward(total);
    }
    for_each_tensor(grads, [](const std::string& name, const Tensor& g) {
        if (!g.all_finite()) throw NumericalError("gradient of " + name + " is not finite");
    });
    if (breakdown) *breakdown = out;
    return grads;
}

void Model::save(const std::filesystem::path& dir) const {
    json manifest{{"format", "geoaddr-checkpoint-v1"}, {"config", cfg_}, {"tensors", json::array()}};
    for_each_tensor(params_, [&](const std::string& name, const Tensor& t) {
        std::vector<std::uint8_t> bytes;
        bytes.reserve(t.size() * 8);
        for (double v : t.data) io::append_le(bytes, v);
        const std::string file = "tensors/" + name + ".bin";
        io::write_binary(dir / file, bytes);
        manifest["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"file", file}});
    });
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model Model::load(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(io::read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "geoaddr-checkpoint-v1") throw FormatError("unknown checkpoint format");
    ModelConfig cfg;
    try {
        cfg = manifest.at("config").get<ModelConfig>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    ModelParams p = shaped_params(cfg);
    std::unordered_map<std::string, json> entries;
    for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    for_each_tensor(p, [&](const std::string& name, Tensor& t) {
        const auto it = entries.find(name);
        if (it == entries.end()) throw FormatError("checkpoint is missing tensor " + name);
        if (it->second.at("shape").get<std::vector<std::size_t>>() != t.shape)
            throw FormatError(name + ": shape " + it->second.at("shape").dump() + " does not match config " + t.shape_string());
        const auto bytes = io::read_binary(dir / it->second.at("file").get<std::string>());
        if (bytes.size() != t.size() * 8) throw FormatError(name + ": tensor file has the wrong length");
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = io::read_le_f64(bytes, i * 8);
    });
    if (entries.size() != static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](auto&) { return true; })))
        throw FormatError("duplicate tensor names");
    std::size_t expected = 0;
    for_each_tensor(p, [&](const std::string&, const Tensor&) { ++expected; });
    if (entries.size() != expected) throw FormatError("checkpoint has unexpected tensors");
    return {cfg, std::move(p)};
}

AdamOptimizer::AdamOptimizer(const ModelParams& like, AdamOptions opts)
    : opts_(opts), m_(zeros_like(like)), v_(zeros_like(like)) {}

void AdamOptimizer::step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    std::vector<Tensor*> ps, ms, vs;
    std::vector<const Tensor*> gs;
    for_each_tensor(params, [&](const std::string&, Tensor& t) { ps.push_back(&t); });
    for_each_tensor(m_, [&](const std::string&, Tensor& t) { ms.push_back(&t); });
    for_each_tensor(v_, [&](const std::string&, Tensor& t) { vs.push_back(&t); });
    for_each_tensor(grads, [&](const std::string&, const Tensor& t) { gs.push_back(&t); });
    if (ps.size() != gs.size() || ps.size() != ms.size()) throw DomainError("optimizer state does not match parameters");
    const double b1t = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double b2t = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& p = ps[k]->data;
        auto& m = ms[k]->data;
        auto& v = vs[k]->data;
        const auto& g = gs[k]->data;
        if (g.size() != p.size()) throw DomainError("gradient does not match parameter shape");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
            v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
            if (opts_.lr == 0.0) continue;
            p[i] -= opts_.lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + opts_.eps);
        }
    }
}

LossBreakdown train_step(Model& model, AdamOptimizer& opt, std::span<const Example> batch, const TaskWeights& w) {
    LossBreakdown out;
    const ModelParams g = model.gradients(batch, w, &out);
    opt.step(model.params(), g);
    return out;
}

// ---------------------------------------------------------------- decoding and examples

std::vector<double> htc_masked_logits(const std::vector<double>& raw, const std::vector<int>& candidates) {
    std::vector<double> out(raw.size(), -std::numeric_limits<double>::infinity());
    for (int c : candidates) out.at(static_cast<std::size_t>(c)) = raw[static_cast<std::size_t>(c)];
    return out;
}

std::vector<RegionId> htc_decode(const std::array<std::vector<double>, kAdminLevels>& level_logits,
                                 const HtcLabelSpace& space) {
    std::vector<RegionId> path;
    int prev = 0;
    for (int l = 1; l <= kAdminLevels; ++l) {
        const auto& cands = space.candidates(l, prev);
        if (cands.empty()) break;
        const auto masked = htc_masked_logits(level_logits[static_cast<std::size_t>(l - 1)], cands);
        const auto best = std::max_element(masked.begin(), masked.end()) - masked.begin();
        prev = static_cast<int>(best);
        path.push_back(space.region(l, prev));
    }
    return path;
}

std::vector<int> geo_label_values(const LabelChars& label) {
    std::vector<int> v;
    v.reserve(label.chars.size());
    for (char c : label.chars) {
        if (c < '0' || c > '2') throw FormatError("geo label character outside {0,1,2}");
        v.push_back(c - '0');
    }
    return v;
}

NodeExample make_node_example(const NodeTargets& nt, const HtcLabelSpace& space, const MlmExample& mlm) {
    NodeExample ne;
    ne.input_tokens = mlm.input_tokens;
    ne.mlm_targets = mlm.target_tokens;
    ne.geo_chars = geo_label_values(nt.geo.label);
    int parent_cls = 0;
    for (std::size_t k = 0; k < nt.htc.region_path.size(); ++k) {
        const int level = static_cast<int>(k) + 1;
        const RegionId r = nt.htc.region_path[k];
        if (space.level_of(r) != level) throw InconsistentHierarchy("region path skips a level");
        HtcTarget ht{level, space.class_of(r), space.candidates(level, parent_cls)};
        parent_cls = ht.cls;
        ne.htc.push_back(std::move(ht));
    }
    ne.aet_labels = token_entity_labels(nt.tokens);
    return ne;
}

Example make_example(const PretrainSample& s, const SampleFeatures& feats, const HtcLabelSpace& space) {
    if (static_cast<std::size_t>(feats.n) != s.nodes.size()) throw InconsistentSample("features do not match sample size");
    Example ex;
    ex.feats = feats;
    for (const auto& nt : s.nodes) ex.nodes.push_back(make_node_example(nt, space, nt.mlm));
    return ex;
}

Example remask_example(const PretrainSample& s, const SampleFeatures& feats, const HtcLabelSpace& space,
                       const Vocab& vocab, Rng& rng) {
    if (static_cast<std::size_t>(feats.n) != s.nodes.size()) throw InconsistentSample("features do not match sample size");
    Example ex;
    ex.feats = feats;
    for (const auto& nt : s.nodes) ex.nodes.push_back(make_node_example(nt, space, make_mlm(nt.tokens, vocab, rng)));
    return ex;
}

}  // namespace geoaddr
