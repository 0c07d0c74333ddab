#include "geoaddr/evaluate.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"

namespace geoaddr {

using nlohmann::json;

namespace {

Example one_node(std::vector<TokenId> tokens) {
    Example ex;
    ex.feats.n = 1;
    ex.feats.degrees = {0};
    ex.feats.positions = {1};
    ex.feats.dist = {0};
    NodeExample node;
    node.input_tokens = std::move(tokens);
    ex.nodes.push_back(std::move(node));
    return ex;
}

std::string argmax_chars(const Tensor& logits, std::size_t node) {
    // logits: [n, chars, 3]
    const std::size_t chars = logits.shape.at(1);
    std::string out(chars, '0');
    for (std::size_t c = 0; c < chars; ++c) {
        const double* row = &logits.data[(node * chars + c) * 3];
        out[c] = static_cast<char>('0' + (std::max_element(row, row + 3) - row));
    }
    return out;
}

std::vector<double> run_epochs(Model& model, std::vector<Example> examples, const TaskWeights& w,
                               const FinetuneOptions& opts) {
    if (examples.empty()) throw EmptyEvalSet("no fine-tuning examples");
    if (opts.epochs < 0 || opts.batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
    AdamOptimizer opt(model.params(), AdamOptions{opts.lr});
    Rng rng(opts.seed);
    std::vector<double> history;
    for (int e = 0; e < opts.epochs; ++e) {
        rng.shuffle(examples);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t end = std::min(examples.size(), i + static_cast<std::size_t>(opts.batch_size));
            sum += train_step(model, opt, std::span<const Example>(examples).subspan(i, end - i), w).total;
            ++batches;
        }
        history.push_back(sum / static_cast<double>(batches));
    }
    return history;
}

}  // namespace

Example single_node_example(const NormalizedAddress& addr, const Vocab& vocab, int max_seq_len) {
    return one_node(tokenize(addr, vocab, max_seq_len).tokens);
}

// ---------------------------------------------------------------- geocoding

GeoEvalResult eval_geocoding(std::span<const GeoCase> cases, const GeoPredictor& predict, std::span<const double> n_km) {
    if (cases.empty()) throw EmptyEvalSet("geocoding test set is empty");
    GeoEvalResult r;
    r.count = cases.size();
    std::vector<double> errs;
    errs.reserve(cases.size());
    for (const auto& c : cases) {
        const GeoPrediction p = predict(c);
        const LatLon center = cell_center(decode_2lt3c_clamped(p.label, p.face));
        errs.push_back(haversine_km(center, c.truth));
    }
    double sum = 0.0;
    for (double e : errs) sum += e;
    r.mean_km_error = sum / static_cast<double>(errs.size());
    for (double n : n_km) {
        if (!(n >= 0.0)) throw ConfigError("distance threshold must be non-negative");
        std::size_t hit = 0;
        for (double e : errs) hit += std::isinf(n) || e < n;
        r.acc_at_km[n] = static_cast<double>(hit) / static_cast<double>(errs.size());
    }
    return r;
}

GeoPredictor model_geo_predictor(const Model& model, const Vocab& vocab, GeoHead head, int face) {
    return [&model, &vocab, head, face](const GeoCase& c) {
        const Logits lg = model.logits(single_node_example(c.address, vocab, model.config().max_seq_len));
        GeoPrediction p;
        p.face = face;
        if (head == GeoHead::Pretrain) p.label = {argmax_chars(lg.geo, 0), kPretrainCellLevel};
        else p.label = {argmax_chars(lg.finetune_geo, 0), kFinetuneCellLevel};
        return p;
    };
}

std::vector<GeoCase> geo_cases(const World& world) {
    std::vector<GeoCase> out;
    for (const auto& p : world.pois.records()) out.push_back({p.canonical(), p.location});
    return out;
}

std::vector<double> finetune_geo(Model& model, std::span<const GeoCase> cases, const Vocab& vocab,
                                 const FinetuneOptions& opts) {
    std::vector<Example> examples;
    for (const auto& c : cases) {
        Example ex = single_node_example(c.address, vocab, model.config().max_seq_len);
        ex.nodes[0].finetune_geo = geo_label_values(encode_2lt3c(cell_from_latlon(c.truth, kFinetuneCellLevel)));
        examples.push_back(std::move(ex));
    }
    TaskWeights w{0.0, 0.0, 0.0, 0.0, 1.0};
    return run_epochs(model, std::move(examples), w, opts);
}

// ---------------------------------------------------------------- AEP

std::vector<AepCase> make_aep_cases(std::span<const NormalizedAddress> addresses, const AdminTree& tree, Rng& rng) {
    std::vector<AepCase> out;
    for (const auto& a : addresses) {
        const auto path = admin_path(a, tree);
        if (path.empty()) continue;
        AepCase c;
        c.masked_level = static_cast<int>(rng.range(1, static_cast<long long>(path.size())));
        c.gold = path[static_cast<std::size_t>(c.masked_level - 1)];
        c.masked = a;
        c.masked.admin_field(c.masked_level).clear();
        c.masked.recompose();
        out.push_back(std::move(c));
    }
    return out;
}

AepResult eval_aep(std::span<const AepCase> cases, const AepPredictor& predict) {
    if (cases.empty()) throw EmptyEvalSet("AEP test set is empty");
    AepResult r;
    r.total = cases.size();
    for (const auto& c : cases) r.correct += predict(c) == c.gold;
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

AepPredictor model_aep_predictor(const Model& model, const Vocab& vocab, const AdminTree& tree) {
    return [&model, &vocab, space = HtcLabelSpace(tree)](const AepCase& c) -> RegionId {
        const Logits lg = model.logits(single_node_example(c.masked, vocab, model.config().max_seq_len));
        std::array<std::vector<double>, kAdminLevels> levels;
        for (std::size_t l = 0; l < kAdminLevels; ++l) levels[l].assign(lg.htc[l].row(0), lg.htc[l].row(0) + lg.htc[l].cols());
        const auto path = htc_decode(levels, space);
        if (static_cast<std::size_t>(c.masked_level) > path.size()) return kRootRegion;
        return path[static_cast<std::size_t>(c.masked_level - 1)];
    };
}

// ---------------------------------------------------------------- AET

AetResult eval_aet(std::span<const AetCase> cases, const AetPredictor& predict) {
    if (cases.empty()) throw EmptyEvalSet("AET test set is empty");
    AetResult r;
    for (const auto& c : cases) {
        const std::vector<int> pred = predict(c);
        if (pred.size() != c.tokens.tokens.size()) throw DomainError("AET prediction length does not match the tokens");
        for (const auto& s : c.tokens.spans) {
            bool ok = true;
            for (int i = s.begin; i < s.end && ok; ++i) ok = pred[static_cast<std::size_t>(i)] == static_cast<int>(s.label);
            r.correct += ok;
            ++r.total;
        }
    }
    if (r.total == 0) throw EmptyEvalSet("AET test set has no entities");
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

AetPredictor model_aet_predictor(const Model& model) {
    return [&model](const AetCase& c) {
        const Logits lg = model.logits(one_node(c.tokens.tokens));
        std::vector<int> labels(c.tokens.tokens.size(), -1);
        const Tensor& a = lg.aet[0];
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const double* row = a.row(r);
            labels[r + 1] = static_cast<int>(std::max_element(row, row + a.cols()) - row);
        }
        return labels;
    };
}

std::vector<double> finetune_aet(Model& model, std::span<const AetCase> cases, const FinetuneOptions& opts) {
    std::vector<Example> examples;
    for (const auto& c : cases) {
        Example ex = one_node(c.tokens.tokens);
        ex.nodes[0].aet_labels = token_entity_labels(c.tokens);
        examples.push_back(std::move(ex));
    }
    TaskWeights w{0.0, 0.0, 0.0, 1.0, 0.0};
    return run_epochs(model, std::move(examples), w, opts);
}

// ---------------------------------------------------------------- clusters

ClusterResult cluster_metrics(const Tensor& x, std::span<const std::int64_t> labels) {
    const std::size_t m = x.rows(), d = x.cols();
    if (x.shape.size() != 2 || labels.size() != m) throw DomainError("embeddings and labels disagree in length");
    if (!x.all_finite()) throw NumericalError("embeddings contain non-finite values");
    std::map<std::int64_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < m; ++i) members[labels[i]].push_back(i);
    const std::size_t k = members.size();
    if (k < 2) throw NeedTwoClusters("cluster metrics need at least two distinct labels");
    if (k >= m) throw NeedTwoClusters("every point is its own cluster");

    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double t = x(i, c) - x(j, c);
            s += t * t;
        }
        return std::sqrt(s);
    };

    // Silhouette: singleton clusters score 0.
    std::vector<std::int64_t> keys;
    for (const auto& [key, _] : members) keys.push_back(key);
    double sil = 0.0;
    std::vector<double> mean_to(k);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(mean_to.begin(), mean_to.end(), 0.0);
        std::size_t own = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const auto& mem = members[keys[c]];
            double s = 0.0;
            for (std::size_t j : mem) s += dist(i, j);
            if (keys[c] == labels[i]) {
                own = c;
                mean_to[c] = mem.size() > 1 ? s / static_cast<double>(mem.size() - 1) : 0.0;
            } else {
                mean_to[c] = s / static_cast<double>(mem.size());
            }
        }
        if (members[keys[own]].size() == 1) continue;
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != own) b = std::min(b, mean_to[c]);
        const double a = mean_to[own];
        const double den = std::max(a, b);
        if (den > 0.0) sil += (b - a) / den;
    }

    // Calinski-Harabasz.
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < d; ++c) mu[c] += x(i, c);
    for (double& v : mu) v /= static_cast<double>(m);
    double between = 0.0, within = 0.0;
    for (const auto& [key, mem] : members) {
        std::vector<double> ck(d, 0.0);
        for (std::size_t i : mem)
            for (std::size_t c = 0; c < d; ++c) ck[c] += x(i, c);
        for (double& v : ck) v /= static_cast<double>(mem.size());
        for (std::size_t c = 0; c < d; ++c) between += static_cast<double>(mem.size()) * (ck[c] - mu[c]) * (ck[c] - mu[c]);
        for (std::size_t i : mem)
            for (std::size_t c = 0; c < d; ++c) within += (x(i, c) - ck[c]) * (x(i, c) - ck[c]);
    }
    ClusterResult r;
    r.clusters = k;
    r.silhouette = sil / static_cast<double>(m);
    if (within == 0.0) r.ch_index = between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    else r.ch_index = (between / static_cast<double>(k - 1)) / (within / static_cast<double>(m - k));
    return r;
}

Tensor embed_addresses(const Model& model, const Vocab& vocab, std::span<const NormalizedAddress> addresses) {
    const auto d = static_cast<std::size_t>(model.config().d_model);
    Tensor out({addresses.size(), d});
    for (std::size_t i = 0; i < addresses.size(); ++i) {
        const Logits lg = model.logits(single_node_example(addresses[i], vocab, model.config().max_seq_len));
        std::copy_n(lg.node_repr.row(0), d, out.row(i));
    }
    return out;
}

// ---------------------------------------------------------------- reports

std::string checkpoint_hash(const std::filesystem::path& dir) {
    const std::string manifest = io::read_text(dir / "manifest.json");
    std::string acc = io::fnv1a_hex(manifest);
    for (const auto& e : json::parse(manifest).at("tensors")) acc += io::file_hash(dir / e.at("file").get<std::string>());
    return io::fnv1a_hex(acc);
}

void write_report(const std::filesystem::path& path, const std::string& task, const json& metrics,
                  const std::string& config_hash, const std::string& ckpt_hash, const std::string& dataset_hash) {
    const json j{{"task", task},
                 {"metrics", metrics},
                 {"config_hash", config_hash},
                 {"checkpoint_hash", ckpt_hash},
                 {"dataset_hash", dataset_hash}};
    io::write_text(path, j.dump(2) + "\n");
}

json to_json(const GeoEvalResult& r) {
    json acc = json::object();
    for (const auto& [n, a] : r.acc_at_km) acc[std::isinf(n) ? std::string("inf") : json(n).dump()] = a;
    return {{"acc_at_km", acc}, {"mean_km_error", r.mean_km_error}, {"count", r.count}};
}

json to_json(const AepResult& r) { return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total}}; }

json to_json(const AetResult& r) { return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total}}; }

json to_json(const ClusterResult& r) {
    json ch = std::isinf(r.ch_index) ? json("inf") : json(r.ch_index);
    return {{"silhouette", r.silhouette}, {"ch_index", ch}, {"clusters", r.clusters}};
}

}  // namespace geoaddr
