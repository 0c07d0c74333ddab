#include "geoaddr/pipeline.hpp"

#include "geoaddr/errors.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr {

Vocab build_vocab(const HeteroGraph& g, const AdminTree& tree) {
    std::vector<NormalizedAddress> addrs;
    addrs.reserve(g.num_nodes());
    for (const auto& n : g.nodes()) addrs.push_back(n.address);
    return Vocab::build(tree, addrs);
}

std::vector<PretrainSample> make_pretrain_corpus(const HeteroGraph& g, const AdminTree& tree, const Vocab& vocab,
                                                 std::span<const SampledSubgraph> samples, std::uint64_t seed,
                                                 int max_seq_len) {
    std::vector<PretrainSample> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out.push_back(make_pretrain_sample(g, tree, vocab, samples[i], i, seed, max_seq_len));
    return out;
}

PretrainCorpus build_corpus(const WorldConfig& world_cfg, const SampleConfig& sample_cfg, std::size_t n_samples,
                            int max_seq_len) {
    PretrainCorpus c;
    c.world = generate_world(world_cfg);
    c.graph = build_graph(c.world.deliveries, c.world.pois, c.world.tree);
    c.samples = sample_corpus(c.graph, n_samples, sample_cfg);
    for (const auto& s : c.samples) c.features.push_back(featurize(c.graph, s));
    c.vocab = build_vocab(c.graph, c.world.tree);
    c.pretrain = make_pretrain_corpus(c.graph, c.world.tree, c.vocab, c.samples, sample_cfg.seed, max_seq_len);
    return c;
}

ModelConfig fit_model_config(ModelConfig base, const Vocab& vocab, const AdminTree& tree) {
    base.vocab_size = static_cast<int>(vocab.size());
    base.htc_level_sizes = HtcLabelSpace(tree).level_sizes();
    base.validate();
    return base;
}

std::vector<StepLog> pretrain(Model& model, std::span<const PretrainSample> corpus,
                              std::span<const SampleFeatures> features, const Vocab& vocab, const AdminTree& tree,
                              const PretrainOptions& opts, const std::function<void(const StepLog&)>& on_step) {
    if (opts.steps < 0) throw ConfigError("steps must be non-negative");
    if (opts.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(opts.lr >= 0.0)) throw ConfigError("lr must be non-negative");
    std::vector<StepLog> log;
    if (opts.steps == 0) return log;
    if (corpus.empty()) throw EmptyGraph("pre-training corpus is empty");

    const HtcLabelSpace space(tree);
    auto feats_of = [&](const PretrainSample& s) -> const SampleFeatures& {
        if (s.features_index >= features.size()) throw InconsistentSample("sample references missing features");
        return features[s.features_index];
    };
    auto epoch_examples = [&](long epoch) {
        std::vector<Example> ex;
        ex.reserve(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            if (epoch == 0 || !opts.dynamic_masking) {
                ex.push_back(make_example(corpus[i], feats_of(corpus[i]), space));
            } else {
                Rng rng(derive_seed(derive_seed(opts.seed, static_cast<std::uint64_t>(epoch)), i));
                ex.push_back(remask_example(corpus[i], feats_of(corpus[i]), space, vocab, rng));
            }
        }
        return ex;
    };

    AdamOptimizer opt(model.params(), AdamOptions{opts.lr});
    Rng order_rng(derive_seed(opts.seed, 0x5eedULL));
    const auto bs = static_cast<std::size_t>(opts.batch_size);
    long epoch = 0;
    std::vector<Example> examples = epoch_examples(0);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    std::size_t cursor = 0;
    std::vector<Example> batch;
    for (long step = 1; step <= opts.steps; ++step) {
        if (cursor >= order.size()) {
            ++epoch;
            examples = epoch_examples(epoch);
            order_rng.shuffle(order);
            cursor = 0;
        }
        batch.clear();
        for (std::size_t k = 0; k < bs && cursor < order.size(); ++k) batch.push_back(examples[order[cursor++]]);
        if (opts.linear_decay)
            opt.options().lr = opts.lr * static_cast<double>(opts.steps - step + 1) / static_cast<double>(opts.steps);
        StepLog entry{step, epoch, train_step(model, opt, batch, opts.weights)};
        if (on_step) on_step(entry);
        log.push_back(std::move(entry));
    }
    return log;
}

TrainingMetrics measure_pretraining(const Model& model, std::span<const Example> examples, const HtcLabelSpace& space) {
    TrainingMetrics m;
    std::size_t mlm_hit = 0, geo_hit = 0, geo_char_hit = 0, geo_chars = 0, htc_hit = 0;
    for (const auto& ex : examples) {
        const Logits lg = model.logits(ex);
        const std::size_t chars = lg.geo.shape.at(1);
        for (std::size_t i = 0; i < ex.nodes.size(); ++i) {
            const auto& node = ex.nodes[i];
            ++m.nodes;
            const Tensor& ml = lg.mlm[i];
            for (std::size_t k = 1; k < node.mlm_targets.size(); ++k) {
                if (node.mlm_targets[k] == kIgnoreTarget) continue;
                const double* row = ml.row(k - 1);
                mlm_hit += std::max_element(row, row + ml.cols()) - row == node.mlm_targets[k];
                ++m.mlm_targets;
            }
            bool all = !node.geo_chars.empty();
            for (std::size_t c = 0; c < node.geo_chars.size(); ++c) {
                const double* row = &lg.geo.data[(i * chars + c) * 3];
                const bool ok = std::max_element(row, row + 3) - row == node.geo_chars[c];
                geo_char_hit += ok;
                all = all && ok;
                ++geo_chars;
            }
            geo_hit += all;
            std::array<std::vector<double>, kAdminLevels> levels;
            for (std::size_t l = 0; l < kAdminLevels; ++l) levels[l].assign(lg.htc[l].row(i), lg.htc[l].row(i) + lg.htc[l].cols());
            const auto path = htc_decode(levels, space);
            bool ok = path.size() >= node.htc.size();
            for (std::size_t l = 0; ok && l < node.htc.size(); ++l)
                ok = path[l] == space.region(node.htc[l].level, node.htc[l].cls);
            htc_hit += ok;
        }
    }
    auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    m.mlm_accuracy = frac(mlm_hit, m.mlm_targets);
    m.geo_exact = frac(geo_hit, m.nodes);
    m.geo_char = frac(geo_char_hit, geo_chars);
    m.htc_exact = frac(htc_hit, m.nodes);
    return m;
}

nlohmann::json to_json(const TrainingMetrics& m) {
    return {{"mlm_accuracy", m.mlm_accuracy}, {"geo_exact", m.geo_exact}, {"geo_char", m.geo_char},
            {"htc_exact", m.htc_exact},       {"mlm_targets", m.mlm_targets}, {"nodes", m.nodes}};
}

}  // namespace geoaddr
