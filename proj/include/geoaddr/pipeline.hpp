#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoaddr/features.hpp"
#include "geoaddr/graph.hpp"
#include "geoaddr/model.hpp"
#include "geoaddr/pretask.hpp"
#include "geoaddr/sampler.hpp"
#include "geoaddr/world.hpp"

namespace geoaddr {

// Every stage of the pre-training data path, held in memory.
struct PretrainCorpus {
    World world;
    HeteroGraph graph;
    std::vector<SampledSubgraph> samples;
    std::vector<SampleFeatures> features;
    Vocab vocab;
    std::vector<PretrainSample> pretrain;
};

Vocab build_vocab(const HeteroGraph& g, const AdminTree& tree);

std::vector<PretrainSample> make_pretrain_corpus(const HeteroGraph& g, const AdminTree& tree, const Vocab& vocab,
                                                 std::span<const SampledSubgraph> samples, std::uint64_t seed,
                                                 int max_seq_len);

PretrainCorpus build_corpus(const WorldConfig& world_cfg, const SampleConfig& sample_cfg, std::size_t n_samples,
                            int max_seq_len);

// Fills the data-dependent sizes (vocabulary, regions per level) into `base`.
ModelConfig fit_model_config(ModelConfig base, const Vocab& vocab, const AdminTree& tree);

struct PretrainOptions {
    long steps = 200;
    int batch_size = 4;
    double lr = 1e-3;
    std::uint64_t seed = 7;
    TaskWeights weights;
    // Redraw MLM corruption every epoch; otherwise keep the stored masks.
    bool dynamic_masking = true;
    // Linearly anneal the learning rate to zero over `steps`.
    bool linear_decay = false;
};

struct StepLog {
    long step = 0;
    long epoch = 0;
    LossBreakdown loss;
};

// Runs `steps` optimizer steps over the corpus in shuffled epochs. Step 0
// leaves the parameters untouched.
std::vector<StepLog> pretrain(Model& model, std::span<const PretrainSample> corpus,
                              std::span<const SampleFeatures> features, const Vocab& vocab, const AdminTree& tree,
                              const PretrainOptions& opts, const std::function<void(const StepLog&)>& on_step = {});

// Accuracy of the three pre-training heads on stored targets.
struct TrainingMetrics {
    double mlm_accuracy = 0.0;   // over MLM target tokens
    double geo_exact = 0.0;      // whole 27-char label, per node
    double geo_char = 0.0;       // per character
    double htc_exact = 0.0;      // full constrained-decoded path, per node
    std::size_t mlm_targets = 0, nodes = 0;
};

TrainingMetrics measure_pretraining(const Model& model, std::span<const Example> examples, const HtcLabelSpace& space);

nlohmann::json to_json(const TrainingMetrics& m);

}  // namespace geoaddr
