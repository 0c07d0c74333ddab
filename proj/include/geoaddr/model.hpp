#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoaddr/address.hpp"
#include "geoaddr/autodiff.hpp"
#include "geoaddr/features.hpp"
#include "geoaddr/pretask.hpp"
#include "geoaddr/tensor.hpp"

namespace geoaddr {

struct ModelConfig {
    int d_model = 32;
    int n_heads_text = 4;
    int n_heads_graph = 4;
    int n_layers_text = 2;
    int n_layers_graph = 2;
    int n_layers_pre = 1;
    int d_ff = 0;  // 0 means 4 * d_model
    int max_seq_len = 64;
    int vocab_size = 0;
    int max_degree = 64;
    int max_nodes = 16;
    int max_dist = 15;
    int geo_chars = label_length(kPretrainCellLevel);
    int finetune_geo_chars = label_length(kFinetuneCellLevel);
    std::array<int, kAdminLevels> htc_level_sizes{};
    int entity_labels = kEntityLabels;
    double layer_norm_eps = 1e-5;

    int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    // Throws ConfigError.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

// Pre-norm transformer layer with an output projection.
struct EncoderLayer {
    LayerNormParams ln1;
    Linear q, k, v, o;
    LayerNormParams ln2;
    Linear ff1, ff2;
};

// Graph-biased layer: Q/K/V projections without bias or output projection,
// X' = X + Attn(LN(X)) and X~ = X' + FC(LN(X')).
struct GraphLayer {
    LayerNormParams ln1;
    Tensor wq, wk, wv;  // [d, d]
    LayerNormParams ln2;
    Linear fc1, fc2;
};

struct ModelParams {
    Tensor token_emb;      // [vocab, d]
    Tensor text_pos_emb;   // [max_seq_len, d]
    std::vector<EncoderLayer> text_layers;
    LayerNormParams text_ln;
    Tensor degree_emb;     // [max_degree + 1, d]
    Tensor node_pos_emb;   // [max_nodes + 1, d]; row p encodes position p
    Tensor dist_bias;      // [max_dist + 2, heads]; last row encodes "unreachable"
    Tensor route_bias;     // [8, heads]; row 0 is padding
    std::vector<GraphLayer> graph_layers;
    std::vector<EncoderLayer> pre_layers;
    LayerNormParams head_ln;
    Linear mlm;            // d -> vocab
    Linear geo;            // d -> geo_chars * 3
    std::array<Linear, kAdminLevels> htc;  // d -> regions at level l
    Linear aet_hidden;     // d -> d
    Linear aet_out;        // d -> entity labels
    Linear geo_finetune;   // d -> finetune_geo_chars * 3, on final node rows

    bool operator==(const ModelParams& o) const;
};

// Visits every tensor with a stable dotted name, in a fixed order.
void for_each_tensor(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const ModelParams& p, const std::function<void(const std::string&, const Tensor&)>& fn);
std::size_t parameter_count(const ModelParams& p);

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& p);
// Throws FormatError when a tensor shape disagrees with the config.
void validate_shapes(const ModelParams& p, const ModelConfig& cfg);

// Class indices for the level-wise region classifiers.
class HtcLabelSpace {
public:
    HtcLabelSpace() = default;
    explicit HtcLabelSpace(const AdminTree& tree);

    std::array<int, kAdminLevels> level_sizes() const;
    int class_of(RegionId id) const;  // index within its level
    int level_of(RegionId id) const;
    RegionId region(int level, int cls) const;
    // Candidate classes at `level` given the class chosen at level-1 (ignored for level 1).
    const std::vector<int>& candidates(int level, int parent_cls) const;
    // Candidates at `level` below an arbitrary ancestor (kRootRegion allowed).
    std::vector<int> candidates_below(RegionId ancestor, int level) const;

private:
    std::unordered_map<RegionId, RegionId> parent_;
    std::array<std::vector<RegionId>, kAdminLevels> regions_;
    std::unordered_map<RegionId, std::pair<int, int>> index_;
    std::array<std::vector<std::vector<int>>, kAdminLevels> children_;
    std::vector<int> all_level1_;
};

struct HtcTarget {
    int level = 1;
    int cls = 0;
    std::vector<int> candidates;  // teacher-forced set (children of the gold parent)
};

// One node of a training example.
struct NodeExample {
    std::vector<TokenId> input_tokens;
    std::vector<TokenId> mlm_targets;  // kIgnoreTarget where unselected
    std::vector<int> geo_chars;        // geo_chars values in {0,1,2}; empty = no target
    std::vector<HtcTarget> htc;
    std::vector<int> aet_labels;       // per token, -1 = no target
    std::vector<int> finetune_geo;     // finetune_geo_chars values; empty = no target
};

struct Example {
    SampleFeatures feats;
    std::vector<NodeExample> nodes;
};

struct TaskWeights {
    double mlm = 1.0, geo = 1.0, htc = 1.0, aet = 0.0, finetune_geo = 0.0;
};

struct LossBreakdown {
    double total = 0.0;
    double mlm = 0.0, geo = 0.0, htc = 0.0, aet = 0.0, finetune_geo = 0.0;
    std::size_t mlm_count = 0, geo_count = 0, htc_count = 0, aet_count = 0, finetune_geo_count = 0;
};

// Logits for one example, as plain tensors.
struct Logits {
    std::vector<Tensor> mlm;      // per node [L-1, vocab] (text rows, [CLS] excluded)
    Tensor geo;                   // [n, geo_chars, 3]
    std::array<Tensor, kAdminLevels> htc;  // raw [n, size_l]
    std::vector<Tensor> aet;      // per node [L-1, entity labels]
    Tensor finetune_geo;          // [n, finetune_geo_chars, 3]
    Tensor h_cls;                 // [n, d]
    Tensor node_repr;             // [n, d] final node rows
};

namespace nn {

// Maps model tensors to tape leaves; with grads == nullptr everything is constant.
class Binder {
public:
    Binder(ad::Tape& tape, const ModelParams& params, ModelParams* grads);
    ad::Var operator()(const Tensor& t);
    ad::Tape& tape() { return tape_; }

private:
    ad::Tape& tape_;
    std::unordered_map<const Tensor*, Tensor*> sinks_;
    std::unordered_map<const Tensor*, ad::Var> cache_;
};

ad::Var linear(Binder& b, ad::Var x, const Linear& l);
ad::Var encoder_layer(Binder& b, ad::Var x, const EncoderLayer& layer, int heads, std::size_t valid, double eps);

// [L, d] hidden states for one padded token sequence; rows >= valid are padding.
ad::Var encode_text(Binder& b, const ModelParams& p, const ModelConfig& cfg, std::span<const TokenId> tokens,
                    std::size_t valid);
// H = h_cls + E_deg + E_pos, [n, d].
ad::Var node_repr(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var h_cls, std::span<const int> degrees,
                  std::span<const int> positions);
// [heads, n, n] distance + route attention biases.
ad::Var structural_bias(Binder& b, const ModelParams& p, const ModelConfig& cfg, const SampleFeatures& f);
ad::Var graph_encode(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var h, const SampleFeatures& f);
// [1 + L_text, d] per node: node row followed by its text rows.
ad::Var realign(Binder& b, const ModelParams& p, const ModelConfig& cfg, ad::Var node_row, ad::Var text_rows);

struct ForwardVars {
    std::vector<ad::Var> text;  // per node [L, d] text-encoder output (row 0 = [CLS])
    ad::Var h_cls;              // [n, d]
    ad::Var graph_out;          // [n, d]
    std::vector<ad::Var> realigned;  // per node [L, d]
    ad::Var node_final;         // [n, d] after head LN
    std::vector<ad::Var> text_final;  // per node [L-1, d] after head LN
};

ForwardVars forward(Binder& b, const ModelParams& p, const ModelConfig& cfg, const Example& ex);

enum class Task { Mlm = 0, Geo, Htc, Aet, FinetuneGeo };
inline constexpr int kNumTasks = 5;

// Summed cross-entropy terms per task, before normalisation.
struct TaskTerms {
    std::array<std::vector<ad::Var>, kNumTasks> parts;
    std::array<std::size_t, kNumTasks> counts{};
};

// Adds one example's loss terms for every task with nonzero weight.
void loss_terms(Binder& b, const ModelParams& p, const ModelConfig& cfg, const Example& ex, const ForwardVars& fw,
                const TaskWeights& w, TaskTerms& terms);

// Weighted sum over tasks of the mean cross-entropy over that task's targets
// in the batch. Tasks without targets contribute nothing.
ad::Var batch_loss(Binder& b, const ModelParams& p, const ModelConfig& cfg, std::span<const Example> batch,
                   const TaskWeights& w, LossBreakdown& out);

}  // namespace nn

class Model {
public:
    Model() = default;
    Model(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {}
    static Model init(const ModelConfig& cfg, std::uint64_t seed) { return {cfg, init_params(cfg, seed)}; }

    const ModelConfig& config() const { return cfg_; }
    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }

    Logits logits(const Example& ex) const;
    // Mean loss over the batch (per-task averages over their own targets).
    LossBreakdown evaluate_loss(std::span<const Example> batch, const TaskWeights& w) const;
    // Gradient of the batch loss; throws NumericalError naming a non-finite tensor.
    ModelParams gradients(std::span<const Example> batch, const TaskWeights& w, LossBreakdown* breakdown = nullptr) const;

    void save(const std::filesystem::path& dir) const;
    static Model load(const std::filesystem::path& dir);

private:
    ModelConfig cfg_;
    ModelParams params_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer(const ModelParams& like, AdamOptions opts);
    void step(ModelParams& params, const ModelParams& grads);
    const AdamOptions& options() const { return opts_; }
    AdamOptions& options() { return opts_; }
    long steps_taken() const { return t_; }

private:
    AdamOptions opts_;
    ModelParams m_, v_;
    long t_ = 0;
};

// One optimizer step on `batch`; returns the pre-update loss.
LossBreakdown train_step(Model& model, AdamOptimizer& opt, std::span<const Example> batch, const TaskWeights& w);

// Greedy constrained HTC decode from raw per-level logits of one node:
// level 1 over all regions, then each level among children of the previous pick.
std::vector<RegionId> htc_decode(const std::array<std::vector<double>, kAdminLevels>& level_logits,
                                 const HtcLabelSpace& space);
// Level-l logits with every non-candidate class set to -inf.
std::vector<double> htc_masked_logits(const std::vector<double>& raw, const std::vector<int>& candidates);

// Builds training examples from pretrain records.
NodeExample make_node_example(const NodeTargets& nt, const HtcLabelSpace& space, const MlmExample& mlm);
Example make_example(const PretrainSample& s, const SampleFeatures& feats, const HtcLabelSpace& space);
// Same example with the MLM corruption redrawn.
Example remask_example(const PretrainSample& s, const SampleFeatures& feats, const HtcLabelSpace& space,
                       const Vocab& vocab, Rng& rng);
std::vector<int> geo_label_values(const LabelChars& label);

}  // namespace geoaddr
