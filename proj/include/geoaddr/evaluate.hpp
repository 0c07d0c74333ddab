#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoaddr/address.hpp"
#include "geoaddr/geocode.hpp"
#include "geoaddr/model.hpp"
#include "geoaddr/pretask.hpp"
#include "geoaddr/rng.hpp"

namespace geoaddr {

// A lone address fed through the full network as a one-node graph.
Example single_node_example(const NormalizedAddress& addr, const Vocab& vocab, int max_seq_len);

// ---- geocoding

struct GeoCase {
    NormalizedAddress address;
    LatLon truth;
};

struct GeoPrediction {
    LabelChars label;
    int face = 0;
};

struct GeoEvalResult {
    std::map<double, double> acc_at_km;
    double mean_km_error = 0.0;
    std::size_t count = 0;
};

using GeoPredictor = std::function<GeoPrediction(const GeoCase&)>;

// Decodes each predicted label (clamping invalid digit groups) to its cell
// center and scores the haversine distance to the truth.
GeoEvalResult eval_geocoding(std::span<const GeoCase> cases, const GeoPredictor& predict, std::span<const double> n_km);

enum class GeoHead { Pretrain, Finetune };

// Argmax label from the chosen geo head. `face` is the cube face the corpus lives on.
GeoPredictor model_geo_predictor(const Model& model, const Vocab& vocab, GeoHead head, int face);

std::vector<GeoCase> geo_cases(const World& world);

// Trains only through the fine-tune head's loss (all weights update).
struct FinetuneOptions {
    int epochs = 10;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 7;
};
std::vector<double> finetune_geo(Model& model, std::span<const GeoCase> cases, const Vocab& vocab,
                                 const FinetuneOptions& opts);

// ---- address entity prediction

struct AepCase {
    NormalizedAddress masked;  // one admin field blanked
    int masked_level = 1;
    RegionId gold = 0;
};

struct AepResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

using AepPredictor = std::function<RegionId(const AepCase&)>;

// Blanks one uniformly chosen non-empty admin field per address.
std::vector<AepCase> make_aep_cases(std::span<const NormalizedAddress> addresses, const AdminTree& tree, Rng& rng);
AepResult eval_aep(std::span<const AepCase> cases, const AepPredictor& predict);
// Constrained HTC decode, read off at the masked level.
AepPredictor model_aep_predictor(const Model& model, const Vocab& vocab, const AdminTree& tree);

// ---- address entity tokenization

struct AetCase {
    TokenizedNode tokens;
};

struct AetResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

// Per-token labels; index 0 ([CLS]) is ignored.
using AetPredictor = std::function<std::vector<int>(const AetCase&)>;

AetResult eval_aet(std::span<const AetCase> cases, const AetPredictor& predict);
AetPredictor model_aet_predictor(const Model& model);

std::vector<double> finetune_aet(Model& model, std::span<const AetCase> cases, const FinetuneOptions& opts);

// ---- embedding clusters

struct ClusterResult {
    double silhouette = 0.0;
    double ch_index = 0.0;  // +inf when every cluster is a single point cloud of identical vectors
    std::size_t clusters = 0;
};

// rows of `embeddings` ([m, d]) labelled by `labels`; Euclidean distance.
ClusterResult cluster_metrics(const Tensor& embeddings, std::span<const std::int64_t> labels);

// Final node rows of each address as a one-node graph, [m, d].
Tensor embed_addresses(const Model& model, const Vocab& vocab, std::span<const NormalizedAddress> addresses);

// ---- reports

std::string checkpoint_hash(const std::filesystem::path& dir);
void write_report(const std::filesystem::path& path, const std::string& task, const nlohmann::json& metrics,
                  const std::string& config_hash, const std::string& checkpoint_hash, const std::string& dataset_hash);

nlohmann::json to_json(const GeoEvalResult& r);
nlohmann::json to_json(const AepResult& r);
nlohmann::json to_json(const AetResult& r);
nlohmann::json to_json(const ClusterResult& r);

}  // namespace geoaddr
