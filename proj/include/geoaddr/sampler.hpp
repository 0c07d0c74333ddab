#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "geoaddr/graph.hpp"

namespace geoaddr {

struct SampleConfig {
    int k = 6;          // target node count
    double p = 0.8;     // probability of re-rooting after each addition
    std::uint64_t seed = 0;

    void validate() const;
};

struct SampledSubgraph {
    std::vector<NodeId> node_ids;  // insertion order; node_ids[0] is the base node
    // Induced edges over local indices, keyed (i, j) with i < j.
    std::map<std::pair<int, int>, EdgeCode> induced_edges;

    std::size_t size() const { return node_ids.size(); }
    EdgeCode edge(int i, int j) const;
    bool operator==(const SampledSubgraph&) const = default;
};

void to_json(nlohmann::json& j, const SampledSubgraph& s);
void from_json(const nlohmann::json& j, SampledSubgraph& s);

// Frontier expansion from `base` with random re-rooting. Returns early with
// the whole connected component when it holds fewer than cfg.k nodes.
SampledSubgraph sample(const HeteroGraph& g, NodeId base, const SampleConfig& cfg);

// Edges of g among `node_ids`, over local indices.
std::map<std::pair<int, int>, EdgeCode> induce_edges(const HeteroGraph& g, const std::vector<NodeId>& node_ids);

// Sample i draws its base node and its expansion from derive_seed(cfg.seed, i).
SampledSubgraph sample_at(const HeteroGraph& g, std::size_t index, const SampleConfig& cfg);
std::vector<SampledSubgraph> sample_corpus(const HeteroGraph& g, std::size_t n_samples, const SampleConfig& cfg);

// samples/part-00000.jsonl ... with at most `per_part` samples each.
void save_samples(const std::vector<SampledSubgraph>& samples, const std::filesystem::path& dir, std::size_t per_part);
std::vector<SampledSubgraph> load_samples(const std::filesystem::path& dir);

}  // namespace geoaddr
