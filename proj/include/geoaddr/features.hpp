#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geoaddr/graph.hpp"
#include "geoaddr/sampler.hpp"

namespace geoaddr {

// Structural model inputs for one sampled subgraph.
struct SampleFeatures {
    int n = 0;
    std::vector<int> degrees;    // n
    std::vector<int> positions;  // n, 1..n in insertion order
    std::vector<int> dist;       // n*n hop distances; unreachable() marks no path
    std::vector<std::uint8_t> route_types;  // n*n*(n-1) edge codes, zero padded

    int unreachable() const { return n; }
    int distance(int i, int j) const { return dist[static_cast<std::size_t>(i * n + j)]; }
    int path_slots() const { return n > 1 ? n - 1 : 0; }
    std::uint8_t route(int i, int j, int slot) const {
        return route_types[static_cast<std::size_t>((i * n + j) * path_slots() + slot)];
    }

    bool operator==(const SampleFeatures&) const = default;
};

struct FeaturizeOptions {
    // Degrees counted in the full graph (default) or inside the sample.
    bool degree_from_subgraph = false;
};

SampleFeatures featurize(const HeteroGraph& g, const SampledSubgraph& s, const FeaturizeOptions& opts = {});

// Same computation from the sample alone, for callers that do not hold the graph.
SampleFeatures featurize_local(const SampledSubgraph& s, std::vector<int> degrees);

// features/part-NNNNN.bin (flat little-endian int32) + part-NNNNN.meta.json.
void save_features(const std::vector<SampleFeatures>& feats, const std::filesystem::path& dir, std::size_t per_part);
std::vector<SampleFeatures> load_features(const std::filesystem::path& dir);

}  // namespace geoaddr
