#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoaddr/evaluate.hpp"
#include "geoaddr/features.hpp"
#include "geoaddr/graph.hpp"
#include "geoaddr/model.hpp"
#include "geoaddr/sampler.hpp"

// Independent oracles and the acceptance criteria built on them. Nothing
// here reuses the code path it checks.
namespace geoaddr::checks {

// ---- oracles

// n*n hop counts; unreachable pairs get n.
std::vector<int> floyd_warshall(const SampledSubgraph& s);
// Edge codes along the lexicographically smallest shortest path of every
// pair, found by enumerating all shortest paths. Layout matches SampleFeatures.
std::vector<std::uint8_t> replay_routes(const SampledSubgraph& s, const std::vector<int>& dist);

std::set<NodeId> bfs_component(const HeteroGraph& g, NodeId start);
// Induced edges rebuilt by scanning full adjacency lists.
std::map<std::pair<int, int>, EdgeCode> recheck_edges(const HeteroGraph& g, const std::vector<NodeId>& nodes);

struct GradCheckReport {
    std::vector<std::pair<std::string, double>> per_tensor;  // max relative error per tensor
    double max_rel = 0.0;
    std::string worst;
};
// Central differences on the batch loss. Relative error of a tensor is
// |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf, 1e-8).
GradCheckReport gradient_check(const Model& model, std::span<const Example> batch, const TaskWeights& w, double h);

// Per-entity correctness from label strings: gold entities are maximal runs
// of one non-OTHER label.
std::vector<bool> span_score(const std::vector<int>& gold_labels, const std::vector<int>& predicted);

// Fraction of `box` (by area on the sphere) within `radius_km` of `center`.
double disk_box_fraction(LatLon center, double radius_km, const BoundingBox& box);

// Plain-loop graph encoder. With feats == nullptr the attention has no bias.
Tensor reference_graph_encode(const ModelParams& p, const ModelConfig& cfg, const Tensor& h,
                              const SampleFeatures* feats);

// ---- acceptance criteria

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

CriterionResult gradient_oracle();
CriterionResult sampler_oracle();
CriterionResult shortest_path_oracle();
CriterionResult geocode_bijection();
CriterionResult masking_statistics();
CriterionResult overfit_target();
CriterionResult downstream_pipeline();
CriterionResult structural_invariants();

std::vector<CriterionResult> run_all(bool include_overfit = true);

}  // namespace geoaddr::checks
