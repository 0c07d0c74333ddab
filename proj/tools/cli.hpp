#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoaddr/evaluate.hpp"
#include "geoaddr/model.hpp"
#include "geoaddr/pipeline.hpp"
#include "geoaddr/sampler.hpp"
#include "geoaddr/world.hpp"

namespace geoaddr::cli {

// Everything one pipeline run needs. `seed` feeds every stage.
struct PipelineConfig {
    std::filesystem::path out_dir = "run";
    std::uint64_t seed = 7;
    WorldConfig world;
    SampleConfig sample;
    std::size_t n_samples = 200;
    std::size_t shard_size = 1000;
    ModelConfig model;
    PretrainOptions pretrain;
    FinetuneOptions finetune;
    double test_fraction = 0.2;
    std::vector<double> acc_km{1.0, 3.0, 5.0};

    // Pushes `seed` into every per-stage seed.
    void apply_seed();
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig config_from_json(const nlohmann::json& j);
std::string config_hash(const PipelineConfig& c);

// Exit codes: 0 ok, 1 verify failure, 2 usage, 3 data/format, 4 numerical.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace geoaddr::cli
