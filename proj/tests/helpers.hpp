#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "geoaddr/pipeline.hpp"
#include "geoaddr/world.hpp"

namespace testutil {

inline geoaddr::WorldConfig small_world(std::uint64_t seed = 7) {
    geoaddr::WorldConfig wc;
    wc.seed = seed;
    wc.n_aois = 12;
    wc.n_couriers = 4;
    wc.deliveries_per_courier = 30;
    return wc;
}

inline geoaddr::PretrainCorpus small_corpus(std::size_t n_samples = 10, int k = 4) {
    geoaddr::SampleConfig sc;
    sc.k = k;
    sc.seed = 3;
    return geoaddr::build_corpus(small_world(), sc, n_samples, 64);
}

inline geoaddr::ModelConfig tiny_config(const geoaddr::PretrainCorpus& c, int d = 16) {
    geoaddr::ModelConfig m;
    m.d_model = d;
    m.n_heads_text = 2;
    m.n_heads_graph = 2;
    m.n_layers_text = 1;
    m.n_layers_graph = 1;
    m.n_layers_pre = 1;
    return geoaddr::fit_model_config(m, c.vocab, c.world.tree);
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("geoaddr-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace testutil
