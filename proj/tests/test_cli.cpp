#include <doctest.h>

#include <sstream>

#include "cli.hpp"
#include "geoaddr/io.hpp"
#include "helpers.hpp"

using namespace geoaddr;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// Tiny run config written into `dir`.
fs::path write_config(const fs::path& dir, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json j = {{"out_dir", (dir / "run").generic_string()},
                        {"world", {{"n_aois", 8}, {"n_couriers", 3}, {"deliveries_per_courier", 20}}},
                        {"sample", {{"n_samples", 12}, {"shard_size", 5}}},
                        {"model", {{"d_model", 16}, {"n_heads_text", 2}, {"n_heads_graph", 2}, {"n_layers_text", 1},
                                   {"n_layers_graph", 1}, {"n_layers_pre", 1}}},
                        {"pretrain", {{"steps", 3}, {"batch_size", 4}}},
                        {"finetune", {{"epochs", 1}}}};
    j.merge_patch(extra);
    const fs::path p = dir / "config.json";
    io::write_text(p, j.dump());
    return p;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(call({}).code == 2);
    CHECK(call({"no-such-command"}).code == 2);
    CHECK(call({"sample", "--n-samples", "abc"}).code == 2);

    testutil::TempDir dir;
    const auto cfg = write_config(dir.path, {{"world", {{"bogus", 1}}}});
    CHECK(call({"--config", cfg.string(), "gen-world"}).code == 2);
    const auto cfg2 = write_config(dir.path, {{"extra_section", 1}});
    CHECK(call({"--config", cfg2.string(), "gen-world"}).code == 2);
    CHECK(call({"--config", (dir.path / "missing.json").string(), "gen-world"}).code != 0);
}

TEST_CASE("help exits 0") { CHECK(call({"--help"}).code == 0); }

TEST_CASE("missing inputs exit 3") {
    testutil::TempDir dir;
    const auto cfg = write_config(dir.path);
    const auto r = call({"--config", cfg.string(), "build-graph"});
    CHECK(r.code == 3);
    CHECK(!r.err.empty());
    CHECK(r.out.empty());
}

TEST_CASE("pipeline: status lines, zero-step pretrain and reproducibility") {
    testutil::TempDir dir;
    const auto cfg = write_config(dir.path);
    const std::string c = cfg.string();
    for (const char* cmd : {"gen-world", "build-graph", "sample", "featurize", "make-pretrain"}) {
        const auto r = call({"--config", c, cmd});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        // exactly one JSON line
        CHECK(r.out.find('\n') == r.out.size() - 1);
        const auto j = nlohmann::json::parse(r.out);
        CHECK(j.at("status") == "ok");
        CHECK(j.at("command") == cmd);
        CHECK(j.at("config_hash").get<std::string>().size() > 0);
    }

    const auto r = call({"--config", c, "pretrain", "--steps", "0"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const fs::path run = dir.path / "run";
    const Model trained = Model::load(run / "checkpoints" / "pretrain");
    const World w = load_world(run / "world");
    const Vocab vocab = Vocab::from_json(nlohmann::json::parse(io::read_text(run / "vocab.json")));
    const auto pc = cli::config_from_json(nlohmann::json::parse(io::read_text(cfg)));
    const Model fresh = Model::init(fit_model_config(pc.model, vocab, w.tree), pc.seed);
    CHECK(trained.params() == fresh.params());

    // Same config, same bytes.
    const std::string before = io::read_text(run / "world" / "deliveries.jsonl");
    REQUIRE(call({"--config", c, "gen-world"}).code == 0);
    CHECK(io::read_text(run / "world" / "deliveries.jsonl") == before);

    // A different seed changes the world.
    REQUIRE(call({"--config", c, "--seed", "99", "--out-dir", (dir.path / "other").string(), "gen-world"}).code == 0);
    CHECK(io::read_text(dir.path / "other" / "world" / "deliveries.jsonl") != before);

    const auto ev = call({"--config", c, "eval-aep"});
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const auto rep = nlohmann::json::parse(io::read_text(run / "reports" / "aep.json"));
    CHECK(rep.contains("config_hash"));
    CHECK(rep.contains("checkpoint_hash"));
}

TEST_CASE("config hash ignores the output directory") {
    cli::PipelineConfig a, b;
    b.out_dir = "elsewhere";
    CHECK(cli::config_hash(a) == cli::config_hash(b));
    b.seed = 8;
    CHECK(cli::config_hash(a) != cli::config_hash(b));
    const auto back = cli::config_from_json(cli::to_json(a));
    CHECK(cli::config_hash(back) == cli::config_hash(a));
}
