#include <doctest.h>

#include <cmath>
#include <limits>

#include "geoaddr/checks.hpp"
#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"
#include "geoaddr/model.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

struct Fixture {
    PretrainCorpus c = testutil::small_corpus(10);
    ModelConfig cfg = testutil::tiny_config(c);
    HtcLabelSpace space{c.world.tree};
    Model model = Model::init(cfg, 5);

    std::vector<Example> examples() const {
        std::vector<Example> out;
        for (const auto& s : c.pretrain) out.push_back(make_example(s, c.features[s.features_index], space));
        return out;
    }
};

Tensor value_of(const Model& m, const std::function<ad::Var(nn::Binder&)>& f) {
    ad::Tape tape;
    nn::Binder b(tape, m.params(), nullptr);
    return tape.value(f(b));
}

double max_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
}

}  // namespace

TEST_CASE("text encoder: CLS only, determinism and padding") {
    Fixture f;
    const std::vector<TokenId> cls{kClsToken};
    const Tensor one = value_of(f.model, [&](nn::Binder& b) { return nn::encode_text(b, f.model.params(), f.cfg, cls, 1); });
    CHECK(one.shape == std::vector<std::size_t>{1, 16});
    CHECK(one.all_finite());

    const auto& toks = f.c.pretrain[0].nodes[0].tokens.tokens;
    auto run = [&](std::span<const TokenId> t, std::size_t valid) {
        return value_of(f.model, [&](nn::Binder& b) { return nn::encode_text(b, f.model.params(), f.cfg, t, valid); });
    };
    const Tensor a = run(toks, toks.size());
    CHECK(a == run(toks, toks.size()));
    std::vector<TokenId> padded = toks;
    padded.insert(padded.end(), 3, kPadToken);
    const Tensor p = run(padded, toks.size());
    for (std::size_t r = 0; r < toks.size(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) CHECK(std::abs(p(r, c) - a(r, c)) <= 1e-12);

    std::vector<TokenId> bad{kClsToken, static_cast<TokenId>(f.cfg.vocab_size)};
    CHECK_THROWS_AS(run(bad, 2), DomainError);
    std::vector<TokenId> too_long(static_cast<std::size_t>(f.cfg.max_seq_len) + 1, kClsToken);
    CHECK_THROWS_AS(run(too_long, 1), DomainError);
}

TEST_CASE("node_repr: zero tables and degree clamping") {
    Fixture f;
    Tensor h({2, 16});
    Rng rng(1);
    for (double& v : h.data) v = rng.normal();
    auto run = [&](const Model& m, std::vector<int> deg, std::vector<int> pos) {
        return value_of(m, [&](nn::Binder& b) {
            return nn::node_repr(b, m.params(), m.config(), b.tape().constant(h), deg, pos);
        });
    };
    Model zero = f.model;
    std::fill(zero.params().degree_emb.data.begin(), zero.params().degree_emb.data.end(), 0.0);
    std::fill(zero.params().node_pos_emb.data.begin(), zero.params().node_pos_emb.data.end(), 0.0);
    CHECK(run(zero, {0, 0}, {1, 1}) == h);
    const int md = f.cfg.max_degree;
    CHECK(run(f.model, {md + 5, 1}, {1, 2}) == run(f.model, {md, 1}, {1, 2}));
    CHECK_THROWS_AS(run(f.model, {1, 1}, {1, f.cfg.max_nodes + 1}), DomainError);
}

TEST_CASE("graph encoder matches the plain-loop reference") {
    Fixture f;
    Rng rng(2);
    Model m = f.model;
    for_each_tensor(m.params(), [&](const std::string&, Tensor& t) {
        for (double& v : t.data) v += 0.2 * rng.normal();
    });
    for (const auto& feats : f.c.features) {
        Tensor h({static_cast<std::size_t>(feats.n), 16});
        for (double& v : h.data) v = rng.normal();
        const Tensor got = value_of(m, [&](nn::Binder& b) {
            return nn::graph_encode(b, m.params(), m.config(), b.tape().constant(h), feats);
        });
        CHECK(max_diff(got, checks::reference_graph_encode(m.params(), m.config(), h, &feats)) <= 1e-12);
    }
    // One node: attention is the identity on its value row.
    SampleFeatures one;
    one.n = 1;
    one.degrees = {0};
    one.positions = {1};
    one.dist = {0};
    Tensor h({1, 16});
    for (double& v : h.data) v = rng.normal();
    const Tensor got = value_of(m, [&](nn::Binder& b) {
        return nn::graph_encode(b, m.params(), m.config(), b.tape().constant(h), one);
    });
    CHECK(max_diff(got, checks::reference_graph_encode(m.params(), m.config(), h, &one)) <= 1e-12);

    SampleFeatures far = f.c.features[0];
    far.dist[1] = f.cfg.max_dist + 1;
    Tensor hf({static_cast<std::size_t>(far.n), 16});
    CHECK_THROWS_AS(value_of(m, [&](nn::Binder& b) {
                        return nn::graph_encode(b, m.params(), m.config(), b.tape().constant(hf), far);
                    }),
                    DomainError);
}

TEST_CASE("attention rows sum to one under any bias") {
    ad::Tape t;
    Rng rng(3);
    const std::size_t m = 5, d = 4;
    Tensor q({m, d}), k({m, d}), ones({m, d}, 1.0), bias({2, m, m});
    for (double& v : q.data) v = rng.normal();
    for (double& v : k.data) v = rng.normal();
    for (double& v : bias.data) v = 5.0 * rng.normal();
    const ad::Var out = ad::attention(t, t.constant(q), t.constant(k), t.constant(ones), 2, t.constant(bias), m);
    for (double v : t.value(out).data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("realign with zeroed output projections passes input through") {
    Fixture f;
    Model m = f.model;
    for (auto& l : m.params().pre_layers)
        for (Tensor* t : {&l.o.w, &l.o.b, &l.ff2.w, &l.ff2.b}) std::fill(t->data.begin(), t->data.end(), 0.0);
    Rng rng(4);
    Tensor node({1, 16}), text({6, 16});
    for (double& v : node.data) v = rng.normal();
    for (double& v : text.data) v = rng.normal();
    const Tensor out = value_of(m, [&](nn::Binder& b) {
        return nn::realign(b, m.params(), m.config(), b.tape().constant(node), b.tape().constant(text));
    });
    REQUIRE(out.rows() == 7);
    for (std::size_t c = 0; c < 16; ++c) CHECK(out(0, c) == node(0, c));
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 16; ++c) CHECK(out(r + 1, c) == text(r, c));
}

TEST_CASE("heads: shapes and finite logits") {
    Fixture f;
    const auto ex = f.examples();
    const Logits lg = f.model.logits(ex[0]);
    const auto n = ex[0].nodes.size();
    CHECK(lg.geo.shape == std::vector<std::size_t>{n, 27, 3});
    CHECK(lg.finetune_geo.shape == std::vector<std::size_t>{n, 33, 3});
    for (std::size_t l = 0; l < kAdminLevels; ++l)
        CHECK(lg.htc[l].shape == std::vector<std::size_t>{n, static_cast<std::size_t>(f.cfg.htc_level_sizes[l])});
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(lg.mlm[i].rows() == ex[0].nodes[i].input_tokens.size() - 1);
        CHECK(lg.mlm[i].cols() == static_cast<std::size_t>(f.cfg.vocab_size));
        CHECK(lg.aet[i].cols() == static_cast<std::size_t>(kEntityLabels));
        CHECK(lg.mlm[i].all_finite());
    }
    CHECK(lg.geo.all_finite());
}

TEST_CASE("HTC masking and constrained decode") {
    Fixture f;
    const std::vector<double> raw{0.5, 1.0, 2.0, -1.0};
    const auto masked = htc_masked_logits(raw, {1, 3});
    CHECK(masked[0] == -std::numeric_limits<double>::infinity());
    CHECK(masked[2] == -std::numeric_limits<double>::infinity());
    CHECK(masked[1] == 1.0);
    CHECK(masked[3] == -1.0);

    Rng rng(5);
    const auto sizes = f.space.level_sizes();
    for (int trial = 0; trial < 1000; ++trial) {
        std::array<std::vector<double>, kAdminLevels> lv;
        for (std::size_t l = 0; l < kAdminLevels; ++l) {
            lv[l].resize(static_cast<std::size_t>(sizes[l]));
            for (double& v : lv[l]) v = 3.0 * rng.normal();
        }
        const auto path = htc_decode(lv, f.space);
        REQUIRE(path.size() == kAdminLevels);
        CHECK(f.c.world.tree.region(path[0]).level == 1);
        for (std::size_t l = 1; l < path.size(); ++l) CHECK(f.c.world.tree.region(path[l]).parent_id == path[l - 1]);
    }
}

TEST_CASE("loss: perfect, uniform and empty cases") {
    {
        ad::Tape t;
        Tensor logits({2, 3}, -1e3);
        logits(0, 1) = 1e3;
        logits(1, 2) = 1e3;
        const ad::Var l = ad::cross_entropy_sum(t, t.constant(logits), {1, 2});
        CHECK(t.value(l).data[0] == doctest::Approx(0.0));
    }
    Fixture f;
    Model m = f.model;
    std::fill(m.params().geo.w.data.begin(), m.params().geo.w.data.end(), 0.0);
    std::fill(m.params().geo.b.data.begin(), m.params().geo.b.data.end(), 0.0);
    const auto ex = f.examples();
    const auto geo_only = m.evaluate_loss(ex, {0, 1, 0, 0, 0});
    CHECK(geo_only.geo == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(geo_only.total == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    std::vector<Example> quiet = ex;
    for (auto& e : quiet)
        for (auto& n : e.nodes) std::fill(n.mlm_targets.begin(), n.mlm_targets.end(), kIgnoreTarget);
    const auto lb = f.model.evaluate_loss(quiet, TaskWeights{});
    CHECK(lb.mlm == 0.0);
    CHECK(lb.mlm_count == 0);
    CHECK(lb.total == doctest::Approx(lb.geo + lb.htc).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    Fixture f;
    Model m = f.model;
    AdamOptimizer opt(m.params(), AdamOptions{0.0});
    const auto ex = f.examples();
    train_step(m, opt, ex, TaskWeights{});
    CHECK(m.params() == f.model.params());
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("gradients of a tiny batch match finite differences") {
    Fixture f;
    ModelConfig cfg = f.cfg;
    cfg.d_model = 8;
    Model m = Model::init(cfg, 9);
    Example ex = f.examples()[0];
    ex.nodes.resize(1);
    ex.feats = featurize_local(SampledSubgraph{{0}, {}}, {2});
    for (auto& n : ex.nodes) {
        n.mlm_targets[1] = n.input_tokens[1];
        n.finetune_geo.assign(33, 2);
    }
    const std::vector<Example> batch{ex};
    const auto r = checks::gradient_check(m, batch, {1.0, 1.0, 1.0, 1.0, 1.0}, 1e-5);
    // Key biases shift every score in a row equally, so their true gradient
    // is zero and only finite-difference noise is left to compare.
    const ModelParams g = m.gradients(batch, {1.0, 1.0, 1.0, 1.0, 1.0});
    for (const auto& [name, rel] : r.per_tensor) {
        INFO(name);
        if (name.ends_with(".k.b")) continue;
        CHECK(rel < 1e-6);
    }
    for_each_tensor(g, [&](const std::string& name, const Tensor& t) {
        if (!name.ends_with(".k.b")) return;
        for (double v : t.data) CHECK(std::abs(v) < 1e-12);
    });
}

TEST_CASE("non-finite parameters raise NumericalError") {
    Fixture f;
    Model m = f.model;
    m.params().token_emb.data[0] = std::numeric_limits<double>::quiet_NaN();
    m.params().geo.w.data[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(m.gradients(f.examples(), TaskWeights{}), NumericalError);
}

TEST_CASE("200 full-batch steps on 10 samples: loss falls across every 50-step window") {
    Fixture f;
    Model m = f.model;
    PretrainOptions po;
    po.steps = 200;
    po.batch_size = 10;
    po.lr = 2e-3;
    po.dynamic_masking = false;
    const auto log = pretrain(m, f.c.pretrain, f.c.features, f.c.vocab, f.c.world.tree, po);
    REQUIRE(log.size() == 200);
    for (std::size_t s = 0; s + 50 < log.size(); ++s) CHECK(log[s + 50].loss.total < log[s].loss.total);
    CHECK(log.back().loss.total < 0.5 * log.front().loss.total);
}

TEST_CASE("pretrain with zero steps keeps the initial parameters") {
    Fixture f;
    Model m = f.model;
    PretrainOptions po;
    po.steps = 0;
    CHECK(pretrain(m, f.c.pretrain, f.c.features, f.c.vocab, f.c.world.tree, po).empty());
    CHECK(m.params() == f.model.params());
}

TEST_CASE("checkpoints roundtrip and validate shapes") {
    Fixture f;
    testutil::TempDir dir;
    f.model.save(dir.path / "a");
    const Model back = Model::load(dir.path / "a");
    CHECK(back.params() == f.model.params());
    CHECK(back.config() == f.model.config());

    auto manifest = nlohmann::json::parse(io::read_text(dir.path / "a" / "manifest.json"));
    manifest["config"]["d_model"] = 24;
    io::write_text(dir.path / "a" / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(Model::load(dir.path / "a"), FormatError);
    CHECK_THROWS_AS(Model::load(dir.path / "missing"), FormatError);
}

TEST_CASE("config validation") {
    Fixture f;
    ModelConfig bad = f.cfg;
    bad.n_heads_graph = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = f.cfg;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(f.cfg.ff_width() == 4 * f.cfg.d_model);
    CHECK(parameter_count(f.model.params()) > 0);
}
