#include <doctest.h>

#include <cmath>
#include <limits>

#include "geoaddr/errors.hpp"
#include "geoaddr/evaluate.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

GeoPrediction truth_cell(const GeoCase& c, int level) {
    const CellId cell = cell_from_latlon(c.truth, level);
    return {encode_2lt3c(cell), cell.face};
}

Tensor cloud(const std::vector<std::array<double, 3>>& centers, std::size_t per, double spread, Rng& rng) {
    Tensor x({centers.size() * per, 3});
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (std::size_t i = 0; i < per; ++i)
            for (std::size_t k = 0; k < 3; ++k) x(c * per + i, k) = centers[c][k] + spread * rng.normal();
    return x;
}

std::vector<std::int64_t> blocks(std::size_t k, std::size_t per) {
    std::vector<std::int64_t> out;
    for (std::size_t c = 0; c < k; ++c) out.insert(out.end(), per, static_cast<std::int64_t>(c));
    return out;
}

}  // namespace

TEST_CASE("geocoding: gold cells, infinite radius and monotonicity") {
    const World w = generate_world(testutil::small_world());
    const auto cases = geo_cases(w);
    REQUIRE(!cases.empty());
    const double radii[] = {0.01, 0.05, 1.0, 3.0, std::numeric_limits<double>::infinity()};

    const auto gold = eval_geocoding(cases, [](const GeoCase& c) { return truth_cell(c, kPretrainCellLevel); }, radii);
    CHECK(gold.count == cases.size());
    CHECK(gold.acc_at_km.at(1.0) == 1.0);
    CHECK(gold.mean_km_error < 0.05);

    // A coarse cell lands anywhere; accuracy can only grow with the radius.
    const auto coarse = eval_geocoding(cases, [](const GeoCase& c) { return truth_cell(c, 9); }, radii);
    double prev = -1.0;
    for (double n : radii) {
        CHECK(coarse.acc_at_km.at(n) >= prev);
        prev = coarse.acc_at_km.at(n);
    }
    CHECK(coarse.acc_at_km.at(std::numeric_limits<double>::infinity()) == 1.0);
    CHECK(coarse.acc_at_km.at(0.01) < 1.0);

    CHECK_THROWS_AS(eval_geocoding(std::span<const GeoCase>{}, [](const GeoCase& c) { return truth_cell(c, 18); }, radii),
                    EmptyEvalSet);
}

TEST_CASE("geocoding: a far-away constant cell scores zero at 1 km") {
    const World w = generate_world(testutil::small_world());
    const auto cases = geo_cases(w);
    const CellId far = cell_from_latlon(-40.0, -70.0, kPretrainCellLevel);
    const double radii[] = {1.0};
    const auto r = eval_geocoding(cases, [&](const GeoCase&) { return GeoPrediction{encode_2lt3c(far), far.face}; }, radii);
    CHECK(r.acc_at_km.at(1.0) == 0.0);
    CHECK(r.mean_km_error > 1000.0);
}

TEST_CASE("AEP: gold, constant and uniform sibling predictors") {
    WorldConfig wc = testutil::small_world();
    wc.cities_per_province = 4;
    const World w = generate_world(wc);
    std::vector<NormalizedAddress> addrs;
    for (const auto& c : geo_cases(w)) addrs.push_back(c.address);

    Rng rng(11);
    std::vector<AepCase> level2;
    for (int round = 0; round < 150; ++round)
        for (auto& c : make_aep_cases(addrs, w.tree, rng)) {
            CHECK(c.masked.admin_field(c.masked_level).empty());
            CHECK(w.tree.region(c.gold).level == c.masked_level);
            if (c.masked_level == 2) level2.push_back(c);
        }
    REQUIRE(level2.size() > 1000);

    CHECK(eval_aep(level2, [](const AepCase& c) { return c.gold; }).accuracy == 1.0);

    const RegionId most = level2.front().gold;
    double freq = 0.0;
    for (const auto& c : level2) freq += c.gold == most;
    freq /= static_cast<double>(level2.size());
    CHECK(eval_aep(level2, [most](const AepCase&) { return most; }).accuracy == doctest::Approx(freq).epsilon(1e-12));

    Rng pick(12);
    const auto uniform = eval_aep(level2, [&](const AepCase& c) {
        const auto sib = w.tree.children(w.tree.parent_or_root(c.gold));
        return sib[pick.index(sib.size())];
    });
    const double se = std::sqrt(0.25 * 0.75 / static_cast<double>(level2.size()));
    CHECK(std::abs(uniform.accuracy - 0.25) < 4.0 * se);

    CHECK_THROWS_AS(eval_aep(std::span<const AepCase>{}, [](const AepCase& c) { return c.gold; }), EmptyEvalSet);
}

TEST_CASE("AET: entity-level scoring") {
    // [CLS] + 3 province tokens + 1 city token + 2 POI tokens.
    AetCase c;
    c.tokens.tokens = {kClsToken, 10, 11, 12, 13, 14, 15};
    c.tokens.spans = {{EntityLabel::Province, 1, 4}, {EntityLabel::City, 4, 5}, {EntityLabel::PoiName, 5, 7}};
    const auto gold = token_entity_labels(c.tokens);
    REQUIRE(gold.size() == 7);
    const std::span<const AetCase> one(&c, 1);

    const auto perfect = eval_aet(one, [&](const AetCase&) { return gold; });
    CHECK(perfect.total == 3);
    CHECK(perfect.accuracy == 1.0);

    auto wrong = gold;
    wrong[2] = static_cast<int>(EntityLabel::Town);
    const auto r = eval_aet(one, [&](const AetCase&) { return wrong; });
    CHECK(r.correct == 2);
    CHECK(r.accuracy == doctest::Approx(2.0 / 3.0));

    // [CLS] is ignored.
    auto cls = gold;
    cls[0] = 3;
    CHECK(eval_aet(one, [&](const AetCase&) { return cls; }).accuracy == 1.0);

    CHECK_THROWS_AS(eval_aet(one, [](const AetCase&) { return std::vector<int>{0}; }), DomainError);
    CHECK_THROWS_AS(eval_aet(std::span<const AetCase>{}, [&](const AetCase&) { return gold; }), EmptyEvalSet);
}

TEST_CASE("cluster metrics: separation, degenerate clouds and errors") {
    Rng rng(13);
    const auto labels = blocks(2, 50);
    const Tensor sep = cloud({{{0, 0, 0}}, {{20, 0, 0}}}, 50, 0.5, rng);
    const auto r = cluster_metrics(sep, labels);
    CHECK(r.clusters == 2);
    CHECK(r.silhouette > 0.9);
    CHECK(r.ch_index > 100.0);

    const Tensor same = cloud({{{0, 0, 0}}, {{1, 1, 1}}}, 5, 0.0, rng);
    const auto d = cluster_metrics(same, blocks(2, 5));
    CHECK(d.silhouette == 1.0);
    CHECK(std::isinf(d.ch_index));

    const auto single = blocks(1, 10);
    CHECK_THROWS_AS(cluster_metrics(cloud({{{0, 0, 0}}}, 10, 1.0, rng), single), NeedTwoClusters);
    CHECK_THROWS_AS(cluster_metrics(sep, blocks(2, 10)), DomainError);
}

TEST_CASE("cluster metrics: invariant to translation, rotation and scale") {
    Rng rng(14);
    const auto labels = blocks(3, 20);
    const Tensor x = cloud({{{0, 0, 0}}, {{2, 1, 0}}, {{0, 2, 1}}}, 20, 0.8, rng);
    const auto base = cluster_metrics(x, labels);

    const double a = 0.7;
    Tensor moved = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        moved(i, 0) = std::cos(a) * x(i, 0) - std::sin(a) * x(i, 1) + 5.0;
        moved(i, 1) = std::sin(a) * x(i, 0) + std::cos(a) * x(i, 1) - 3.0;
        moved(i, 2) = x(i, 2) + 1.0;
    }
    const auto m = cluster_metrics(moved, labels);
    CHECK(m.silhouette == doctest::Approx(base.silhouette).epsilon(1e-9));
    CHECK(m.ch_index == doctest::Approx(base.ch_index).epsilon(1e-9));

    Tensor scaled = x;
    for (double& v : scaled.data) v *= 37.0;
    CHECK(cluster_metrics(scaled, labels).silhouette == doctest::Approx(base.silhouette).epsilon(1e-9));
}

TEST_CASE("embeddings and geo fine-tuning") {
    const auto c = testutil::small_corpus(10);
    const Model init = Model::init(testutil::tiny_config(c), 5);
    const auto cases = geo_cases(c.world);
    std::vector<NormalizedAddress> addrs;
    for (std::size_t i = 0; i < 7; ++i) addrs.push_back(cases[i].address);

    const Tensor e = embed_addresses(init, c.vocab, addrs);
    CHECK(e.shape == std::vector<std::size_t>{7, 16});
    CHECK(e.all_finite());
    CHECK(e == embed_addresses(init, c.vocab, addrs));

    Model m = init;
    FinetuneOptions fo;
    fo.epochs = 6;
    fo.lr = 3e-3;
    const auto losses = finetune_geo(m, cases, c.vocab, fo);
    REQUIRE(losses.size() == 6);
    CHECK(losses.back() < losses.front());
    CHECK(!(m.params() == init.params()));

    // Training only moves the fine-tune head's loss; the pretrain head still runs.
    const auto pred = model_geo_predictor(m, c.vocab, GeoHead::Finetune, cell_from_latlon(cases[0].truth, 1).face);
    CHECK(pred(cases[0]).label.chars.size() == static_cast<std::size_t>(label_length(kFinetuneCellLevel)));
}
