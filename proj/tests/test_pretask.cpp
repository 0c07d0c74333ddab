#include <doctest.h>

#include "geoaddr/errors.hpp"
#include "geoaddr/pretask.hpp"
#include "helpers.hpp"

using namespace geoaddr;

namespace {

struct Fixture {
    World w = generate_world(testutil::small_world());
    HeteroGraph g = build_graph(w.deliveries, w.pois, w.tree);
    Vocab vocab = build_vocab(g, w.tree);
};

}  // namespace

TEST_CASE("tokenize spans and detokenize") {
    Fixture f;
    for (const auto& n : f.g.nodes()) {
        const TokenizedNode t = tokenize(n.address, f.vocab);
        CHECK(t.tokens.front() == kClsToken);
        CHECK(detokenize(t.tokens, f.vocab) == n.address.full_text);
        CHECK(t.spans.size() == 7);
        // Same entity text as the character-level segmenter.
        const auto seg = segment(n.address.full_text, f.w.tree);
        REQUIRE(seg.size() == t.spans.size());
        for (std::size_t i = 0; i < seg.size(); ++i) {
            CHECK(seg[i].label == t.spans[i].label);
            const std::vector<TokenId> part(t.tokens.begin() + t.spans[i].begin, t.tokens.begin() + t.spans[i].end);
            CHECK(detokenize(part, f.vocab) == n.address.full_text.substr(seg[i].start, seg[i].end - seg[i].start));
        }
    }
    auto a = f.g.node(0).address;
    a.poi_name.clear();
    a.recompose();
    for (const auto& s : tokenize(a, f.vocab).spans) CHECK(s.label != EntityLabel::PoiName);
}

TEST_CASE("unknown words fall back to characters") {
    Fixture f;
    auto a = f.g.node(0).address;
    const std::string word = split_words(a.poi_name).front().text;
    a.poi_name = word + word;  // known characters, unknown word
    REQUIRE(!f.vocab.contains(a.poi_name));
    a.recompose();
    const auto t = tokenize(a, f.vocab);
    CHECK(detokenize(t.tokens, f.vocab) == a.full_text);
    CHECK(f.vocab.is_continuation(t.tokens.back()));
    CHECK(tokenize(a, f.vocab, 3).tokens.size() == 3);
}

TEST_CASE("forced city mask covers the whole city span") {
    Fixture f;
    const auto t = tokenize(f.g.node(0).address, f.vocab);
    const auto units = mlm_units(t, f.vocab);
    std::size_t city = units.size();
    for (std::size_t i = 0; i < units.size(); ++i)
        if (units[i].unit_level == 2) city = i;
    REQUIRE(city < units.size());
    Rng rng(1);
    const std::vector<UnitAction> act{{city, MlmAction::MaskAll, false}};
    const auto ex = apply_corruption(t, f.vocab, act, rng);
    for (int i = 0; i < static_cast<int>(t.tokens.size()); ++i) {
        const bool in = i >= units[city].begin && i < units[city].end;
        const auto k = static_cast<std::size_t>(i);
        CHECK((ex.input_tokens[k] == kMaskToken) == in);
        CHECK(ex.target_tokens[k] == (in ? t.tokens[k] : kIgnoreTarget));
    }
}

TEST_CASE("selecting nothing leaves the input alone") {
    Fixture f;
    const auto t = tokenize(f.g.node(0).address, f.vocab);
    Rng rng(1);
    MlmOptions none;
    none.select_prob = 0.0;
    const auto ex = make_mlm(t, f.vocab, rng, none);
    CHECK(ex.input_tokens == t.tokens);
    CHECK(std::all_of(ex.target_tokens.begin(), ex.target_tokens.end(), [](TokenId x) { return x == kIgnoreTarget; }));
}

TEST_CASE("replacement uses a same-level sequence") {
    Fixture f;
    const auto t = tokenize(f.g.node(0).address, f.vocab);
    const auto units = mlm_units(t, f.vocab);
    Rng rng(2);
    for (std::size_t u = 0; u < units.size(); ++u) {
        const std::vector<UnitAction> act{{u, MlmAction::ReplaceSameLevel, false}};
        const auto ex = apply_corruption(t, f.vocab, act, rng);
        const std::vector<TokenId> got(ex.input_tokens.begin() + units[u].begin, ex.input_tokens.begin() + units[u].end);
        if (ex.corruption_log[0].fallback) {
            CHECK(ex.corruption_log[0].action == MlmAction::MaskAll);
            CHECK(std::all_of(got.begin(), got.end(), [](TokenId x) { return x == kMaskToken; }));
        } else {
            const auto& pool = f.vocab.pool(units[u].unit_level);
            CHECK(std::find(pool.begin(), pool.end(), got) != pool.end());
        }
    }
    const std::vector<UnitAction> bad{{units.size(), MlmAction::Keep, false}};
    CHECK_THROWS_AS(apply_corruption(t, f.vocab, bad, rng), DomainError);
}

TEST_CASE("masking rates and the CLS token") {
    Fixture f;
    std::size_t units = 0, selected = 0, mask = 0, replace = 0;
    Rng rng(3);
    while (units < 100000) {
        for (const auto& n : f.g.nodes()) {
            const auto t = tokenize(n.address, f.vocab);
            const auto ex = make_mlm(t, f.vocab, rng);
            CHECK(ex.input_tokens[0] == kClsToken);
            CHECK(ex.target_tokens[0] == kIgnoreTarget);
            units += mlm_units(t, f.vocab).size();
            for (const auto& a : ex.corruption_log) {
                ++selected;
                mask += a.action == MlmAction::MaskAll && !a.fallback;
                replace += a.action == MlmAction::ReplaceSameLevel || a.fallback;
            }
        }
    }
    CHECK(std::abs(static_cast<double>(selected) / static_cast<double>(units) - 0.15) <= 0.01);
    CHECK(std::abs(static_cast<double>(mask) / static_cast<double>(selected) - 0.8) <= 0.01);
    CHECK(std::abs(static_cast<double>(replace) / static_cast<double>(selected) - 0.1) <= 0.01);
}

TEST_CASE("geo and htc targets") {
    Fixture f;
    std::map<AoiId, std::vector<LabelChars>> by_aoi;
    for (const auto& n : f.g.nodes()) {
        const auto geo = make_geo(n);
        CHECK(geo.label == encode_2lt3c(cell_from_latlon(n.lat, n.lon, 18)));
        CHECK(geo.label.chars.size() == 27);
        const CellId c = decode_2lt3c(geo.label, cell_from_latlon(n.lat, n.lon, 18).face);
        CHECK(encode_2lt3c(cell_from_latlon(cell_center(c), 18)) == geo.label);
        CHECK(haversine_km(cell_center(c), {n.lat, n.lon}) * 1000.0 < 49.0);
        by_aoi[n.aoi_id].push_back(geo.label);

        const auto htc = make_htc(n.address, f.w.tree);
        REQUIRE(htc.region_path.size() == 5);
        CHECK(f.w.tree.region(htc.region_path[0]).level == 1);
        for (std::size_t l = 1; l < htc.region_path.size(); ++l) {
            const auto kids = f.w.tree.children(htc.region_path[l - 1]);
            CHECK(std::find(kids.begin(), kids.end(), htc.region_path[l]) != kids.end());
        }
    }
    // POIs of one AOI sit in a ~35 m disc, so their decoded cells are near neighbours.
    const int face = cell_from_latlon(f.g.node(0).lat, f.g.node(0).lon, 18).face;
    for (const auto& [aoi, labels] : by_aoi)
        for (const auto& l : labels)
            CHECK(haversine_km(cell_center(decode_2lt3c(l, face)), cell_center(decode_2lt3c(labels.front(), face))) < 0.07 + 0.05);
}

TEST_CASE("pre-training shards roundtrip through JSON") {
    const auto c = testutil::small_corpus(5);
    for (const auto& s : c.pretrain) {
        const auto back = pretrain_sample_from_json(pretrain_sample_to_json(s, "features/part-00000.bin"));
        CHECK(pretrain_sample_to_json(back, "x") == pretrain_sample_to_json(s, "x"));
    }
    CHECK(Vocab::from_json(c.vocab.to_json()) == c.vocab);
}
