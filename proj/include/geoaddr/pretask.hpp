#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geoaddr/address.hpp"
#include "geoaddr/geocode.hpp"
#include "geoaddr/graph.hpp"
#include "geoaddr/rng.hpp"
#include "geoaddr/sampler.hpp"

namespace geoaddr {

using TokenId = std::int32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kClsToken = 1;
inline constexpr TokenId kMaskToken = 2;
inline constexpr TokenId kUnkToken = 3;
inline constexpr TokenId kIgnoreTarget = -1;

// Replacement pools are keyed by "unit level": 1..5 admin levels, 6 road numbers, 7 POI words.
inline constexpr int kRoadNumberUnit = 6;
inline constexpr int kPoiWordUnit = 7;

// Whitespace words, with a per-character fallback ("x", "##y", ...) for
// out-of-vocabulary words.
class Vocab {
public:
    Vocab();

    static Vocab build(const AdminTree& tree, std::span<const NormalizedAddress> corpus);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    TokenId id(const std::string& token) const;  // kUnkToken when absent
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    bool is_continuation(TokenId id) const;

    std::vector<TokenId> encode_word(const std::string& word) const;

    // Token sequences eligible as same-level replacements.
    const std::vector<std::vector<TokenId>>& pool(int unit_level) const;

    nlohmann::json to_json() const;
    static Vocab from_json(const nlohmann::json& j);

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_ && pools_ == o.pools_; }

private:
    TokenId add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
    std::map<int, std::vector<std::vector<TokenId>>> pools_;
};

struct TokenSpan {
    EntityLabel label = EntityLabel::Other;
    int begin = 0;  // token index, [CLS] is 0
    int end = 0;    // exclusive

    bool operator==(const TokenSpan&) const = default;
};

struct TokenizedNode {
    std::vector<TokenId> tokens;
    std::vector<TokenSpan> spans;
    NormalizedAddress raw;
};

TokenizedNode tokenize(const NormalizedAddress& addr, const Vocab& vocab, int max_seq_len = 64);
std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab);
// Per-token entity label (-1 for [CLS] and padding).
std::vector<int> token_entity_labels(const TokenizedNode& t);

enum class MlmAction { MaskAll = 0, ReplaceSameLevel = 1, Keep = 2 };

struct MlmUnit {
    int begin = 0, end = 0;  // token range
    int unit_level = 0;      // see kRoadNumberUnit / kPoiWordUnit
};

// Units a masking pass may select: each admin region / road number as a whole,
// and each word of the POI name.
std::vector<MlmUnit> mlm_units(const TokenizedNode& t, const Vocab& vocab);

struct UnitAction {
    std::size_t unit = 0;
    MlmAction action = MlmAction::MaskAll;
    bool fallback = false;  // REPLACE requested but the pool was empty
};

struct MlmExample {
    std::vector<TokenId> input_tokens;
    std::vector<TokenId> target_tokens;  // kIgnoreTarget where not selected
    std::vector<UnitAction> corruption_log;
};

struct MlmOptions {
    double select_prob = 0.15;
    double mask_prob = 0.8;
    double replace_prob = 0.1;
};

MlmExample make_mlm(const TokenizedNode& t, const Vocab& vocab, Rng& rng, const MlmOptions& opts = {});
// Applies a fixed set of unit decisions; replacement draws still use rng.
MlmExample apply_corruption(const TokenizedNode& t, const Vocab& vocab, std::span<const UnitAction> actions, Rng& rng);

struct GeoExample {
    LabelChars label;
};
GeoExample make_geo(const AddressNode& node, int level = kPretrainCellLevel);

struct HtcExample {
    std::vector<RegionId> region_path;
};
HtcExample make_htc(const NormalizedAddress& addr, const AdminTree& tree);

// Everything the trainer needs for one node of one sample.
struct NodeTargets {
    TokenizedNode tokens;
    MlmExample mlm;
    GeoExample geo;
    HtcExample htc;
};

struct PretrainSample {
    std::size_t sample_index = 0;
    std::vector<NodeId> node_ids;
    std::size_t features_index = 0;
    std::vector<NodeTargets> nodes;
};

PretrainSample make_pretrain_sample(const HeteroGraph& g, const AdminTree& tree, const Vocab& vocab,
                                    const SampledSubgraph& s, std::size_t sample_index, std::uint64_t seed,
                                    int max_seq_len);

nlohmann::json pretrain_sample_to_json(const PretrainSample& p, const std::string& features_part);
PretrainSample pretrain_sample_from_json(const nlohmann::json& j);

}  // namespace geoaddr
