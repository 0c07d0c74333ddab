#include "geoaddr/pretask.hpp"

#include <algorithm>
#include <set>

#include "geoaddr/errors.hpp"

namespace geoaddr {

namespace {

const std::vector<std::vector<TokenId>> kEmptyPool;

bool starts_with_hashes(const std::string& s) { return s.size() > 2 && s[0] == '#' && s[1] == '#'; }

}  // namespace

Vocab::Vocab() {
    for (const char* t : {"[PAD]", "[CLS]", "[MASK]", "[UNK]"}) add(t);
}

TokenId Vocab::add(const std::string& token) {
    if (auto it = ids_.find(token); it != ids_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

TokenId Vocab::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkToken : it->second;
}

bool Vocab::is_continuation(TokenId id) const { return starts_with_hashes(token(id)); }

std::vector<TokenId> Vocab::encode_word(const std::string& word) const {
    if (auto it = ids_.find(word); it != ids_.end() && !starts_with_hashes(word)) return {it->second};
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < word.size(); ++i) {
        const std::string piece = i == 0 ? std::string(1, word[i]) : "##" + std::string(1, word[i]);
        out.push_back(id(piece));
    }
    return out;
}

const std::vector<std::vector<TokenId>>& Vocab::pool(int unit_level) const {
    auto it = pools_.find(unit_level);
    return it == pools_.end() ? kEmptyPool : it->second;
}

Vocab Vocab::build(const AdminTree& tree, std::span<const NormalizedAddress> corpus) {
    Vocab v;
    std::set<std::string> words;
    std::set<char> chars;
    auto collect = [&](const std::string& text) {
        for (const auto& w : split_words(text)) {
            words.insert(w.text);
            chars.insert(w.text.begin(), w.text.end());
        }
    };
    for (const auto& [id, r] : tree.regions()) collect(r.name);
    for (const auto& a : corpus) collect(a.full_text);
    for (const auto& w : words) v.add(w);
    for (char c : chars) {
        v.add(std::string(1, c));
        v.add("##" + std::string(1, c));
    }

    std::map<int, std::set<std::vector<TokenId>>> pools;
    auto encode_text = [&](const std::string& text) {
        std::vector<TokenId> out;
        for (const auto& w : split_words(text)) {
            auto ids = v.encode_word(w.text);
            out.insert(out.end(), ids.begin(), ids.end());
        }
        return out;
    };
    for (const auto& [id, r] : tree.regions()) pools[r.level].insert(encode_text(r.name));
    for (const auto& a : corpus) {
        if (!a.road_number.empty()) pools[kRoadNumberUnit].insert(encode_text(a.road_number));
        for (const auto& w : split_words(a.poi_name)) pools[kPoiWordUnit].insert(v.encode_word(w.text));
    }
    for (auto& [level, seqs] : pools) v.pools_[level].assign(seqs.begin(), seqs.end());
    return v;
}

nlohmann::json Vocab::to_json() const {
    nlohmann::json pools = nlohmann::json::object();
    for (const auto& [level, seqs] : pools_) pools[std::to_string(level)] = seqs;
    return {{"tokens", tokens_}, {"pools", pools}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
    Vocab v;
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < 4 || tokens[0] != "[PAD]" || tokens[1] != "[CLS]" || tokens[2] != "[MASK]" || tokens[3] != "[UNK]")
        throw FormatError("vocab must start with [PAD] [CLS] [MASK] [UNK]");
    for (std::size_t i = 4; i < tokens.size(); ++i) v.add(tokens[i]);
    if (v.size() != tokens.size()) throw FormatError("vocab contains duplicate tokens");
    for (const auto& [key, seqs] : j.at("pools").items()) {
        auto parsed = seqs.get<std::vector<std::vector<TokenId>>>();
        for (const auto& seq : parsed)
            for (TokenId t : seq)
                if (t < 0 || static_cast<std::size_t>(t) >= v.size()) throw FormatError("vocab pool token out of range");
        v.pools_[std::stoi(key)] = std::move(parsed);
    }
    return v;
}

TokenizedNode tokenize(const NormalizedAddress& addr, const Vocab& vocab, int max_seq_len) {
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    TokenizedNode t;
    t.raw = addr;
    t.tokens.push_back(kClsToken);
    const std::pair<const std::string*, EntityLabel> fields[] = {
        {&addr.province, EntityLabel::Province}, {&addr.city, EntityLabel::City},
        {&addr.district, EntityLabel::District}, {&addr.town, EntityLabel::Town},
        {&addr.road, EntityLabel::Road},         {&addr.road_number, EntityLabel::RoadNumber},
        {&addr.poi_name, EntityLabel::PoiName}};
    const auto limit = static_cast<std::size_t>(max_seq_len);
    for (const auto& [text, label] : fields) {
        if (text->empty()) continue;
        TokenSpan span{label, static_cast<int>(t.tokens.size()), 0};
        for (const auto& w : split_words(*text))
            for (TokenId id : vocab.encode_word(w.text))
                if (t.tokens.size() < limit) t.tokens.push_back(id);
        span.end = static_cast<int>(t.tokens.size());
        if (span.end > span.begin) t.spans.push_back(span);
    }
    return t;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab) {
    std::string out;
    for (TokenId id : tokens) {
        if (id == kClsToken || id == kPadToken) continue;
        const std::string& tok = vocab.token(id);
        if (starts_with_hashes(tok)) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += tok;
        }
    }
    return out;
}

std::vector<int> token_entity_labels(const TokenizedNode& t) {
    std::vector<int> labels(t.tokens.size(), -1);
    for (std::size_t i = 1; i < t.tokens.size(); ++i) labels[i] = static_cast<int>(EntityLabel::Other);
    for (const auto& s : t.spans)
        for (int i = s.begin; i < s.end; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(s.label);
    return labels;
}

std::vector<MlmUnit> mlm_units(const TokenizedNode& t, const Vocab& vocab) {
    std::vector<MlmUnit> units;
    for (const auto& s : t.spans) {
        if (s.label == EntityLabel::PoiName) {
            int begin = s.begin;
            for (int i = s.begin + 1; i <= s.end; ++i) {
                if (i == s.end || !vocab.is_continuation(t.tokens[static_cast<std::size_t>(i)])) {
                    units.push_back({begin, i, kPoiWordUnit});
                    begin = i;
                }
            }
        } else if (s.label == EntityLabel::RoadNumber) {
            units.push_back({s.begin, s.end, kRoadNumberUnit});
        } else if (s.label != EntityLabel::Other) {
            units.push_back({s.begin, s.end, static_cast<int>(s.label) + 1});
        }
    }
    return units;
}

MlmExample apply_corruption(const TokenizedNode& t, const Vocab& vocab, std::span<const UnitAction> actions, Rng& rng) {
    const auto units = mlm_units(t, vocab);
    MlmExample ex;
    ex.input_tokens = t.tokens;
    ex.target_tokens.assign(t.tokens.size(), kIgnoreTarget);
    for (UnitAction a : actions) {
        if (a.unit >= units.size()) throw DomainError("corruption names a unit that does not exist");
        const MlmUnit& u = units[a.unit];
        const auto begin = t.tokens.begin() + u.begin;
        const auto end = t.tokens.begin() + u.end;
        const std::vector<TokenId> original(begin, end);
        if (a.action == MlmAction::ReplaceSameLevel) {
            std::vector<const std::vector<TokenId>*> candidates;
            for (const auto& seq : vocab.pool(u.unit_level))
                if (seq.size() == original.size() && seq != original) candidates.push_back(&seq);
            if (candidates.empty()) {
                a.action = MlmAction::MaskAll;
                a.fallback = true;
            } else {
                const auto& pick = *candidates[rng.index(candidates.size())];
                std::copy(pick.begin(), pick.end(), ex.input_tokens.begin() + u.begin);
            }
        }
        if (a.action == MlmAction::MaskAll)
            std::fill(ex.input_tokens.begin() + u.begin, ex.input_tokens.begin() + u.end, kMaskToken);
        std::copy(original.begin(), original.end(), ex.target_tokens.begin() + u.begin);
        ex.corruption_log.push_back(a);
    }
    return ex;
}

MlmExample make_mlm(const TokenizedNode& t, const Vocab& vocab, Rng& rng, const MlmOptions& opts) {
    const auto units = mlm_units(t, vocab);
    std::vector<UnitAction> actions;
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (rng.uniform() >= opts.select_prob) continue;
        const double r = rng.uniform();
        MlmAction action = MlmAction::Keep;
        if (r < opts.mask_prob)
            action = MlmAction::MaskAll;
        else if (r < opts.mask_prob + opts.replace_prob)
            action = MlmAction::ReplaceSameLevel;
        actions.push_back({i, action, false});
    }
    return apply_corruption(t, vocab, actions, rng);
}

GeoExample make_geo(const AddressNode& node, int level) {
    return {encode_2lt3c(cell_from_latlon(node.lat, node.lon, level))};
}

HtcExample make_htc(const NormalizedAddress& addr, const AdminTree& tree) {
    auto path = admin_path(addr, tree);
    if (path.size() > static_cast<std::size_t>(kAdminLevels)) path.resize(kAdminLevels);
    return {std::move(path)};
}

PretrainSample make_pretrain_sample(const HeteroGraph& g, const AdminTree& tree, const Vocab& vocab,
                                    const SampledSubgraph& s, std::size_t sample_index, std::uint64_t seed,
                                    int max_seq_len) {
    PretrainSample out;
    out.sample_index = sample_index;
    out.features_index = sample_index;
    out.node_ids = s.node_ids;
    Rng rng(derive_seed(seed, sample_index));
    for (NodeId v : s.node_ids) {
        const AddressNode& node = g.node(v);
        NodeTargets nt;
        nt.tokens = tokenize(node.address, vocab, max_seq_len);
        nt.mlm = make_mlm(nt.tokens, vocab, rng);
        nt.geo = make_geo(node);
        nt.htc = make_htc(node.address, tree);
        out.nodes.push_back(std::move(nt));
    }
    return out;
}

nlohmann::json pretrain_sample_to_json(const PretrainSample& p, const std::string& features_part) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : p.nodes) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : n.tokens.spans) spans.push_back({std::string(entity_label_name(s.label)), s.begin, s.end});
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : n.mlm.corruption_log) actions.push_back({a.unit, static_cast<int>(a.action), a.fallback});
        nodes.push_back({{"address", n.tokens.raw},
                         {"tokens", n.tokens.tokens},
                         {"spans", spans},
                         {"mlm", {{"input", n.mlm.input_tokens}, {"target", n.mlm.target_tokens}, {"actions", actions}}},
                         {"geo", n.geo.label.chars},
                         {"geo_level", n.geo.label.level},
                         {"htc", n.htc.region_path}});
    }
    return {{"sample_index", p.sample_index},
            {"node_ids", p.node_ids},
            {"features", {{"part", features_part}, {"index", p.features_index}}},
            {"nodes", nodes}};
}

PretrainSample pretrain_sample_from_json(const nlohmann::json& j) {
    PretrainSample p;
    j.at("sample_index").get_to(p.sample_index);
    j.at("node_ids").get_to(p.node_ids);
    j.at("features").at("index").get_to(p.features_index);
    for (const auto& n : j.at("nodes")) {
        NodeTargets nt;
        n.at("address").get_to(nt.tokens.raw);
        n.at("tokens").get_to(nt.tokens.tokens);
        for (const auto& s : n.at("spans")) {
            const auto name = s.at(0).get<std::string>();
            TokenSpan span;
            bool found = false;
            for (int l = 0; l < kEntityLabels; ++l) {
                if (entity_label_name(static_cast<EntityLabel>(l)) == name) {
                    span.label = static_cast<EntityLabel>(l);
                    found = true;
                }
            }
            if (!found) throw FormatError("unknown entity label " + name);
            span.begin = s.at(1).get<int>();
            span.end = s.at(2).get<int>();
            nt.tokens.spans.push_back(span);
        }
        const auto& m = n.at("mlm");
        m.at("input").get_to(nt.mlm.input_tokens);
        m.at("target").get_to(nt.mlm.target_tokens);
        for (const auto& a : m.at("actions"))
            nt.mlm.corruption_log.push_back({a.at(0).get<std::size_t>(), static_cast<MlmAction>(a.at(1).get<int>()),
                                             a.at(2).get<bool>()});
        nt.geo.label.chars = n.at("geo").get<std::string>();
        nt.geo.label.level = n.at("geo_level").get<int>();
        n.at("htc").get_to(nt.htc.region_path);
        p.nodes.push_back(std::move(nt));
    }
    return p;
}

}  // namespace geoaddr
