#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "npn/lexicon.hpp"
#include "npn/rng.hpp"

namespace npn {

/// Per-sentence gold labels. The three label-present flags support both weak
/// labeling gaps and the label-dropping regime; `combined` and
/// `combine_group` carry the symbolic simulator's composition bookkeeping
/// (combined form *before* the step; entities merged *by* the step).
struct Annotation {
    std::set<std::string> actions;
    std::vector<uint8_t> entity_mask;
    std::set<StateChange> state_changes;
    bool has_actions = false;
    bool has_entities = false;
    bool has_states = false;
    std::vector<uint8_t> combined;
    std::vector<int> combine_group;

    bool operator==(const Annotation&) const = default;
};

struct Document {
    std::string id;
    std::vector<std::string> entities;
    std::vector<std::vector<std::string>> sentences;
    std::vector<Annotation> gold;

    int num_entities() const { return static_cast<int>(entities.size()); }
    int num_steps() const { return static_cast<int>(sentences.size()); }

    void validate() const {
        if (entities.empty()) throw std::invalid_argument("document '" + id + "': entity roster is empty");
        if (sentences.empty()) throw std::invalid_argument("document '" + id + "': no sentences");
        if (!gold.empty() && gold.size() != sentences.size())
            throw std::invalid_argument("document '" + id + "': gold/sentence count mismatch");
        for (const Annotation& a : gold) {
            if (!a.entity_mask.empty() && a.entity_mask.size() != entities.size())
                throw std::invalid_argument("document '" + id + "': entity mask length mismatch");
            for (int idx : a.combine_group)
                if (idx < 0 || idx >= num_entities())
                    throw std::invalid_argument("document '" + id + "': combine index out of range");
        }
    }

    bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

// ---- JSON-lines serialization ----

inline nlohmann::json to_json(const Annotation& a) {
    nlohmann::json j;
    j["actions"] = a.actions;
    j["mask"] = a.entity_mask;
    auto& st = j["states"] = nlohmann::json::array();
    for (const StateChange& c : a.state_changes) st.push_back({{"type", to_string(c.type)}, {"end", c.end}});
    j["has_actions"] = a.has_actions;
    j["has_entities"] = a.has_entities;
    j["has_states"] = a.has_states;
    if (!a.combined.empty()) j["combined"] = a.combined;
    if (!a.combine_group.empty()) j["combine_group"] = a.combine_group;
    return j;
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
    Annotation a;
    for (const auto& s : j.at("actions")) a.actions.insert(s.get<std::string>());
    a.entity_mask = j.at("mask").get<std::vector<uint8_t>>();
    for (const auto& cj : j.at("states")) {
        auto type = parse_state_type(cj.at("type").get<std::string>());
        if (!type) throw std::runtime_error("annotation: unknown state type " + cj.at("type").get<std::string>());
        a.state_changes.insert(StateChange{*type, cj.at("end").get<std::string>()});
    }
    a.has_actions = j.at("has_actions").get<bool>();
    a.has_entities = j.at("has_entities").get<bool>();
    a.has_states = j.at("has_states").get<bool>();
    if (j.contains("combined")) a.combined = j.at("combined").get<std::vector<uint8_t>>();
    if (j.contains("combine_group")) a.combine_group = j.at("combine_group").get<std::vector<int>>();
    return a;
}

inline nlohmann::json to_json(const Document& d) {
    nlohmann::json j;
    j["id"] = d.id;
    j["entities"] = d.entities;
    j["sentences"] = d.sentences;
    auto& g = j["gold"] = nlohmann::json::array();
    for (const Annotation& a : d.gold) g.push_back(to_json(a));
    return j;
}

inline Document document_from_json(const nlohmann::json& j) {
    Document d;
    d.id = j.at("id").get<std::string>();
    d.entities = j.at("entities").get<std::vector<std::string>>();
    d.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
    if (j.contains("gold"))
        for (const auto& aj : j.at("gold")) d.gold.push_back(annotation_from_json(aj));
    d.validate();
    return d;
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("corpus: cannot open '" + path + "' for writing");
    for (const Document& d : corpus) os << to_json(d).dump() << "\n";
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("corpus: cannot open '" + path + "'");
    Corpus corpus;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            corpus.push_back(document_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return corpus;
}

// ---- weak labeling ----

namespace detail {

inline bool token_matches_entity_word(const std::string& token, const std::string& word) {
    if (token == word) return true;
    auto strip = [](const std::string& s) {
        if (s.size() > 3 && s.back() == 's' && s[s.size() - 2] != 's') return s.substr(0, s.size() - 1);
        return s;
    };
    return strip(token) == strip(word);
}

}  // namespace detail

/// Tokens of a (possibly multi-word) entity name.
inline std::vector<std::string> entity_name_tokens(const std::string& name) {
    std::vector<std::string> out;
    std::istringstream is(name);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

/// True when the entity name occurs in the sentence (consecutive token match
/// with a light plural fold).
inline bool entity_mentioned(const std::vector<std::string>& sentence, const std::string& entity) {
    std::vector<std::string> words = entity_name_tokens(entity);
    if (words.empty()) return false;
    if (sentence.size() < words.size()) return false;
    for (size_t start = 0; start + words.size() <= sentence.size(); ++start) {
        bool ok = true;
        for (size_t k = 0; k < words.size(); ++k)
            if (!detail::token_matches_entity_word(sentence[start + k], words[k])) {
                ok = false;
                break;
            }
        if (ok) return true;
    }
    return false;
}

/// Heuristic labels from lexicon verb matches and roster string matching.
/// Idempotent: output depends only on text, roster, and lexicon.
inline Document weak_label(const Document& input, const ActionLexicon& lexicon) {
    Document doc = input;
    doc.gold.clear();
    doc.gold.reserve(doc.sentences.size());
    for (const auto& sentence : doc.sentences) {
        Annotation a;
        a.actions = lexicon.extract_actions(sentence);
        a.entity_mask.assign(doc.entities.size(), 0);
        for (size_t i = 0; i < doc.entities.size(); ++i)
            if (entity_mentioned(sentence, doc.entities[i])) a.entity_mask[i] = 1;
        for (const std::string& verb : a.actions) {
            auto ch = lexicon.state_changes_for(verb);
            a.state_changes.insert(ch.begin(), ch.end());
        }
        a.has_actions = !a.actions.empty();
        a.has_entities = std::any_of(a.entity_mask.begin(), a.entity_mask.end(), [](uint8_t m) { return m != 0; });
        a.has_states = !a.state_changes.empty();
        doc.gold.push_back(std::move(a));
    }
    return doc;
}

// ---- label dropping (Appendix-D style regime) ----

/// Independently keeps each label-present flag with probability
/// keep_fraction. Text, rosters, and the underlying label payloads are left
/// untouched; only the flags change.
inline Corpus drop_labels(const Corpus& corpus, double keep_fraction, uint64_t seed) {
    if (keep_fraction < 0.0 || keep_fraction > 1.0)
        throw std::invalid_argument("drop_labels: keep_fraction must be in [0,1], got " + std::to_string(keep_fraction));
    Corpus out = corpus;
    auto rng = make_rng(derive_seed(seed, "drop_labels"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Document& d : out)
        for (Annotation& a : d.gold) {
            a.has_actions = a.has_actions && u(rng) < keep_fraction;
            a.has_entities = a.has_entities && u(rng) < keep_fraction;
            a.has_states = a.has_states && u(rng) < keep_fraction;
        }
    return out;
}

// ---- vocabulary ----

/// Token -> index map with reserved PAD/UNK/BOS/EOS at indices 0..3.
class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr const char* kReserved[4] = {"<pad>", "<unk>", "<bos>", "<eos>"};

    Vocab() {
        for (const char* r : kReserved) append(r);
    }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? kUnk : it->second;
    }
    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void append(const std::string& tok) {
        if (index_.count(tok)) throw std::invalid_argument("vocab: duplicate token '" + tok + "'");
        index_[tok] = static_cast<int>(tokens_.size());
        tokens_.push_back(tok);
    }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("vocab: cannot open '" + path + "' for writing");
        for (const auto& t : tokens_) os << t << "\n";
    }

    static Vocab load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("vocab: cannot open '" + path + "'");
        Vocab v;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (lineno <= 4) {
                if (line != kReserved[lineno - 1])
                    throw std::runtime_error("vocab: '" + path + "' line " + std::to_string(lineno) +
                                             " is not the expected reserved token");
                continue;
            }
            v.append(line);
        }
        return v;
    }

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Word vocabulary over sentence tokens: frequency >= min_freq, ordered by
/// (freq desc, lexicographic) after the reserved tokens.
inline Vocab build_vocab(const Corpus& corpus, int min_freq = 1) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: corpus is empty");
    std::map<std::string, long long> freq;
    for (const Document& d : corpus)
        for (const auto& s : d.sentences)
            for (const auto& t : s) ++freq[t];
    std::vector<std::pair<std::string, long long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, f] : items)
        if (f >= min_freq) v.append(tok);
    return v;
}

/// Entity-name vocabulary over document rosters, same ordering rule.
inline Vocab build_entity_vocab(const Corpus& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_entity_vocab: corpus is empty");
    std::map<std::string, long long> freq;
    for (const Document& d : corpus)
        for (const auto& e : d.entities) ++freq[e];
    std::vector<std::pair<std::string, long long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, f] : items) v.append(tok);
    return v;
}

// ---- splits ----

enum class Split { Train, Dev, Test };

/// 80/10/10 assignment by stable hash of the document id.
inline Split split_of(const std::string& doc_id) {
    uint64_t h = splitmix64(fnv1a64(doc_id)) % 10;
    if (h < 8) return Split::Train;
    if (h == 8) return Split::Dev;
    return Split::Test;
}

inline Corpus select_split(const Corpus& corpus, Split s) {
    Corpus out;
    for (const Document& d : corpus)
        if (split_of(d.id) == s) out.push_back(d);
    return out;
}

}  // namespace npn
