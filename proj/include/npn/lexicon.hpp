#pragma once

#include <array>
#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace npn {

/// The six attribute dimensions an action can change. Closed set.
enum class StateChangeType { LOCATION, COOKEDNESS, TEMPERATURE, COMPOSITION, SHAPE, CLEANLINESS };

constexpr int kNumStateTypes = 6;
constexpr const char* kStateTypeNames[kNumStateTypes] = {"LOCATION",    "COOKEDNESS", "TEMPERATURE",
                                                         "COMPOSITION", "SHAPE",      "CLEANLINESS"};
constexpr const char* kNoChangeLabel = "NO_CHANGE";

inline std::string to_string(StateChangeType t) { return kStateTypeNames[static_cast<int>(t)]; }

inline std::optional<StateChangeType> parse_state_type(const std::string& s) {
    for (int i = 0; i < kNumStateTypes; ++i)
        if (s == kStateTypeNames[i]) return static_cast<StateChangeType>(i);
    return std::nullopt;
}

struct StateChange {
    StateChangeType type;
    std::string end;
    auto operator<=>(const StateChange&) const = default;
};

struct ActionEntry {
    std::string name;
    std::set<StateChange> changes;
};

/// Ordered end-state labels per type with NO_CHANGE reserved at index 0.
/// Non-location vocabularies are fixed; LOCATION registers labels from the
/// lexicon in first-seen order, capped so the predictor head stays desk-sized.
class EndStateVocab {
  public:
    static constexpr int kLocationCap = 24;

    EndStateVocab() {
        for (auto& v : labels_) v.push_back(kNoChangeLabel);
        add_fixed(StateChangeType::TEMPERATURE, {"hot", "cold", "room"});
        add_fixed(StateChangeType::COOKEDNESS, {"cooked", "raw"});
        add_fixed(StateChangeType::CLEANLINESS, {"clean", "dirty", "dry"});
        add_fixed(StateChangeType::COMPOSITION, {"composed", "not composed"});
        add_fixed(StateChangeType::SHAPE, {"molded", "hit", "deformed", "separated"});
    }

    const std::vector<std::string>& labels(StateChangeType t) const { return labels_[static_cast<size_t>(t)]; }
    int size(StateChangeType t) const { return static_cast<int>(labels(t).size()); }

    int index_of(StateChangeType t, const std::string& label) const {
        const auto& v = labels(t);
        auto it = std::find(v.begin(), v.end(), label);
        if (it == v.end()) return -1;
        return static_cast<int>(it - v.begin());
    }

    bool contains(StateChangeType t, const std::string& label) const { return index_of(t, label) >= 0; }

    /// Register a label; only LOCATION accepts new ones.
    bool register_label(StateChangeType t, const std::string& label) {
        if (contains(t, label)) return true;
        if (t != StateChangeType::LOCATION) return false;
        if (size(t) >= kLocationCap + 1) return false;
        labels_[static_cast<size_t>(t)].push_back(label);
        return true;
    }

  private:
    std::array<std::vector<std::string>, kNumStateTypes> labels_;

    void add_fixed(StateChangeType t, std::initializer_list<const char*> ls) {
        for (const char* l : ls) labels_[static_cast<size_t>(t)].push_back(l);
    }
};

namespace inflect {

/// Candidate lemmas for a surface token: -s/-es/-ies, -ed/-d, -ing forms with
/// consonant undoubling and final-e restoration. Over-generation is harmless
/// because candidates are checked against the known action inventory.
inline std::vector<std::string> lemma_candidates(const std::string& tok) {
    std::vector<std::string> out{tok};
    auto push = [&](std::string s) {
        if (s.size() >= 2 && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
    };
    size_t n = tok.size();
    auto ends = [&](const char* suf) {
        size_t m = std::string(suf).size();
        return n >= m && tok.compare(n - m, m, suf) == 0;
    };
    auto undouble = [&](std::string s) {
        if (s.size() >= 2 && s[s.size() - 1] == s[s.size() - 2]) s.pop_back();
        return s;
    };
    if (ends("ies")) push(tok.substr(0, n - 3) + "y");
    if (ends("s") && !ends("ss")) {
        push(tok.substr(0, n - 1));
        if (ends("es")) push(tok.substr(0, n - 2));
    }
    if (ends("ed")) {
        push(tok.substr(0, n - 1));               // baked -> bake
        push(tok.substr(0, n - 2));               // washed -> wash
        push(undouble(tok.substr(0, n - 2)));     // chopped -> chop
    }
    if (ends("ing")) {
        push(tok.substr(0, n - 3));               // mixing -> mix
        push(tok.substr(0, n - 3) + "e");         // baking -> bake
        push(undouble(tok.substr(0, n - 3)));     // chopping -> chop
    }
    return out;
}

}  // namespace inflect

/// Action -> induced state changes, plus the end-state vocabulary collected
/// while loading. Immutable after load.
class ActionLexicon {
  public:
    ActionLexicon() = default;

    /// Loads the JSON-lines lexicon file: one {"action":..., "changes":[...]}
    /// object per line. Throws std::runtime_error naming the offending line.
    static ActionLexicon load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("lexicon: cannot open '" + path + "'");
        return parse(is, path);
    }

    static ActionLexicon parse(std::istream& is, const std::string& origin = "<stream>") {
        ActionLexicon lex;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
            }
            lex.add_entry_checked(j, origin, lineno);
        }
        lex.freeze_order();
        return lex;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("lexicon: cannot open '" + path + "' for writing");
        write(os);
    }

    void write(std::ostream& os) const {
        for (const std::string& name : order_) {
            const ActionEntry& e = entries_.at(name);
            nlohmann::json j;
            j["action"] = e.name;
            auto& arr = j["changes"] = nlohmann::json::array();
            for (const StateChange& c : e.changes) arr.push_back({{"type", to_string(c.type)}, {"end", c.end}});
            os << j.dump() << "\n";
        }
    }

    /// Induced changes for an action name; empty set for unknown actions
    /// (weak labeling tolerates misses).
    std::set<StateChange> state_changes_for(const std::string& action) const {
        auto it = entries_.find(action);
        if (it == entries_.end()) return {};
        return it->second.changes;
    }

    bool contains(const std::string& action) const { return entries_.count(action) != 0; }

    /// Lexicon lemma matched by a surface token, if any.
    std::optional<std::string> match_token(const std::string& token) const {
        for (const std::string& cand : inflect::lemma_candidates(token))
            if (entries_.count(cand)) return cand;
        return std::nullopt;
    }

    /// Union of state changes over every action whose lemma matches a token.
    std::set<StateChange> extract_end_states(const std::vector<std::string>& tokens) const {
        std::set<StateChange> out;
        for (const std::string& tok : tokens) {
            auto m = match_token(tok);
            if (!m) continue;
            const auto& ch = entries_.at(*m).changes;
            out.insert(ch.begin(), ch.end());
        }
        return out;
    }

    /// Lexicon verbs mentioned in a token sequence (deduplicated lemma set).
    std::set<std::string> extract_actions(const std::vector<std::string>& tokens) const {
        std::set<std::string> out;
        for (const std::string& tok : tokens) {
            auto m = match_token(tok);
            if (m) out.insert(*m);
        }
        return out;
    }

    /// Actions in load order; index here is the action's embedding row.
    const std::vector<std::string>& actions() const { return order_; }
    int size() const { return static_cast<int>(order_.size()); }

    int action_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return -1;
        return it->second;
    }

    const EndStateVocab& end_states() const { return vocab_; }

    bool operator==(const ActionLexicon& other) const {
        if (order_ != other.order_) return false;
        for (const auto& [name, e] : entries_)
            if (other.entries_.at(name).changes != e.changes) return false;
        return true;
    }

  private:
    std::map<std::string, ActionEntry> entries_;
    std::vector<std::string> order_;
    std::map<std::string, int> index_;
    EndStateVocab vocab_;

    void add_entry_checked(const nlohmann::json& j, const std::string& origin, int lineno) {
        auto fail = [&](const std::string& msg) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + msg);
        };
        if (!j.is_object() || !j.contains("action") || !j.contains("changes")) fail("expected {action, changes}");
        std::string name = j.at("action").get<std::string>();
        if (name.empty()) fail("empty action name");
        if (entries_.count(name)) fail("duplicate action '" + name + "'");
        ActionEntry entry;
        entry.name = name;
        if (!j.at("changes").is_array() || j.at("changes").empty()) fail("action '" + name + "' has no changes");
        for (const auto& cj : j.at("changes")) {
            std::string type_s = cj.at("type").get<std::string>();
            auto type = parse_state_type(type_s);
            if (!type) fail("unknown state-change type '" + type_s + "' for action '" + name + "'");
            std::string end = cj.at("end").get<std::string>();
            if (end.empty() || end == kNoChangeLabel) fail("invalid end state '" + end + "' for action '" + name + "'");
            if (!vocab_.register_label(*type, end))
                fail("end state '" + end + "' not allowed for type " + type_s +
                     (*type == StateChangeType::LOCATION ? " (location vocabulary cap reached)" : ""));
            entry.changes.insert(StateChange{*type, end});
        }
        order_.push_back(name);
        entries_.emplace(name, std::move(entry));
    }

    void freeze_order() {
        for (int i = 0; i < static_cast<int>(order_.size()); ++i) index_[order_[static_cast<size_t>(i)]] = i;
    }
};

}  // namespace npn
