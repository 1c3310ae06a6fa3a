#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "npn/corpus.hpp"
#include "npn/lexicon.hpp"
#include "npn/rng.hpp"

namespace npn {

struct GenConfig {
    int n_docs = 100;
    int entities_per_doc = 4;   // roster size is drawn from [2, entities_per_doc]
    int steps_per_doc = 8;
    double elision_rate = 0.3;  // target fraction of sentences with no surface entity mention
    double combine_rate = 0.5;  // chance each extra entity joins the composition
    uint64_t seed = 0;

    void validate() const {
        if (n_docs < 1) throw std::invalid_argument("gen_synthetic: n_docs must be >= 1");
        if (entities_per_doc < 2)
            throw std::invalid_argument("gen_synthetic: entities_per_doc must be >= 2 (combine steps need a pair)");
        if (steps_per_doc < 1) throw std::invalid_argument("gen_synthetic: steps_per_doc must be >= 1");
        if (elision_rate < 0.0 || elision_rate > 1.0)
            throw std::invalid_argument("gen_synthetic: elision_rate must be in [0,1]");
        if (combine_rate < 0.0 || combine_rate > 1.0)
            throw std::invalid_argument("gen_synthetic: combine_rate must be in [0,1]");
    }
};

/// Symbolic per-entity attribute state tracked by the corpus generator.
/// Initial values are deliberately outside the "done" end states so most
/// lexicon verbs have a transition available.
struct WorldEntity {
    std::array<std::string, kNumStateTypes> attrs;  // indexed by StateChangeType
    int group;                                      // composition group id

    static WorldEntity initial(int index) {
        WorldEntity e;
        e.attrs[static_cast<int>(StateChangeType::LOCATION)] = "counter";
        e.attrs[static_cast<int>(StateChangeType::COOKEDNESS)] = "raw";
        e.attrs[static_cast<int>(StateChangeType::TEMPERATURE)] = "room";
        e.attrs[static_cast<int>(StateChangeType::COMPOSITION)] = "not composed";
        e.attrs[static_cast<int>(StateChangeType::SHAPE)] = "intact";
        e.attrs[static_cast<int>(StateChangeType::CLEANLINESS)] = "dirty";
        e.group = index;
        return e;
    }
};

/// Tracks entity attributes and composition groups while documents are being
/// generated; the emitted gold annotations are exact by construction.
class World {
  public:
    explicit World(int n) {
        for (int i = 0; i < n; ++i) entities_.push_back(WorldEntity::initial(i));
    }

    int size() const { return static_cast<int>(entities_.size()); }

    const std::string& attr(int entity, StateChangeType t) const {
        return entities_[static_cast<size_t>(entity)].attrs[static_cast<int>(t)];
    }

    bool in_combined_form(int entity) const { return group_members(entities_[static_cast<size_t>(entity)].group).size() >= 2; }

    std::vector<int> group_members(int group) const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i)
            if (entities_[static_cast<size_t>(i)].group == group) out.push_back(i);
        return out;
    }

    /// The unique composition group of size >= 2, if one exists.
    std::vector<int> combined_members() const {
        for (int i = 0; i < size(); ++i) {
            auto m = group_members(entities_[static_cast<size_t>(i)].group);
            if (m.size() >= 2) return m;
        }
        return {};
    }

    std::vector<int> solo_entities() const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i)
            if (!in_combined_form(i)) out.push_back(i);
        return out;
    }

    /// True when applying `change` to the target set moves at least one
    /// member (the union-over-transitions gold rule).
    bool transitions(const StateChange& change, const std::vector<int>& targets) const {
        for (int e : targets)
            if (attr(e, change.type) != change.end) return true;
        return false;
    }

    /// True when *every* change of the verb transitions on the target set;
    /// generated steps require this so gold end states stay verb-determined.
    bool fully_transitions(const std::set<StateChange>& changes, const std::vector<int>& targets) const {
        for (const StateChange& c : changes)
            if (!transitions(c, targets)) return false;
        return !changes.empty();
    }

    void apply(const std::set<StateChange>& changes, const std::vector<int>& targets) {
        for (int e : targets)
            for (const StateChange& c : changes) entities_[static_cast<size_t>(e)].attrs[static_cast<int>(c.type)] = c.end;
    }

    /// Merge all targets into one composition group.
    void merge(const std::vector<int>& targets) {
        if (targets.empty()) return;
        int g = entities_[static_cast<size_t>(targets[0])].group;
        for (int e : targets) entities_[static_cast<size_t>(e)].group = g;
    }

  private:
    std::vector<WorldEntity> entities_;
};

namespace gen {

inline const std::vector<std::string>& entity_pool() {
    static const std::vector<std::string> pool = {
        "flour",    "water",   "sugar",   "salt",    "butter",  "milk",    "eggs",     "beets",
        "carrots",  "onions",  "tomatoes", "garlic", "chicken", "beef",    "rice",     "pasta",
        "beans",    "potatoes", "celery",  "peppers", "mushrooms", "spinach", "cheese", "cream",
        "yogurt",   "honey",   "oats",    "cinnamon", "vanilla", "nutmeg",  "basil",    "parsley",
        "thyme",    "ginger",  "lemons",  "apples",  "berries", "walnuts", "raisins",  "cabbage"};
    return pool;
}

/// Verb inventories by effect; order encodes frequency rank (earlier =
/// more common, sampled with 1/(rank+1) weights for a long tail).
struct VerbTables {
    std::vector<std::vector<std::string>> categories = {
        {"wash", "rinse", "scrub", "soak", "wipe", "clean"},
        {"chop", "slice", "cut", "dice", "carve", "split"},
        {"knead", "roll", "press", "mold"},
        {"mash", "crush", "squeeze", "puree"},
        {"pound"},
        {"bake", "boil", "fry", "simmer", "steam", "roast", "grill", "cook", "braise", "toast", "poach", "saute",
         "microwave"},
        {"warm", "heat", "melt", "reheat"},
        {"chill", "cool", "refrigerate", "freeze"},
        {"thaw"},
        {"drain", "dry"},
        {"grease", "smear"},
        {"place", "put", "transfer", "arrange", "spread", "hang", "lay", "serve", "shelve"},
    };
    std::vector<std::string> combine_head = {"mix", "combine", "whisk", "blend", "beat"};
    // verb -> preposition for "<verb> the <e> <prep> the mixture"
    std::vector<std::pair<std::string, std::string>> combine_add = {
        {"add", "to"}, {"stir", "into"}, {"fold", "into"}, {"dissolve", "into"}};
    std::set<std::string> durative = {"simmer", "bake",  "boil",  "soak",  "chill",  "steam", "roast",    "grill",
                                      "braise", "toast", "cook",  "freeze", "poach", "saute", "microwave", "knead"};
    std::vector<std::string> minutes = {"2", "3", "5", "10", "15", "20", "30", "45"};

    void check_against(const ActionLexicon& lex) const {
        auto need = [&](const std::string& v) {
            if (!lex.contains(v))
                throw std::invalid_argument("gen_synthetic: generator verb '" + v + "' missing from lexicon");
        };
        for (const auto& cat : categories)
            for (const auto& v : cat) need(v);
        for (const auto& v : combine_head) need(v);
        for (const auto& [v, p] : combine_add) need(v);
    }
};

inline int weighted_rank_pick(int n, std::mt19937_64& rng) {
    // P(i) proportional to 1/(i+1)
    std::vector<double> cum(static_cast<size_t>(n));
    double tot = 0.0;
    for (int i = 0; i < n; ++i) {
        tot += 1.0 / (i + 1.0);
        cum[static_cast<size_t>(i)] = tot;
    }
    std::uniform_real_distribution<double> u(0.0, tot);
    double x = u(rng);
    for (int i = 0; i < n; ++i)
        if (x <= cum[static_cast<size_t>(i)]) return i;
    return n - 1;
}

}  // namespace gen

/// One synthetic procedural document, produced with an exact symbolic world.
/// Shape: prep steps on named entities, a run of combine steps that fold the
/// roster into one mixture, then steps on the mixture (or leftover solos).
/// A rate-controlled share of sentences hides its arguments ("simmer for 10
/// minutes", "stir them", "bake the mixture"), with the gold mask pointing at
/// the most recently affected entity set.
inline Document generate_document(const GenConfig& cfg, const ActionLexicon& lexicon, const gen::VerbTables& verbs,
                                  int doc_index) {
    auto rng = make_rng(derive_seed(cfg.seed, "gen_synthetic/doc", static_cast<uint64_t>(doc_index)));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    Document doc;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "doc%06d", doc_index);
        doc.id = buf;
    }

    // roster
    const auto& pool = gen::entity_pool();
    int k = 2 + static_cast<int>(rng() % static_cast<uint64_t>(std::max(1, cfg.entities_per_doc - 1)));
    {
        std::vector<int> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int i = 0; i < k; ++i) doc.entities.push_back(pool[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }

    World world(k);

    // plan: S steps, n_comb combine positions starting at `start`
    int s_total = cfg.steps_per_doc;
    if (cfg.steps_per_doc > 2) s_total = cfg.steps_per_doc - 1 + static_cast<int>(rng() % 3);
    int n_comb = 1;
    for (int i = 0; i < k - 2; ++i)
        if (coin(rng) < cfg.combine_rate) ++n_comb;
    n_comb = std::min(n_comb, s_total);
    int avail = s_total - n_comb;
    int start = avail == 0 ? 0 : avail * 30 / 100 + static_cast<int>(rng() % static_cast<uint64_t>(std::max(1, avail * 25 / 100 + 1)));
    start = std::min(start, avail);

    int elidable = 0;
    for (int t = 0; t < s_total; ++t) {
        bool is_combine = t >= start && t < start + n_comb;
        if (!is_combine && t > 0) ++elidable;
    }
    double elide_p = elidable == 0 ? 0.0 : std::min(0.95, cfg.elision_rate * s_total / elidable);

    std::vector<int> last_affected;

    auto changes_of = [&](const std::string& verb) { return lexicon.state_changes_for(verb); };

    // Pick a verb whose every induced change moves the target set; location
    // verbs guarantee a fallback.
    auto pick_verb = [&](const std::vector<int>& targets, bool want_durative) -> std::string {
        std::vector<int> order(verbs.categories.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int pass = 0; pass < 2; ++pass) {
            for (int ci : order) {
                const auto& cat = verbs.categories[static_cast<size_t>(ci)];
                int vi = gen::weighted_rank_pick(static_cast<int>(cat.size()), rng);
                for (int off = 0; off < static_cast<int>(cat.size()); ++off) {
                    const std::string& v = cat[static_cast<size_t>((vi + off) % cat.size())];
                    if (want_durative && pass == 0 && !verbs.durative.count(v)) continue;
                    if (world.fully_transitions(changes_of(v), targets)) return v;
                }
            }
        }
        throw std::logic_error("gen_synthetic: no transitioning verb found (lexicon too small?)");
    };

    auto mask_of = [&](const std::vector<int>& targets) {
        std::vector<uint8_t> m(static_cast<size_t>(k), 0);
        for (int e : targets) m[static_cast<size_t>(e)] = 1;
        return m;
    };

    auto emit = [&](std::vector<std::string> sentence, const std::set<std::string>& actions,
                    const std::vector<int>& targets, std::vector<int> combine_group) {
        Annotation a;
        a.actions = actions;
        a.entity_mask = mask_of(targets);
        for (int e = 0; e < k; ++e) a.combined.push_back(world.in_combined_form(e) ? 1 : 0);
        for (const auto& verb : actions) {
            for (const StateChange& c : changes_of(verb))
                if (world.transitions(c, targets)) a.state_changes.insert(c);
        }
        a.has_actions = true;
        a.has_entities = true;
        a.has_states = true;
        a.combine_group = std::move(combine_group);
        for (const auto& verb : actions) world.apply(changes_of(verb), targets);
        if (!a.combine_group.empty()) world.merge(a.combine_group);
        doc.sentences.push_back(std::move(sentence));
        doc.gold.push_back(std::move(a));
        last_affected = targets;
    };

    auto named_list = [&](const std::vector<int>& targets) {
        std::vector<std::string> toks = {"the"};
        for (size_t i = 0; i < targets.size(); ++i) {
            if (i) toks.push_back("and");
            toks.push_back(doc.entities[static_cast<size_t>(targets[i])]);
        }
        return toks;
    };

    auto emit_named_step = [&](const std::vector<int>& targets) {
        bool two_verbs = targets.size() <= 2 && coin(rng) < 0.25;
        std::string v1 = pick_verb(targets, false);
        std::vector<std::string> sentence;
        std::set<std::string> actions{v1};
        if (two_verbs) {
            // second verb with a distinct change type so application order
            // cannot matter
            for (int tries = 0; tries < 6; ++tries) {
                std::string v2 = pick_verb(targets, false);
                bool overlap = false;
                for (const StateChange& c1 : changes_of(v1))
                    for (const StateChange& c2 : changes_of(v2))
                        if (c1.type == c2.type) overlap = true;
                if (v2 != v1 && !overlap && world.fully_transitions(changes_of(v2), targets)) {
                    actions.insert(v2);
                    sentence = {v1, "and", v2};
                    break;
                }
            }
        }
        if (sentence.empty()) sentence = {v1};
        auto rest = named_list(targets);
        sentence.insert(sentence.end(), rest.begin(), rest.end());
        emit(std::move(sentence), actions, targets, {});
    };

    auto emit_elided_step = [&]() {
        std::vector<int> targets = last_affected;
        auto combined = world.combined_members();
        bool target_is_mixture = !combined.empty() && targets == combined;
        bool mixture_form = target_is_mixture && coin(rng) < 0.5;
        std::string v = pick_verb(targets, !mixture_form && coin(rng) < 0.5);
        std::vector<std::string> sentence;
        if (mixture_form) {
            sentence = {v, "the", "mixture"};
        } else if (verbs.durative.count(v) && coin(rng) < 0.7) {
            sentence = {v, "for", verbs.minutes[rng() % verbs.minutes.size()], "minutes"};
        } else {
            sentence = {v, targets.size() == 1 ? "it" : "them"};
        }
        emit(std::move(sentence), {v}, targets, {});
    };

    std::vector<int> join_order(static_cast<size_t>(k));
    std::iota(join_order.begin(), join_order.end(), 0);
    std::shuffle(join_order.begin(), join_order.end(), rng);
    int joined = 0;

    for (int t = 0; t < s_total; ++t) {
        bool is_combine = t >= start && t < start + n_comb;
        if (is_combine) {
            if (joined == 0) {
                std::vector<int> pair = {join_order[0], join_order[1]};
                std::sort(pair.begin(), pair.end());
                std::string v = verbs.combine_head[rng() % verbs.combine_head.size()];
                std::vector<std::string> sentence = {v};
                auto rest = named_list(pair);
                sentence.insert(sentence.end(), rest.begin(), rest.end());
                emit(std::move(sentence), {v}, pair, pair);
                joined = 2;
            } else {
                int e = join_order[static_cast<size_t>(joined)];
                ++joined;
                auto group = world.combined_members();
                std::vector<int> targets = group;
                targets.push_back(e);
                std::sort(targets.begin(), targets.end());
                const auto& [v, prep] = verbs.combine_add[rng() % verbs.combine_add.size()];
                std::vector<std::string> sentence = {v, "the", doc.entities[static_cast<size_t>(e)], prep, "the",
                                                     "mixture"};
                emit(std::move(sentence), {v}, targets, targets);
            }
            continue;
        }
        bool can_elide = t > 0 && !last_affected.empty();
        if (can_elide && coin(rng) < elide_p) {
            emit_elided_step();
            continue;
        }
        // named step: pick a target among solos before the combine phase,
        // and mostly the mixture after it
        auto combined = world.combined_members();
        auto solos = world.solo_entities();
        std::vector<int> targets;
        if (!combined.empty() && (solos.empty() || coin(rng) < 0.75)) {
            targets = combined;
        } else {
            int e = solos[rng() % solos.size()];
            targets = {e};
            if (solos.size() >= 2 && coin(rng) < 0.3) {
                int e2 = solos[rng() % solos.size()];
                if (e2 != e) {
                    targets.push_back(e2);
                    std::sort(targets.begin(), targets.end());
                }
            }
        }
        emit_named_step(targets);
    }

    doc.validate();
    return doc;
}

/// Deterministic synthetic corpus: same config (including seed) yields a
/// byte-identical corpus.
inline Corpus gen_synthetic(const GenConfig& cfg, const ActionLexicon& lexicon) {
    cfg.validate();
    gen::VerbTables verbs;
    verbs.check_against(lexicon);
    Corpus corpus;
    corpus.reserve(static_cast<size_t>(cfg.n_docs));
    for (int d = 0; d < cfg.n_docs; ++d) corpus.push_back(generate_document(cfg, lexicon, verbs, d));
    return corpus;
}

}  // namespace npn
