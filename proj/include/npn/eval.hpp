#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "npn/corpus.hpp"
#include "npn/model.hpp"

namespace npn {

// ---- entity selection metrics ----

/// One step of aligned predictions and gold for entity selection.
struct EntityStep {
    std::vector<double> attention;   // a_{i,t}
    std::vector<uint8_t> gold_mask;  // which entities are affected
    std::vector<uint8_t> combined;   // pre-step combined-form flags
};

struct EntityReport {
    double f1 = 0.0, precision = 0.0, recall = 0.0;
    double ur = 0.0, cr = 0.0;  // recall over uncombined / combined gold positives
    long long tp = 0, fp = 0, fn = 0;
    long long ur_hits = 0, ur_total = 0, cr_hits = 0, cr_total = 0;
};

constexpr double kSelectThreshold = 0.5;

/// Micro-averaged selection metrics over all (step, entity) pairs; an entity
/// is selected when its attention exceeds 50%.
inline EntityReport entity_metrics(const std::vector<EntityStep>& steps) {
    EntityReport r;
    for (const EntityStep& s : steps) {
        if (s.attention.size() != s.gold_mask.size() ||
            (!s.combined.empty() && s.combined.size() != s.gold_mask.size()))
            throw std::invalid_argument("entity_metrics: step lengths misaligned");
        for (size_t i = 0; i < s.attention.size(); ++i) {
            bool sel = s.attention[i] > kSelectThreshold;
            bool gold = s.gold_mask[i] != 0;
            bool comb = !s.combined.empty() && s.combined[i] != 0;
            if (sel && gold) ++r.tp;
            if (sel && !gold) ++r.fp;
            if (!sel && gold) ++r.fn;
            if (gold) {
                if (comb) {
                    ++r.cr_total;
                    if (sel) ++r.cr_hits;
                } else {
                    ++r.ur_total;
                    if (sel) ++r.ur_hits;
                }
            }
        }
    }
    r.precision = r.tp + r.fp == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fp);
    r.recall = r.tp + r.fn == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fn);
    r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    r.ur = r.ur_total == 0 ? 0.0 : static_cast<double>(r.ur_hits) / r.ur_total;
    r.cr = r.cr_total == 0 ? 0.0 : static_cast<double>(r.cr_hits) / r.cr_total;
    return r;
}

// ---- state change metrics ----

/// One step of argmax predictions and gold label indices per type (0 is
/// NO_CHANGE), plus that step's entity-selection accuracy for scaling.
struct StateStep {
    std::array<int, kNumStateTypes> pred{};
    std::array<int, kNumStateTypes> gold{};
    double entity_acc = 1.0;
};

struct StateTypeScore {
    double f1 = 0.0, acc = 0.0, precision = 0.0, recall = 0.0;
};

struct StateReport {
    std::array<StateTypeScore, kNumStateTypes> per_type{};
    double avg_f1 = 0.0, avg_acc = 0.0;
};

/// Per-type correctness of (change fired, end state right), scaled per step
/// by entity-selection accuracy, macro-averaged across the six types.
inline StateReport state_metrics(const std::vector<StateStep>& steps) {
    StateReport rep;
    for (int ty = 0; ty < kNumStateTypes; ++ty) {
        double tp = 0.0;
        long long fired = 0, gold_changed = 0;
        double correct = 0.0;
        for (const StateStep& s : steps) {
            int p = s.pred[static_cast<size_t>(ty)];
            int gold = s.gold[static_cast<size_t>(ty)];
            if (p == gold) correct += s.entity_acc;
            if (p != 0) ++fired;
            if (gold != 0) ++gold_changed;
            if (p != 0 && gold != 0 && p == gold) tp += s.entity_acc;
        }
        StateTypeScore& sc = rep.per_type[static_cast<size_t>(ty)];
        sc.acc = steps.empty() ? 0.0 : correct / static_cast<double>(steps.size());
        sc.precision = fired == 0 ? 0.0 : tp / static_cast<double>(fired);
        sc.recall = gold_changed == 0 ? 0.0 : tp / static_cast<double>(gold_changed);
        sc.f1 = sc.precision + sc.recall == 0.0 ? 0.0 : 2.0 * sc.precision * sc.recall / (sc.precision + sc.recall);
        rep.avg_f1 += sc.f1 / kNumStateTypes;
        rep.avg_acc += sc.acc / kNumStateTypes;
    }
    return rep;
}

// ---- combined tracking report ----

struct TrackingReport {
    EntityReport entity;
    StateReport state;
    long long steps = 0, documents = 0;
};

inline nlohmann::json to_json(const TrackingReport& r) {
    nlohmann::json j;
    j["entity"] = {{"f1", r.entity.f1},       {"precision", r.entity.precision}, {"recall", r.entity.recall},
                   {"ur", r.entity.ur},       {"cr", r.entity.cr},               {"tp", r.entity.tp},
                   {"fp", r.entity.fp},       {"fn", r.entity.fn}};
    auto& st = j["state"];
    for (int i = 0; i < kNumStateTypes; ++i) {
        const auto& s = r.state.per_type[static_cast<size_t>(i)];
        st[kStateTypeNames[i]] = {{"f1", s.f1}, {"acc", s.acc}, {"precision", s.precision}, {"recall", s.recall}};
    }
    st["avg_f1"] = r.state.avg_f1;
    st["avg_acc"] = r.state.avg_acc;
    j["steps"] = r.steps;
    j["documents"] = r.documents;
    return j;
}

/// Fixed-width table in the tracking-results column order:
/// entity F1 / UR / CR, then state-change F1 / Acc.
inline std::string tracking_table(const TrackingReport& r, const std::string& row_label = "model") {
    std::ostringstream os;
    os << std::left << std::setw(28) << "Model" << std::right << std::setw(8) << "F1" << std::setw(8) << "UR"
       << std::setw(8) << "CR" << std::setw(10) << "StateF1" << std::setw(10) << "StateAcc" << "\n";
    os << std::string(72, '-') << "\n";
    os << std::left << std::setw(28) << row_label << std::right << std::fixed << std::setprecision(2)
       << std::setw(8) << 100.0 * r.entity.f1 << std::setw(8) << 100.0 * r.entity.ur << std::setw(8)
       << 100.0 * r.entity.cr << std::setw(10) << 100.0 * r.state.avg_f1 << std::setw(10) << 100.0 * r.state.avg_acc
       << "\n";
    return os.str();
}

// ---- model-level tracking evaluation ----

struct TrackedDoc {
    std::vector<StepTrace> traces;
    const Document* doc = nullptr;
};

inline double step_entity_accuracy(const std::vector<double>& attention, const std::vector<uint8_t>& mask) {
    if (attention.empty()) return 1.0;
    int correct = 0;
    for (size_t i = 0; i < attention.size(); ++i)
        if ((attention[i] > kSelectThreshold) == (mask[i] != 0)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(attention.size());
}

/// Runs the interpreter over documents (inference mode) and scores entity
/// selection and state-change prediction against gold.
inline TrackingReport evaluate_tracking(NpnModel& model, const Corpus& docs, const Vocab& words, const Vocab& entities,
                                        std::vector<TrackedDoc>* traces_out = nullptr) {
    const EndStateVocab& esv = model.lexicon().end_states();
    std::vector<EntityStep> entity_steps;
    std::vector<StateStep> state_steps;
    TrackingReport rep;
    for (const Document& doc : docs) {
        EncodedDoc enc = encode_document(doc, words, entities);
        Graph g;
        DocRun run = model.forward_document(g, enc, RunMode::inference());
        for (size_t t = 0; t < run.traces.size(); ++t) {
            const StepTrace& tr = run.traces[t];
            const Annotation& gold = doc.gold.at(t);
            EntityStep es;
            es.attention = tr.a_t.data;
            es.gold_mask = gold.entity_mask;
            es.combined = gold.combined.empty() ? std::vector<uint8_t>(gold.entity_mask.size(), 0) : gold.combined;
            StateStep ss;
            ss.entity_acc = step_entity_accuracy(es.attention, es.gold_mask);
            for (int ty = 0; ty < kNumStateTypes; ++ty) {
                auto type = static_cast<StateChangeType>(ty);
                int gold_idx = 0;
                for (const StateChange& c : gold.state_changes)
                    if (c.type == type) gold_idx = std::max(0, esv.index_of(type, c.end));
                ss.gold[static_cast<size_t>(ty)] = gold_idx;
                int pred = 0;  // skipped simulation counts as NO_CHANGE
                if (!tr.skipped) {
                    const Tensor& dist = tr.dists[static_cast<size_t>(ty)];
                    pred = static_cast<int>(std::max_element(dist.data.begin(), dist.data.end()) - dist.data.begin());
                }
                ss.pred[static_cast<size_t>(ty)] = pred;
            }
            entity_steps.push_back(std::move(es));
            state_steps.push_back(ss);
            ++rep.steps;
        }
        if (traces_out) traces_out->push_back(TrackedDoc{std::move(run.traces), &doc});
        ++rep.documents;
    }
    rep.entity = entity_metrics(entity_steps);
    rep.state = state_metrics(state_steps);
    rep.documents = static_cast<long long>(docs.size());
    return rep;
}

/// Micro F1 of thresholded w_p against gold action sets (action-selector
/// pretraining readout).
inline double action_micro_f1(NpnModel& model, const Corpus& docs, const Vocab& words, const Vocab& entities) {
    long long tp = 0, fp = 0, fn = 0;
    const ActionLexicon& lex = model.lexicon();
    for (const Document& doc : docs) {
        EncodedDoc enc = encode_document(doc, words, entities);
        Graph g;
        DocRun run = model.forward_document(g, enc, RunMode::inference());
        for (size_t t = 0; t < run.traces.size(); ++t) {
            std::vector<uint8_t> gold(static_cast<size_t>(lex.size()), 0);
            for (const std::string& a : doc.gold.at(t).actions) {
                int idx = lex.action_index(a);
                if (idx >= 0) gold[static_cast<size_t>(idx)] = 1;
            }
            const Tensor& wp = run.traces[t].w_p;
            for (int i = 0; i < lex.size(); ++i) {
                bool sel = wp[i] > 0.5;
                bool is_gold = gold[static_cast<size_t>(i)] != 0;
                if (sel && is_gold) ++tp;
                else if (sel) ++fp;
                else if (is_gold) ++fn;
            }
        }
    }
    double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// ---- representation analyses ----

/// Top-k actions by cosine similarity of their embeddings, self excluded,
/// ties broken lexicographically.
inline std::vector<std::pair<std::string, double>> nn_actions(const Tensor& F, const ActionLexicon& lexicon,
                                                              const std::string& query, int k) {
    int idx = lexicon.action_index(query);
    if (idx < 0) throw std::invalid_argument("nn_actions: unknown action '" + query + "'");
    if (k < 0) throw std::invalid_argument("nn_actions: k must be >= 0");
    int dim = F.dim(1);
    auto row_vec = [&](int r) {
        return std::vector<double>(F.data.begin() + static_cast<size_t>(r) * dim,
                                   F.data.begin() + static_cast<size_t>(r + 1) * dim);
    };
    std::vector<double> q = row_vec(idx);
    std::vector<std::pair<std::string, double>> scored;
    for (int i = 0; i < lexicon.size(); ++i) {
        if (i == idx) continue;
        scored.emplace_back(lexicon.actions()[static_cast<size_t>(i)], cosine(q, row_vec(i)));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<size_t>(k));
    return scored;
}

struct ActionSimilarityStats {
    double within_mean = 0.0;   // pairs sharing at least one change type
    double across_mean = 0.0;   // pairs sharing none
    long long within_pairs = 0, across_pairs = 0;
};

inline ActionSimilarityStats action_similarity_stats(const Tensor& F, const ActionLexicon& lexicon) {
    ActionSimilarityStats st;
    int dim = F.dim(1);
    auto row_vec = [&](int r) {
        return std::vector<double>(F.data.begin() + static_cast<size_t>(r) * dim,
                                   F.data.begin() + static_cast<size_t>(r + 1) * dim);
    };
    auto types_of = [&](int i) {
        std::set<StateChangeType> out;
        for (const StateChange& c : lexicon.state_changes_for(lexicon.actions()[static_cast<size_t>(i)])) out.insert(c.type);
        return out;
    };
    double within = 0.0, across = 0.0;
    for (int i = 0; i < lexicon.size(); ++i) {
        auto ti = types_of(i);
        auto vi = row_vec(i);
        for (int j = i + 1; j < lexicon.size(); ++j) {
            auto tj = types_of(j);
            bool share = std::any_of(tj.begin(), tj.end(), [&](StateChangeType t) { return ti.count(t) != 0; });
            double cs = cosine(vi, row_vec(j));
            if (share) {
                within += cs;
                ++st.within_pairs;
            } else {
                across += cs;
                ++st.across_pairs;
            }
        }
    }
    st.within_mean = st.within_pairs ? within / st.within_pairs : 0.0;
    st.across_mean = st.across_pairs ? across / st.across_pairs : 0.0;
    return st;
}

// ---- composition analysis ----

struct CompositionReport {
    double combined_mean_pct = 0.0;      // mean % cosine change, pairs combined in the step
    double non_combined_mean_pct = 0.0;  // everyone else
    long long combined_pairs = 0, non_combined_pairs = 0;
};

/// Percentage change in pairwise cosine of entity-state embeddings per step,
/// bucketed by whether the pair was merged by that step's combine event.
inline CompositionReport composition_report(const std::vector<TrackedDoc>& docs) {
    CompositionReport rep;
    double comb = 0.0, other = 0.0;
    for (const TrackedDoc& td : docs) {
        for (size_t t = 0; t < td.traces.size(); ++t) {
            const StepTrace& tr = td.traces[t];
            const Annotation& gold = td.doc->gold.at(t);
            std::set<int> merged(gold.combine_group.begin(), gold.combine_group.end());
            int n = static_cast<int>(tr.mem_before.size());
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    double before = cosine(tr.mem_before[static_cast<size_t>(i)].data, tr.mem_before[static_cast<size_t>(j)].data);
                    double after = cosine(tr.mem_after[static_cast<size_t>(i)].data, tr.mem_after[static_cast<size_t>(j)].data);
                    double pct = after == before ? 0.0 : 100.0 * (after - before) / std::max(std::abs(before), 1e-12);
                    if (merged.count(i) && merged.count(j)) {
                        comb += pct;
                        ++rep.combined_pairs;
                    } else {
                        other += pct;
                        ++rep.non_combined_pairs;
                    }
                }
        }
    }
    rep.combined_mean_pct = rep.combined_pairs ? comb / rep.combined_pairs : 0.0;
    rep.non_combined_mean_pct = rep.non_combined_pairs ? other / rep.non_combined_pairs : 0.0;
    return rep;
}

}  // namespace npn
