#pragma once

#include <array>
#include <optional>
#include <vector>

#include "npn/corpus.hpp"
#include "npn/graph.hpp"
#include "npn/model.hpp"

namespace npn {

struct LossWeights {
    double action = 1.0;
    double entity = 1.0;
    double state = 1.0;
    double coverage = 1.0;
};

/// Per-batch loss values; `state` is broken out per state-change type.
struct LossBreakdown {
    double action = 0.0;
    double entity = 0.0;
    std::array<double, kNumStateTypes> state{};
    double coverage = 0.0;
    double total = 0.0;

    double state_sum() const {
        double s = 0.0;
        for (double v : state) s += v;
        return s;
    }
    void accumulate(const LossBreakdown& o) {
        action += o.action;
        entity += o.entity;
        for (int i = 0; i < kNumStateTypes; ++i) state[static_cast<size_t>(i)] += o.state[static_cast<size_t>(i)];
        coverage += o.coverage;
        total += o.total;
    }
    void scale(double f) {
        action *= f;
        entity *= f;
        for (double& v : state) v *= f;
        coverage *= f;
        total *= f;
    }
};

namespace detail {

constexpr double kProbFloor = 1e-12;

/// Binary cross-entropy of probabilities against a constant 0/1 target,
/// summed over elements. Probabilities are clamped away from {0,1}.
inline Var bce_sum(Graph& g, Var probs, const std::vector<double>& targets) {
    Var p = g.clamp(probs, kProbFloor, 1.0 - kProbFloor);
    Var y = g.leaf(Tensor::vec(targets));
    std::vector<double> inv(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) inv[i] = 1.0 - targets[i];
    Var pos = g.mul(y, g.log_(p));
    Var neg = g.mul(g.leaf(Tensor::vec(std::move(inv))), g.log_(g.one_minus(p)));
    return g.scale(g.sum(g.add(pos, neg)), -1.0);
}

}  // namespace detail

/// Multi-label action selection loss: BCE of w_p against the multi-hot gold
/// action set.
inline Var loss_action(Graph& g, Var w_p, const std::set<std::string>& gold_actions, const ActionLexicon& lexicon) {
    std::vector<double> target(static_cast<size_t>(lexicon.size()), 0.0);
    for (const std::string& a : gold_actions) {
        int idx = lexicon.action_index(a);
        if (idx >= 0) target[static_cast<size_t>(idx)] = 1.0;
    }
    return detail::bce_sum(g, w_p, target);
}

/// Entity selection loss: BCE of the final attention against the gold mask.
inline Var loss_entity(Graph& g, Var a_t, const std::vector<uint8_t>& gold_mask) {
    std::vector<double> target(gold_mask.begin(), gold_mask.end());
    return detail::bce_sum(g, a_t, target);
}

/// State change loss: negative log-likelihood of the gold end state per type;
/// types without a gold change target NO_CHANGE (index 0).
inline Var loss_state(Graph& g, const std::array<Var, kNumStateTypes>& dists, const std::set<StateChange>& gold,
                      const EndStateVocab& esv, std::array<double, kNumStateTypes>* per_type = nullptr) {
    Var total;
    for (int i = 0; i < kNumStateTypes; ++i) {
        auto t = static_cast<StateChangeType>(i);
        int target = 0;
        for (const StateChange& c : gold)
            if (c.type == t) target = std::max(0, esv.index_of(t, c.end));
        Var nll = g.scale(g.log_(g.at(dists[static_cast<size_t>(i)], target)), -1.0);
        if (per_type) (*per_type)[static_cast<size_t>(i)] = g.value(nll)[0];
        total = i == 0 ? nll : g.add(total, nll);
    }
    return total;
}

/// Coverage loss (one document): -(1/I_d) sum_i log min(1, sum_t a_{i,t}),
/// with the per-entity sum floored away from zero. Steps that carry a gold
/// entity annotation contribute detached values, so gradient reaches only
/// unlabeled steps.
inline Var loss_coverage(Graph& g, const std::vector<StepVars>& steps, const std::vector<bool>& step_has_entity_label,
                         int num_entities) {
    std::vector<Var> sums(static_cast<size_t>(num_entities));
    for (size_t t = 0; t < steps.size(); ++t) {
        Var a = step_has_entity_label[t] ? g.detach(steps[t].a_t) : steps[t].a_t;
        for (int i = 0; i < num_entities; ++i) {
            Var term = g.at(a, i);
            sums[static_cast<size_t>(i)] = t == 0 ? term : g.add(sums[static_cast<size_t>(i)], term);
        }
    }
    Var stacked = g.stack(sums);
    Var clamped = g.clamp(stacked, 1e-8, 1.0);
    return g.scale(g.mean(g.log_(clamped)), -1.0);
}

struct DocLoss {
    Var total;
    LossBreakdown values;
};

/// Assembles the joint objective for one document run, honoring the
/// label-present flags and the coverage ablation. The coverage term is always
/// computed (reported) but joins the optimized total only when enabled.
inline DocLoss build_losses(Graph& g, const DocRun& run, const Document& doc, const ActionLexicon& lexicon,
                            const LossWeights& weights, bool coverage_in_total) {
    DocLoss out;
    const EndStateVocab& esv = lexicon.end_states();
    std::optional<Var> action_sum, entity_sum, state_sum;
    std::vector<bool> entity_labeled;
    auto add_to = [&](std::optional<Var>& acc, Var v) { acc = acc ? g.add(*acc, v) : v; };

    for (size_t t = 0; t < run.steps.size(); ++t) {
        const Annotation& gold = doc.gold.at(t);
        const StepVars& sv = run.steps[t];
        entity_labeled.push_back(gold.has_entities);
        if (gold.has_actions) add_to(action_sum, loss_action(g, sv.w_p, gold.actions, lexicon));
        if (gold.has_entities) add_to(entity_sum, loss_entity(g, sv.a_t, gold.entity_mask));
        if (gold.has_states && !sv.skipped && sv.dists) {
            std::array<double, kNumStateTypes> per_type{};
            Var ls = loss_state(g, *sv.dists, gold.state_changes, esv, &per_type);
            for (int i = 0; i < kNumStateTypes; ++i) out.values.state[static_cast<size_t>(i)] += per_type[static_cast<size_t>(i)];
            add_to(state_sum, ls);
        }
    }
    Var coverage = loss_coverage(g, run.steps, entity_labeled, doc.num_entities());
    out.values.coverage = g.value(coverage)[0];
    if (action_sum) out.values.action = g.value(*action_sum)[0];
    if (entity_sum) out.values.entity = g.value(*entity_sum)[0];

    std::optional<Var> total;
    if (action_sum) add_to(total, g.scale(*action_sum, weights.action));
    if (entity_sum) add_to(total, g.scale(*entity_sum, weights.entity));
    if (state_sum) add_to(total, g.scale(*state_sum, weights.state));
    if (coverage_in_total) add_to(total, g.scale(coverage, weights.coverage));
    out.total = total ? *total : g.leaf(Tensor::scalar(0.0));

    out.values.total = out.values.action * weights.action + out.values.entity * weights.entity +
                       out.values.state_sum() * weights.state +
                       (coverage_in_total ? out.values.coverage * weights.coverage : 0.0);
    return out;
}

}  // namespace npn
