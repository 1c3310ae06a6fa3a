#pragma once

#include <algorithm>
#include <iostream>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "npn/adam.hpp"
#include "npn/corpus.hpp"
#include "npn/eval.hpp"
#include "npn/losses.hpp"
#include "npn/model.hpp"

namespace npn {

struct TrainConfig {
    double lr = 0.001;
    double lr_decay = 0.1;        // factor applied on a validation plateau
    int plateau_decay_epochs = 3; // epochs without dev improvement before decaying
    int early_stop_epochs = 5;    // epochs without dev improvement before stopping
    double plateau_tol = 1e-5;    // absolute improvement threshold
    int max_epochs = 30;
    int batch_size = 64;          // documents accumulated per optimizer step
    int pretrain_epochs = 5;
    bool no_pretrain = false;
    bool no_coverage_loss = false;
    double keep_fraction = 1.0;   // label-dropping regime on the train split
    LossWeights weights;
    int threads = 1;
    uint64_t seed = 0;

    void validate() const {
        if (lr <= 0.0 || batch_size < 1 || max_epochs < 1 || threads < 1)
            throw std::invalid_argument("TrainConfig: invalid hyperparameters");
        if (keep_fraction < 0.0 || keep_fraction > 1.0)
            throw std::invalid_argument("TrainConfig: keep_fraction must be in [0,1]");
    }
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown train_loss;  // mean per document
    LossBreakdown dev_loss;
    TrackingReport dev_report;
};

struct TrainResult {
    std::vector<EpochLog> history;
    int best_epoch = -1;
    double best_dev_loss = 0.0;
    TrackingReport best_dev_report;
    double pretrain_dev_action_f1 = 0.0;
};

namespace detail {

inline void log_line(std::ostream* log, const nlohmann::json& j) {
    if (log) (*log) << j.dump() << "\n" << std::flush;
}

inline nlohmann::json losses_json(const LossBreakdown& l) {
    nlohmann::json j;
    j["action"] = l.action;
    j["entity"] = l.entity;
    j["coverage"] = l.coverage;
    j["total"] = l.total;
    for (int i = 0; i < kNumStateTypes; ++i) j["state"][kStateTypeNames[i]] = l.state[static_cast<size_t>(i)];
    j["state_sum"] = l.state_sum();
    return j;
}

/// Forward+backward one document in training mode, deferring param-grad
/// accumulation when a sink is given (threaded path).
inline LossBreakdown train_one_doc(NpnModel& model, const EncodedDoc& enc, const TrainConfig& cfg, uint64_t dropout_seed,
                                   std::vector<Tensor>* grad_sink, const std::vector<Param*>& params) {
    auto rng = make_rng(dropout_seed);
    Graph g;
    DocRun run = model.forward_document(g, enc, RunMode::train(rng));
    DocLoss loss = build_losses(g, run, *enc.doc, model.lexicon(), cfg.weights, !cfg.no_coverage_loss);
    g.backward(loss.total, grad_sink == nullptr);
    if (grad_sink) {
        for (auto& [p, gt] : g.param_grads()) {
            if (gt->data.empty()) continue;
            auto it = std::find(params.begin(), params.end(), p);
            if (it == params.end()) continue;  // frozen under an ablation
            Tensor& acc = (*grad_sink)[static_cast<size_t>(it - params.begin())];
            for (int i = 0; i < gt->numel(); ++i) acc[i] += (*gt)[i];
        }
    }
    return loss.values;
}

/// One accumulated optimizer step over a batch of documents. Gradients are
/// averaged over the batch. With threads > 1, workers own contiguous chunks
/// and their buffers merge in thread order, so a fixed configuration is
/// bit-reproducible.
inline LossBreakdown train_batch(NpnModel& model, const std::vector<EncodedDoc>& docs, const std::vector<int>& order,
                                 size_t begin, size_t end, const TrainConfig& cfg, int epoch, AdamState& adam,
                                 const std::vector<Param*>& params) {
    model.store().zero_grads();
    size_t count = end - begin;
    std::vector<LossBreakdown> per_doc(count);
    auto seed_for = [&](size_t pos) {
        return derive_seed(cfg.seed, "dropout", (static_cast<uint64_t>(epoch) << 32) | static_cast<uint64_t>(pos));
    };
    int threads = std::min<int>(cfg.threads, static_cast<int>(count));
    if (threads <= 1) {
        for (size_t i = begin; i < end; ++i)
            per_doc[i - begin] =
                train_one_doc(model, docs[static_cast<size_t>(order[i])], cfg, seed_for(i), nullptr, params);
    } else {
        std::vector<std::vector<Tensor>> buffers(static_cast<size_t>(threads));
        std::vector<std::thread> pool;
        size_t chunk = (count + static_cast<size_t>(threads) - 1) / static_cast<size_t>(threads);
        for (int w = 0; w < threads; ++w) {
            size_t lo = begin + static_cast<size_t>(w) * chunk;
            size_t hi = std::min(end, lo + chunk);
            if (lo >= hi) break;
            buffers[static_cast<size_t>(w)].reserve(params.size());
            for (Param* p : params) buffers[static_cast<size_t>(w)].push_back(Tensor::zeros(p->value.shape));
            pool.emplace_back([&, w, lo, hi]() {
                for (size_t i = lo; i < hi; ++i)
                    per_doc[i - begin] = train_one_doc(model, docs[static_cast<size_t>(order[i])], cfg, seed_for(i),
                                                       &buffers[static_cast<size_t>(w)], params);
            });
        }
        for (auto& t : pool) t.join();
        for (auto& buf : buffers)
            for (size_t pi = 0; pi < buf.size(); ++pi)
                for (int i = 0; i < buf[pi].numel(); ++i) params[pi]->grad[i] += buf[pi][i];
    }
    double inv = 1.0 / static_cast<double>(count);
    for (Param* p : params)
        for (double& gv : p->grad.data) gv *= inv;
    adam_step(params, adam);

    LossBreakdown batch_loss;
    for (const LossBreakdown& l : per_doc) batch_loss.accumulate(l);
    return batch_loss;
}

struct DevPass {
    LossBreakdown loss;  // mean per document
    TrackingReport report;
};

inline DevPass dev_pass(NpnModel& model, const Corpus& dev_docs, const std::vector<EncodedDoc>& enc,
                        const TrainConfig& cfg) {
    DevPass out;
    const EndStateVocab& esv = model.lexicon().end_states();
    std::vector<EntityStep> entity_steps;
    std::vector<StateStep> state_steps;
    for (size_t dI = 0; dI < dev_docs.size(); ++dI) {
        Graph g;
        DocRun run = model.forward_document(g, enc[dI], RunMode::inference());
        DocLoss loss = build_losses(g, run, dev_docs[dI], model.lexicon(), cfg.weights, !cfg.no_coverage_loss);
        out.loss.accumulate(loss.values);
        for (size_t t = 0; t < run.traces.size(); ++t) {
            const StepTrace& tr = run.traces[t];
            const Annotation& gold = dev_docs[dI].gold.at(t);
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
                int pred = 0;
                if (!tr.skipped) {
                    const Tensor& dist = tr.dists[static_cast<size_t>(ty)];
                    pred = static_cast<int>(std::max_element(dist.data.begin(), dist.data.end()) - dist.data.begin());
                }
                ss.pred[static_cast<size_t>(ty)] = pred;
            }
            entity_steps.push_back(std::move(es));
            state_steps.push_back(ss);
            ++out.report.steps;
        }
    }
    if (!dev_docs.empty()) out.loss.scale(1.0 / static_cast<double>(dev_docs.size()));
    out.report.entity = entity_metrics(entity_steps);
    out.report.state = state_metrics(state_steps);
    out.report.documents = static_cast<long long>(dev_docs.size());
    return out;
}

}  // namespace detail

/// Action-selector pretraining: the selector MLP, its encoder, and the word
/// embeddings train alone on the action BCE before the joint run.
inline double pretrain_action_selector(NpnModel& model, const Corpus& train_docs, const Corpus& dev_docs,
                                       const Vocab& words, const Vocab& entities, const TrainConfig& cfg,
                                       std::ostream* log = nullptr) {
    std::vector<EncodedDoc> enc;
    enc.reserve(train_docs.size());
    for (const Document& d : train_docs) enc.push_back(encode_document(d, words, entities));

    std::vector<Param*> params = model.pretrain_params();
    AdamState adam(cfg.lr);
    auto shuffle_rng_base = derive_seed(cfg.seed, "pretrain/shuffle");
    double dev_f1 = 0.0;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        std::vector<int> order(enc.size());
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_rng(splitmix64(shuffle_rng_base ^ static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        long long counted = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            model.store().zero_grads();
            for (size_t i = start; i < stop; ++i) {
                const EncodedDoc& doc = enc[static_cast<size_t>(order[i])];
                auto drng = make_rng(derive_seed(cfg.seed, "pretrain/dropout",
                                                 (static_cast<uint64_t>(epoch) << 32) | static_cast<uint64_t>(i)));
                Graph g;
                auto run = model.forward_actions(g, doc, RunMode::train(drng));
                std::optional<Var> total;
                for (size_t t = 0; t < run.w_p.size(); ++t) {
                    const Annotation& gold = doc.doc->gold.at(t);
                    if (!gold.has_actions) continue;
                    Var l = loss_action(g, run.w_p[t], gold.actions, model.lexicon());
                    total = total ? g.add(*total, l) : l;
                }
                if (!total) continue;
                epoch_loss += g.value(*total)[0];
                ++counted;
                g.backward(*total);
            }
            double inv = 1.0 / static_cast<double>(stop - start);
            for (Param* p : params)
                for (double& gv : p->grad.data) gv *= inv;
            adam_step(params, adam);
        }
        dev_f1 = action_micro_f1(model, dev_docs, words, entities);
        nlohmann::json j;
        j["epoch"] = epoch;
        j["split"] = "pretrain";
        j["lr"] = adam.lr;
        j["losses"] = {{"action", counted ? epoch_loss / counted : 0.0}};
        j["metrics"] = {{"action_f1", dev_f1}};
        detail::log_line(log, j);
    }
    return dev_f1;
}

/// Joint training of the four losses with Adam, gradient accumulation over
/// batches of documents, plateau learning-rate decay, early stopping, and
/// best-dev checkpoint retention (the model is left at the best weights).
inline TrainResult train_npn(NpnModel& model, const Corpus& train_docs_in, const Corpus& dev_docs, const Vocab& words,
                             const Vocab& entities, const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (train_docs_in.empty()) throw std::invalid_argument("train: empty train split");

    Corpus train_docs = cfg.keep_fraction < 1.0
                            ? drop_labels(train_docs_in, cfg.keep_fraction, derive_seed(cfg.seed, "keep_fraction"))
                            : train_docs_in;

    TrainResult result;
    if (!cfg.no_pretrain)
        result.pretrain_dev_action_f1 = pretrain_action_selector(model, train_docs, dev_docs, words, entities, cfg, log);

    std::vector<EncodedDoc> enc;
    enc.reserve(train_docs.size());
    for (const Document& d : train_docs) enc.push_back(encode_document(d, words, entities));
    std::vector<EncodedDoc> dev_enc;
    dev_enc.reserve(dev_docs.size());
    for (const Document& d : dev_docs) dev_enc.push_back(encode_document(d, words, entities));

    std::vector<Param*> params = model.trainable_params();
    AdamState adam(cfg.lr);
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<Tensor> best_snapshot;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<int> order(enc.size());
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        LossBreakdown train_loss;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            train_loss.accumulate(detail::train_batch(model, enc, order, start, stop, cfg, epoch, adam, params));
        }
        train_loss.scale(1.0 / static_cast<double>(enc.size()));

        detail::DevPass dev = detail::dev_pass(model, dev_docs, dev_enc, cfg);

        EpochLog elog;
        elog.epoch = epoch;
        elog.lr = adam.lr;
        elog.train_loss = train_loss;
        elog.dev_loss = dev.loss;
        elog.dev_report = dev.report;
        result.history.push_back(elog);

        nlohmann::json jt;
        jt["epoch"] = epoch;
        jt["split"] = "train";
        jt["lr"] = adam.lr;
        jt["losses"] = detail::losses_json(train_loss);
        detail::log_line(log, jt);
        nlohmann::json jd;
        jd["epoch"] = epoch;
        jd["split"] = "dev";
        jd["lr"] = adam.lr;
        jd["losses"] = detail::losses_json(dev.loss);
        jd["metrics"] = {{"entity_f1", dev.report.entity.f1},
                         {"ur", dev.report.entity.ur},
                         {"cr", dev.report.entity.cr},
                         {"state_avg_f1", dev.report.state.avg_f1},
                         {"state_avg_acc", dev.report.state.avg_acc}};
        detail::log_line(log, jd);

        if (dev.loss.total < best - cfg.plateau_tol) {
            best = dev.loss.total;
            since_best = 0;
            best_snapshot = model.store().snapshot_values();
            result.best_epoch = epoch;
            result.best_dev_loss = best;
            result.best_dev_report = dev.report;
        } else {
            ++since_best;
            if (since_best == cfg.plateau_decay_epochs) adam.lr *= cfg.lr_decay;
            if (since_best >= cfg.early_stop_epochs) break;
        }
    }
    if (!best_snapshot.empty()) model.store().restore_values(best_snapshot);
    return result;
}

}  // namespace npn
