#pragma once

#include <array>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "npn/corpus.hpp"
#include "npn/graph.hpp"
#include "npn/lexicon.hpp"
#include "npn/param.hpp"
#include "npn/rng.hpp"

namespace npn {

struct NpnConfig {
    int hidden = 100;      // instruction encoder size
    int emb = 30;          // action/entity embedding size
    int mlp_hidden = 100;  // action-selector MLP hidden width
    double dropout = 0.3;
    double sim_epsilon = 1e-4;  // "no entity selected" threshold on sum(a_t)
    double wp_guard = 1e-8;     // uniform fallback guard for the w_p normalizer

    // ablations
    bool no_recurrent_attention = false;
    bool no_action_connections = false;
    bool freeze_action_embeddings = false;

    uint64_t init_seed = 0;
};

/// Everything the interpreter computed for one step, as plain tensors.
struct StepTrace {
    Tensor h_act, h_ent;   // per-encoder sentence vectors
    Tensor w_p, w_bar;     // action attention, normalized
    Tensor f_bar;          // action summary embedding
    Tensor h_tilde;        // projected sentence vector
    Tensor d, c, a_t;      // sentence attention, choice simplex, final attention
    bool skipped = false;  // simulation skipped: no entity selected
    Tensor alpha, e_bar, k;
    std::array<Tensor, kNumStateTypes> dists;
    std::vector<Tensor> mem_before, mem_after;
};

/// Graph handles for one step, for loss construction.
struct StepVars {
    Var h_act, h_ent, w_p, w_bar, f_bar, h_tilde, d, c, a_t;
    bool skipped = false;
    Var k;
    std::optional<std::array<Var, kNumStateTypes>> dists;
};

struct DocRun {
    std::vector<StepVars> steps;
    std::vector<StepTrace> traces;
    std::vector<Var> final_memory;
};

/// Entity memory inside a document graph: frozen keys, mutable states, and
/// the previous step's attention.
struct MemoryVars {
    std::vector<Var> keys;
    std::vector<Var> states;
    Var a_prev;
};

/// Tokens and roster mapped onto vocabulary rows.
struct EncodedDoc {
    const Document* doc = nullptr;
    std::vector<std::vector<int>> token_ids;
    std::vector<int> entity_ids;
};

inline EncodedDoc encode_document(const Document& doc, const Vocab& words, const Vocab& entities) {
    EncodedDoc e;
    e.doc = &doc;
    for (const auto& s : doc.sentences) e.token_ids.push_back(words.encode(s));
    for (const auto& name : doc.entities) e.entity_ids.push_back(entities.id(name));
    return e;
}

/// Dropout context for one forward pass.
struct RunMode {
    bool training = false;
    std::mt19937_64* rng = nullptr;

    static RunMode inference() { return RunMode{}; }
    static RunMode train(std::mt19937_64& r) { return RunMode{true, &r}; }
};

enum class EncoderKind { Action, Entity };

/// The Neural Process Network: sentence encoders, action selector, entity
/// selector, simulation module, and state predictors.
class NpnModel {
  public:
    NpnModel(int word_vocab_size, int entity_vocab_size, const ActionLexicon& lexicon, NpnConfig cfg)
        : cfg_(cfg), lexicon_(&lexicon), num_actions_(lexicon.size()) {
        auto rng = make_rng(derive_seed(cfg.init_seed, "model_init"));
        int H = cfg_.hidden, E = cfg_.emb;
        word_emb_ = &store_.create("word_emb", uniform_tensor({word_vocab_size, E}, -0.1, 0.1, rng));
        entity_emb_ = &store_.create("entity_emb", uniform_tensor({entity_vocab_size, E}, -0.1, 0.1, rng));
        F_ = &store_.create("F", uniform_tensor({num_actions_, E}, -0.1, 0.1, rng));
        enc_act_ = GruCell::create(store_, "enc_act", H, E, rng);
        enc_ent_ = GruCell::create(store_, "enc_ent", H, E, rng);
        mlp_W1_ = &store_.create("mlp/W1", glorot_tensor({cfg_.mlp_hidden, H}, rng));
        mlp_b1_ = &store_.create("mlp/b1", Tensor::zeros({cfg_.mlp_hidden}));
        mlp_W2_ = &store_.create("mlp/W2", glorot_tensor({num_actions_, cfg_.mlp_hidden}, rng));
        mlp_b2_ = &store_.create("mlp/b2", Tensor::zeros({num_actions_}));
        W1_ = &store_.create("W1", glorot_tensor({H, H}, rng));
        b1_ = &store_.create("b1", Tensor::zeros({H}));
        int w2_cols = cfg_.no_action_connections ? H : H + num_actions_;
        W2_ = &store_.create("W2", glorot_tensor({E, w2_cols}, rng));
        W3_ = &store_.create("W3", glorot_tensor({3, H}, rng));
        b3_ = &store_.create("b3", Tensor::zeros({3}));
        W4_ = &store_.create("W4", uniform_tensor({E, E, E}, -std::sqrt(6.0 / (E * E)), std::sqrt(6.0 / (E * E)), rng));
        b4_ = &store_.create("b4", Tensor::zeros({E}));
        const EndStateVocab& esv = lexicon.end_states();
        for (int i = 0; i < kNumStateTypes; ++i) {
            auto t = static_cast<StateChangeType>(i);
            int n = esv.size(t);
            int in_dim = t == StateChangeType::LOCATION ? E + H : E;
            head_W_[i] = &store_.create("Ws/" + to_string(t), glorot_tensor({n, in_dim}, rng));
            head_b_[i] = &store_.create("bs/" + to_string(t), Tensor::zeros({n}));
        }
    }

    const NpnConfig& config() const { return cfg_; }
    const ActionLexicon& lexicon() const { return *lexicon_; }
    int num_actions() const { return num_actions_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    /// Overwrite embedding rows from a skipgram table (tokens resolved by
    /// name; misses keep their uniform init).
    void init_embeddings_from_skipgram(const Tensor& table, const Vocab& table_vocab, const Vocab& words,
                                       const Vocab& entities, bool init_actions) {
        auto copy_row = [&](Param& dst, int dst_row, const std::string& token) {
            if (!table_vocab.contains(token)) return;
            int src = table_vocab.id(token);
            for (int j = 0; j < cfg_.emb; ++j)
                dst.value.at2(dst_row, j) = table.at2(src, j);
        };
        for (int i = 0; i < words.size(); ++i) copy_row(*word_emb_, i, words.token(i));
        for (int i = 0; i < entities.size(); ++i) {
            // multi-word entity names average their token vectors
            auto toks = entity_name_tokens(entities.token(i));
            std::vector<double> acc(static_cast<size_t>(cfg_.emb), 0.0);
            int hits = 0;
            for (const auto& t : toks)
                if (table_vocab.contains(t)) {
                    ++hits;
                    int src = table_vocab.id(t);
                    for (int j = 0; j < cfg_.emb; ++j) acc[static_cast<size_t>(j)] += table.at2(src, j);
                }
            if (hits > 0)
                for (int j = 0; j < cfg_.emb; ++j) entity_emb_->value.at2(i, j) = acc[static_cast<size_t>(j)] / hits;
        }
        if (init_actions)
            for (int i = 0; i < num_actions_; ++i) copy_row(*F_, i, lexicon_->actions()[static_cast<size_t>(i)]);
    }

    // ---- sub-modules ----

    Var encode_sentence(Graph& g, const std::vector<int>& token_ids, EncoderKind which) {
        if (token_ids.empty()) throw std::invalid_argument("encode_sentence: empty sentence");
        const GruCell& cell = which == EncoderKind::Action ? enc_act_ : enc_ent_;
        Var h = g.leaf(Tensor::zeros({cfg_.hidden}));
        for (int tok : token_ids) h = gru_step(g, g.row(g.param(*word_emb_), tok), h, cell);
        return h;
    }

    struct ActionSelection {
        Var w_p, w_bar, f_bar;
    };

    /// Eq. 1: sigmoid MLP attention over actions, normalized weighted sum of
    /// action embeddings. Falls back to a uniform (constant) distribution if
    /// the normalizer underflows.
    ActionSelection select_actions(Graph& g, Var h_act, const RunMode& mode) {
        Var hin = g.dropout(h_act, cfg_.dropout, mode.training, *rng_or_die(mode));
        Var hid = g.relu(g.add(g.matvec(g.param(*mlp_W1_), hin), g.param(*mlp_b1_)));
        Var hid_d = g.dropout(hid, cfg_.dropout, mode.training, *rng_or_die(mode));
        Var w_p = g.sigmoid(g.add(g.matvec(g.param(*mlp_W2_), hid_d), g.param(*mlp_b2_)));
        Var total = g.sum(w_p);
        Var w_bar;
        if (g.value(total)[0] < cfg_.wp_guard) {
            w_bar = g.leaf(Tensor::full({num_actions_}, 1.0 / num_actions_));
        } else {
            w_bar = g.div(w_p, total);
        }
        Var f = cfg_.freeze_action_embeddings ? g.detach(g.param(*F_)) : g.param(*F_);
        Var f_bar = g.vecmat(w_bar, f);
        return {w_p, w_bar, f_bar};
    }

    struct EntitySelection {
        Var h_tilde, d, c, a_t;
    };

    /// Eqs. 2-3: key-based sentence attention plus the recurrent choice over
    /// (current attention, previous attention, zero).
    EntitySelection select_entities(Graph& g, Var h_ent, Var w_p, const MemoryVars& mem, const RunMode& mode) {
        Var hin = g.dropout(h_ent, cfg_.dropout, mode.training, *rng_or_die(mode));
        Var h_tilde = g.relu(g.add(g.matvec(g.param(*W1_), hin), g.param(*b1_)));
        Var sel_in = cfg_.no_action_connections ? h_tilde : g.concat(h_tilde, w_p);
        Var proj = g.matvec(g.param(*W2_), sel_in);  // emb-dim query
        std::vector<Var> scores;
        scores.reserve(mem.keys.size());
        for (Var key : mem.keys) scores.push_back(g.dot(key, proj));
        Var d = g.sigmoid(g.stack(scores));
        Var h_tilde_d = g.dropout(h_tilde, cfg_.dropout, mode.training, *rng_or_die(mode));
        Var c = g.softmax(g.add(g.matvec(g.param(*W3_), h_tilde_d), g.param(*b3_)));
        Var a_t;
        if (cfg_.no_recurrent_attention) {
            a_t = d;
        } else {
            a_t = g.add(g.mul(g.at(c, 0), d), g.mul(g.at(c, 1), mem.a_prev));  // c3 weights the zero vector
        }
        return {h_tilde, d, c, a_t};
    }

    struct Simulation {
        bool skipped = false;
        Var alpha, e_bar, k;
        std::vector<Var> new_states;
    };

    /// Eqs. 4-7: weighted entity summary, applicator, and attention-gated
    /// interpolation update (unnormalized attentions gate the overwrite).
    Simulation simulate(Graph& g, Var a_t, const MemoryVars& mem, Var f_bar) {
        if (g.value(a_t).numel() != static_cast<int>(mem.states.size()))
            throw std::invalid_argument("simulate: attention length does not match memory");
        Simulation sim;
        Var total = g.sum(a_t);
        if (g.value(total)[0] < cfg_.sim_epsilon) {
            sim.skipped = true;
            sim.new_states = mem.states;
            return sim;
        }
        sim.alpha = g.div(a_t, total);
        Var e_bar;
        for (size_t i = 0; i < mem.states.size(); ++i) {
            Var term = g.mul(g.at(sim.alpha, static_cast<int>(i)), mem.states[i]);
            e_bar = i == 0 ? term : g.add(e_bar, term);
        }
        sim.e_bar = e_bar;
        sim.k = g.relu(g.add(g.bilinear3(f_bar, g.param(*W4_), e_bar), g.param(*b4_)));
        sim.new_states.reserve(mem.states.size());
        for (size_t i = 0; i < mem.states.size(); ++i) {
            Var ai = g.at(a_t, static_cast<int>(i));
            sim.new_states.push_back(g.add(g.mul(ai, sim.k), g.mul(g.one_minus(ai), mem.states[i])));
        }
        return sim;
    }

    /// Eq. 8: one categorical head per state-change type; the location head
    /// additionally sees the action-encoder sentence vector.
    std::array<Var, kNumStateTypes> predict_states(Graph& g, Var k, Var h_act, const RunMode& mode) {
        std::array<Var, kNumStateTypes> dists;
        for (int i = 0; i < kNumStateTypes; ++i) {
            auto t = static_cast<StateChangeType>(i);
            Var input = t == StateChangeType::LOCATION ? g.concat(k, h_act) : k;
            Var in_d = g.dropout(input, cfg_.dropout, mode.training, *rng_or_die(mode));
            dists[static_cast<size_t>(i)] = g.softmax(g.add(g.matvec(g.param(*head_W_[i]), in_d), g.param(*head_b_[i])));
        }
        return dists;
    }

    MemoryVars init_memory(Graph& g, const EncodedDoc& doc) {
        MemoryVars mem;
        for (int id : doc.entity_ids) {
            Var e0 = g.row(g.param(*entity_emb_), id);
            mem.keys.push_back(e0);
            mem.states.push_back(e0);
        }
        mem.a_prev = g.leaf(Tensor::zeros({static_cast<int>(doc.entity_ids.size())}));
        return mem;
    }

    /// Full interpreter pass over a document, threading entity memory and
    /// the recurrent attention.
    DocRun forward_document(Graph& g, const EncodedDoc& doc, const RunMode& mode) {
        if (doc.token_ids.empty()) throw std::invalid_argument("forward_document: document has no sentences");
        DocRun run;
        MemoryVars mem = init_memory(g, doc);
        for (const auto& sentence : doc.token_ids) {
            StepVars sv;
            sv.h_act = encode_sentence(g, sentence, EncoderKind::Action);
            sv.h_ent = encode_sentence(g, sentence, EncoderKind::Entity);
            ActionSelection as = select_actions(g, sv.h_act, mode);
            sv.w_p = as.w_p;
            sv.w_bar = as.w_bar;
            sv.f_bar = as.f_bar;
            EntitySelection es = select_entities(g, sv.h_ent, sv.w_p, mem, mode);
            sv.h_tilde = es.h_tilde;
            sv.d = es.d;
            sv.c = es.c;
            sv.a_t = es.a_t;

            StepTrace tr;
            for (Var s : mem.states) tr.mem_before.push_back(g.value(s));

            Simulation sim = simulate(g, sv.a_t, mem, sv.f_bar);
            sv.skipped = sim.skipped;
            if (!sim.skipped) {
                sv.k = sim.k;
                sv.dists = predict_states(g, sim.k, sv.h_act, mode);
                mem.states = sim.new_states;
                tr.alpha = g.value(sim.alpha);
                tr.e_bar = g.value(sim.e_bar);
                tr.k = g.value(sim.k);
                for (int i = 0; i < kNumStateTypes; ++i) tr.dists[static_cast<size_t>(i)] = g.value((*sv.dists)[static_cast<size_t>(i)]);
            }
            mem.a_prev = sv.a_t;

            tr.h_act = g.value(sv.h_act);
            tr.h_ent = g.value(sv.h_ent);
            tr.w_p = g.value(sv.w_p);
            tr.w_bar = g.value(sv.w_bar);
            tr.f_bar = g.value(sv.f_bar);
            tr.h_tilde = g.value(sv.h_tilde);
            tr.d = g.value(sv.d);
            tr.c = g.value(sv.c);
            tr.a_t = g.value(sv.a_t);
            tr.skipped = sim.skipped;
            for (Var s : mem.states) tr.mem_after.push_back(g.value(s));

            run.steps.push_back(sv);
            run.traces.push_back(std::move(tr));
        }
        run.final_memory = mem.states;
        return run;
    }

    struct ActionRun {
        std::vector<Var> w_p;
        std::vector<Tensor> w_p_values;
    };

    /// Action-selector-only pass (sentence encoding plus Eq. 1), used by
    /// selector pretraining.
    ActionRun forward_actions(Graph& g, const EncodedDoc& doc, const RunMode& mode) {
        ActionRun run;
        for (const auto& sentence : doc.token_ids) {
            Var h = encode_sentence(g, sentence, EncoderKind::Action);
            ActionSelection as = select_actions(g, h, mode);
            run.w_p.push_back(as.w_p);
            run.w_p_values.push_back(g.value(as.w_p));
        }
        return run;
    }

    /// Parameters the optimizer may update under the current ablations.
    std::vector<Param*> trainable_params() {
        std::vector<Param*> out;
        for (Param* p : store_.all()) {
            if (cfg_.freeze_action_embeddings && p == F_) continue;
            out.push_back(p);
        }
        return out;
    }

    /// Action-selector pretraining scope: the MLP plus its co-trained
    /// encoder and word embeddings.
    std::vector<Param*> pretrain_params() {
        std::vector<Param*> out = {word_emb_, mlp_W1_, mlp_b1_, mlp_W2_, mlp_b2_};
        for (Param* p : enc_act_.params()) out.push_back(p);
        return out;
    }

    Param& action_embeddings() { return *F_; }
    const Param& action_embeddings() const { return *F_; }

  private:
    NpnConfig cfg_;
    const ActionLexicon* lexicon_;
    int num_actions_;
    ParamStore store_;

    Param* word_emb_ = nullptr;
    Param* entity_emb_ = nullptr;
    Param* F_ = nullptr;
    GruCell enc_act_, enc_ent_;
    Param* mlp_W1_ = nullptr;
    Param* mlp_b1_ = nullptr;
    Param* mlp_W2_ = nullptr;
    Param* mlp_b2_ = nullptr;
    Param* W1_ = nullptr;
    Param* b1_ = nullptr;
    Param* W2_ = nullptr;
    Param* W3_ = nullptr;
    Param* b3_ = nullptr;
    Param* W4_ = nullptr;
    Param* b4_ = nullptr;
    std::array<Param*, kNumStateTypes> head_W_{};
    std::array<Param*, kNumStateTypes> head_b_{};

    static std::mt19937_64* rng_or_die(const RunMode& mode) {
        static std::mt19937_64 unused(0);
        if (!mode.training) return &unused;
        if (!mode.rng) throw std::invalid_argument("RunMode: training mode requires an rng");
        return mode.rng;
    }
};

}  // namespace npn
