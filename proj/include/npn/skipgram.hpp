#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "npn/corpus.hpp"
#include "npn/rng.hpp"
#include "npn/tensor.hpp"

namespace npn {

struct SkipgramConfig {
    int dim = 30;
    int window = 3;
    int negatives = 5;
    int epochs = 5;
    double lr = 0.025;
    uint64_t seed = 0;
};

/// Skipgram-with-negative-sampling embeddings over corpus sentences,
/// one dim-`dim` vector per vocab token (reserved tokens get their init).
/// Deterministic per (config, corpus, vocab).
inline Tensor train_skipgram(const Corpus& corpus, const Vocab& vocab, const SkipgramConfig& cfg) {
    int V = vocab.size();
    auto rng = make_rng(derive_seed(cfg.seed, "skipgram"));

    Tensor in = uniform_tensor({V, cfg.dim}, -0.5 / cfg.dim, 0.5 / cfg.dim, rng);
    Tensor out = Tensor::zeros({V, cfg.dim});

    // encode corpus and collect unigram counts
    std::vector<std::vector<int>> sequences;
    std::vector<double> counts(static_cast<size_t>(V), 0.0);
    for (const Document& d : corpus)
        for (const auto& s : d.sentences) {
            std::vector<int> seq = vocab.encode(s);
            for (int id : seq) counts[static_cast<size_t>(id)] += 1.0;
            sequences.push_back(std::move(seq));
        }

    // unigram^0.75 table for negative sampling
    std::vector<double> cum(static_cast<size_t>(V), 0.0);
    double tot = 0.0;
    for (int i = 0; i < V; ++i) {
        tot += std::pow(counts[static_cast<size_t>(i)], 0.75);
        cum[static_cast<size_t>(i)] = tot;
    }
    if (tot <= 0.0) return in;
    std::uniform_real_distribution<double> uni(0.0, tot);
    auto sample_negative = [&]() {
        double x = uni(rng);
        return static_cast<int>(std::lower_bound(cum.begin(), cum.end(), x) - cum.begin());
    };

    long long total_pairs = 0;
    for (const auto& seq : sequences) total_pairs += static_cast<long long>(seq.size());
    total_pairs = std::max<long long>(1, total_pairs * cfg.epochs);

    std::vector<double> grad_in(static_cast<size_t>(cfg.dim));
    long long seen = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& seq : sequences) {
            int n = static_cast<int>(seq.size());
            for (int i = 0; i < n; ++i) {
                ++seen;
                double lr = cfg.lr * std::max(0.05, 1.0 - static_cast<double>(seen) / total_pairs);
                int center = seq[static_cast<size_t>(i)];
                double* vc = &in.data[static_cast<size_t>(center) * cfg.dim];
                for (int off = -cfg.window; off <= cfg.window; ++off) {
                    if (off == 0) continue;
                    int j = i + off;
                    if (j < 0 || j >= n) continue;
                    int context = seq[static_cast<size_t>(j)];
                    std::fill(grad_in.begin(), grad_in.end(), 0.0);
                    for (int neg = 0; neg <= cfg.negatives; ++neg) {
                        int target = neg == 0 ? context : sample_negative();
                        double label = neg == 0 ? 1.0 : 0.0;
                        if (neg > 0 && target == context) continue;
                        double* uo = &out.data[static_cast<size_t>(target) * cfg.dim];
                        double z = dot_raw(vc, uo, static_cast<size_t>(cfg.dim));
                        double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                        double g = (p - label) * lr;
                        for (int dId = 0; dId < cfg.dim; ++dId) {
                            grad_in[static_cast<size_t>(dId)] += g * uo[dId];
                            uo[dId] -= g * vc[dId];
                        }
                    }
                    for (int dId = 0; dId < cfg.dim; ++dId) vc[dId] -= grad_in[static_cast<size_t>(dId)];
                }
            }
        }
    }
    return in;
}

}  // namespace npn
