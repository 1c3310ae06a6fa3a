#include <gtest/gtest.h>

#include <array>
#include <map>
#include <set>

#include "npn/corpus.hpp"
#include "npn/skipgram.hpp"
#include "npn/world.hpp"

using namespace npn;

namespace {
const std::string kLexiconPath = std::string(NPN_DATA_DIR) + "/lexicon.jsonl";
const ActionLexicon& lex() {
    static ActionLexicon l = ActionLexicon::load(kLexiconPath);
    return l;
}

Document make_doc(std::vector<std::string> entities, std::vector<std::vector<std::string>> sentences) {
    Document d;
    d.id = "t0";
    d.entities = std::move(entities);
    d.sentences = std::move(sentences);
    return d;
}
}  // namespace

TEST(WeakLabel, VerbAndRosterMatches) {
    Document d = make_doc({"beets", "carrots"}, {{"wash", "and", "cut", "beets"}});
    Document labeled = weak_label(d, lex());
    ASSERT_EQ(labeled.gold.size(), 1u);
    const Annotation& a = labeled.gold[0];
    EXPECT_EQ(a.actions, (std::set<std::string>{"cut", "wash"}));
    EXPECT_EQ(a.entity_mask, (std::vector<uint8_t>{1, 0}));
    EXPECT_TRUE(a.has_actions);
    EXPECT_TRUE(a.has_entities);
    EXPECT_TRUE(a.has_states);
    EXPECT_EQ(a.state_changes, (std::set<StateChange>{{StateChangeType::SHAPE, "separated"},
                                                      {StateChangeType::CLEANLINESS, "clean"}}));
}

TEST(WeakLabel, BothEntitiesInCombineSentence) {
    Document d = make_doc({"flour", "water"}, {{"mix", "the", "flour", "and", "water"}});
    Document labeled = weak_label(d, lex());
    EXPECT_EQ(labeled.gold[0].entity_mask, (std::vector<uint8_t>{1, 1}));
}

TEST(WeakLabel, NoMatchLeavesFlagsFalse) {
    Document d = make_doc({"flour"}, {{"set", "aside"}});
    Document labeled = weak_label(d, lex());
    const Annotation& a = labeled.gold[0];
    EXPECT_TRUE(a.actions.empty());
    EXPECT_EQ(a.entity_mask, (std::vector<uint8_t>{0}));
    EXPECT_TRUE(a.state_changes.empty());
    EXPECT_FALSE(a.has_actions);
    EXPECT_FALSE(a.has_entities);
    EXPECT_FALSE(a.has_states);
}

TEST(WeakLabel, Idempotent) {
    Document d = make_doc({"beets", "flour"}, {{"wash", "the", "beets"}, {"bake", "for", "10", "minutes"}});
    Document once = weak_label(d, lex());
    Document twice = weak_label(once, lex());
    EXPECT_EQ(once, twice);
}

TEST(GenSynthetic, SameSeedSameCorpus) {
    GenConfig cfg;
    cfg.n_docs = 25;
    cfg.seed = 7;
    Corpus a = gen_synthetic(cfg, lex());
    Corpus b = gen_synthetic(cfg, lex());
    EXPECT_EQ(a, b);
    GenConfig other = cfg;
    other.seed = 8;
    EXPECT_NE(gen_synthetic(other, lex()), a);
}

TEST(GenSynthetic, InvalidConfigRejected) {
    GenConfig cfg;
    cfg.n_docs = 0;
    EXPECT_THROW(gen_synthetic(cfg, lex()), std::invalid_argument);
    cfg = GenConfig{};
    cfg.elision_rate = 1.5;
    EXPECT_THROW(gen_synthetic(cfg, lex()), std::invalid_argument);
    cfg = GenConfig{};
    cfg.entities_per_doc = 1;
    EXPECT_THROW(gen_synthetic(cfg, lex()), std::invalid_argument);
}

namespace {

// Independent replay of gold actions over a fresh symbolic state. Re-derives
// each step's state-change set and combined flags from scratch.
void oracle_replay_and_check(const Document& d, const ActionLexicon& lexicon) {
    int n = d.num_entities();
    std::vector<std::array<std::string, kNumStateTypes>> attrs(static_cast<size_t>(n));
    std::vector<int> group(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        attrs[static_cast<size_t>(i)] = {"counter", "raw", "room", "not composed", "intact", "dirty"};
        group[static_cast<size_t>(i)] = i;
    }
    auto group_size = [&](int g) {
        int c = 0;
        for (int x : group)
            if (x == g) ++c;
        return c;
    };
    for (int t = 0; t < d.num_steps(); ++t) {
        const Annotation& a = d.gold[static_cast<size_t>(t)];
        // combined flags reflect pre-step composition state
        for (int i = 0; i < n; ++i) {
            bool combined = group_size(group[static_cast<size_t>(i)]) >= 2;
            EXPECT_EQ(a.combined[static_cast<size_t>(i)] != 0, combined) << d.id << " step " << t << " entity " << i;
        }
        std::set<StateChange> derived;
        std::set<StateChange> all;
        for (const std::string& verb : a.actions) {
            auto ch = lexicon.state_changes_for(verb);
            all.insert(ch.begin(), ch.end());
        }
        for (const StateChange& c : all) {
            for (int i = 0; i < n; ++i)
                if (a.entity_mask[static_cast<size_t>(i)] &&
                    attrs[static_cast<size_t>(i)][static_cast<int>(c.type)] != c.end) {
                    derived.insert(c);
                    break;
                }
        }
        EXPECT_EQ(derived, a.state_changes) << d.id << " step " << t;
        for (int i = 0; i < n; ++i)
            if (a.entity_mask[static_cast<size_t>(i)])
                for (const StateChange& c : all) attrs[static_cast<size_t>(i)][static_cast<int>(c.type)] = c.end;
        if (!a.combine_group.empty()) {
            int g = group[static_cast<size_t>(a.combine_group[0])];
            for (int e : a.combine_group) group[static_cast<size_t>(e)] = g;
        }
    }
}

}  // namespace

TEST(GenSynthetic, GoldMatchesIndependentReplay) {
    GenConfig cfg;
    cfg.n_docs = 60;
    cfg.entities_per_doc = 5;
    cfg.steps_per_doc = 9;
    cfg.seed = 11;
    Corpus corpus = gen_synthetic(cfg, lex());
    for (const Document& d : corpus) oracle_replay_and_check(d, lex());
}

TEST(GenSynthetic, EveryDocumentHasACombineEvent) {
    GenConfig cfg;
    cfg.n_docs = 40;
    cfg.combine_rate = 0.0;
    cfg.seed = 3;
    for (const Document& d : gen_synthetic(cfg, lex())) {
        int combines = 0;
        for (const Annotation& a : d.gold) combines += a.combine_group.empty() ? 0 : 1;
        EXPECT_GE(combines, 1) << d.id;
    }
}

TEST(GenSynthetic, ElisionRateIsCalibrated) {
    GenConfig cfg;
    cfg.n_docs = 200;
    cfg.steps_per_doc = 8;
    cfg.elision_rate = 0.3;
    cfg.seed = 13;
    Corpus corpus = gen_synthetic(cfg, lex());
    int total = 0, hidden = 0;
    for (const Document& d : corpus)
        for (int t = 0; t < d.num_steps(); ++t) {
            ++total;
            bool mentioned = false;
            for (const auto& e : d.entities)
                if (entity_mentioned(d.sentences[static_cast<size_t>(t)], e)) mentioned = true;
            bool mask_nonempty = std::any_of(d.gold[static_cast<size_t>(t)].entity_mask.begin(),
                                             d.gold[static_cast<size_t>(t)].entity_mask.end(),
                                             [](uint8_t m) { return m != 0; });
            if (!mentioned && mask_nonempty) ++hidden;
        }
    ASSERT_GE(total, 1000);
    double frac = static_cast<double>(hidden) / total;
    EXPECT_NEAR(frac, 0.3, 0.05) << "hidden=" << hidden << " total=" << total;
}

TEST(GenSynthetic, CorpusRoundTripsThroughJsonl) {
    GenConfig cfg;
    cfg.n_docs = 10;
    cfg.seed = 21;
    Corpus corpus = gen_synthetic(cfg, lex());
    std::string path = ::testing::TempDir() + "corpus_roundtrip.jsonl";
    save_corpus(path, corpus);
    EXPECT_EQ(load_corpus(path), corpus);
}

TEST(BuildVocab, MinFreqAndDeterminism) {
    Document d = make_doc({"x"}, {{"a", "a", "b"}});
    Corpus c{d};
    Vocab v1 = build_vocab(c, 1);
    EXPECT_TRUE(v1.contains("a"));
    EXPECT_TRUE(v1.contains("b"));
    EXPECT_EQ(v1.size(), 6);  // 4 reserved + a + b

    Vocab v2 = build_vocab(c, 2);
    EXPECT_TRUE(v2.contains("a"));
    EXPECT_FALSE(v2.contains("b"));
    EXPECT_EQ(v2.id("b"), Vocab::kUnk);

    EXPECT_EQ(build_vocab(c, 1), build_vocab(c, 1));
}

TEST(BuildVocab, OrderedByFreqThenLexicographic) {
    Document d = make_doc({"x"}, {{"b", "b", "c", "a", "c"}, {"c"}});
    Vocab v = build_vocab({d}, 1);
    EXPECT_EQ(v.token(4), "c");  // freq 3
    EXPECT_EQ(v.token(5), "b");  // freq 2
    EXPECT_EQ(v.token(6), "a");  // freq 1
}

TEST(Vocab, SaveLoadRoundTrip) {
    Document d = make_doc({"x"}, {{"wash", "the", "beets"}});
    Vocab v = build_vocab({d}, 1);
    std::string path = ::testing::TempDir() + "vocab.txt";
    v.save(path);
    EXPECT_EQ(Vocab::load(path), v);
}

TEST(DropLabels, EndpointsPreserveText) {
    GenConfig cfg;
    cfg.n_docs = 15;
    cfg.seed = 5;
    Corpus corpus = gen_synthetic(cfg, lex());

    Corpus all = drop_labels(corpus, 1.0, 99);
    EXPECT_EQ(all, corpus);

    Corpus none = drop_labels(corpus, 0.0, 99);
    for (size_t i = 0; i < corpus.size(); ++i) {
        EXPECT_EQ(none[i].sentences, corpus[i].sentences);
        EXPECT_EQ(none[i].entities, corpus[i].entities);
        for (const Annotation& a : none[i].gold) {
            EXPECT_FALSE(a.has_actions);
            EXPECT_FALSE(a.has_entities);
            EXPECT_FALSE(a.has_states);
        }
        // label payloads stay in place; only flags change
        for (size_t t = 0; t < corpus[i].gold.size(); ++t)
            EXPECT_EQ(none[i].gold[t].entity_mask, corpus[i].gold[t].entity_mask);
    }
}

TEST(DropLabels, BinomialKeepCount) {
    GenConfig cfg;
    cfg.n_docs = 500;
    cfg.steps_per_doc = 8;
    cfg.seed = 17;
    Corpus corpus = gen_synthetic(cfg, lex());
    long long flags_total = 0;
    for (const Document& d : corpus) flags_total += 3ll * d.num_steps();
    ASSERT_GE(flags_total, 10000);

    Corpus dropped = drop_labels(corpus, 0.25, 123);
    long long kept = 0;
    for (const Document& d : dropped)
        for (const Annotation& a : d.gold) kept += (a.has_actions ? 1 : 0) + (a.has_entities ? 1 : 0) + (a.has_states ? 1 : 0);
    double expected = 0.25 * static_cast<double>(flags_total);
    double sigma = std::sqrt(static_cast<double>(flags_total) * 0.25 * 0.75);
    EXPECT_NEAR(static_cast<double>(kept), expected, 3.0 * sigma);

    EXPECT_EQ(drop_labels(corpus, 0.25, 123), dropped);  // deterministic per seed
}

TEST(Splits, StableAndRoughlyProportioned) {
    GenConfig cfg;
    cfg.n_docs = 400;
    cfg.seed = 31;
    Corpus corpus = gen_synthetic(cfg, lex());
    Corpus train = select_split(corpus, Split::Train);
    Corpus dev = select_split(corpus, Split::Dev);
    Corpus test = select_split(corpus, Split::Test);
    EXPECT_EQ(train.size() + dev.size() + test.size(), corpus.size());
    EXPECT_GT(train.size(), corpus.size() * 7 / 10);
    EXPECT_GT(dev.size(), 0u);
    EXPECT_GT(test.size(), 0u);
    for (const Document& d : train) EXPECT_EQ(split_of(d.id), Split::Train);
}

TEST(Skipgram, DimAndDeterminism) {
    GenConfig cfg;
    cfg.n_docs = 30;
    cfg.seed = 41;
    Corpus corpus = gen_synthetic(cfg, lex());
    Vocab vocab = build_vocab(corpus, 1);
    SkipgramConfig sg;
    sg.epochs = 2;
    sg.seed = 9;
    Tensor table = train_skipgram(corpus, vocab, sg);
    EXPECT_EQ(table.shape, (std::vector<int>{vocab.size(), 30}));
    Tensor again = train_skipgram(corpus, vocab, sg);
    EXPECT_EQ(table.data, again.data);
}

TEST(Skipgram, CooccurringTokensEndUpCloser) {
    // constructed micro-corpus: "alpha beta" always co-occur, "gamma" lives in
    // unrelated contexts
    Corpus corpus;
    for (int i = 0; i < 60; ++i) {
        Document d;
        d.id = "sg" + std::to_string(i);
        d.entities = {"x"};
        d.sentences = {{"alpha", "beta", "alpha", "beta"}, {"gamma", "delta", "epsilon", "zeta"}};
        corpus.push_back(d);
    }
    Vocab vocab = build_vocab(corpus, 1);
    SkipgramConfig sg;
    sg.epochs = 12;
    sg.window = 2;
    sg.seed = 4;
    Tensor table = train_skipgram(corpus, vocab, sg);
    auto vec = [&](const std::string& tok) {
        int id = vocab.id(tok);
        return std::vector<double>(table.data.begin() + static_cast<size_t>(id) * 30,
                                   table.data.begin() + static_cast<size_t>(id + 1) * 30);
    };
    double close = cosine(vec("alpha"), vec("beta"));
    double far = cosine(vec("alpha"), vec("gamma"));
    EXPECT_GT(close, far);
}
