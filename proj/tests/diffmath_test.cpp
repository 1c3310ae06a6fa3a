#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "npn/adam.hpp"
#include "npn/checkpoint.hpp"
#include "npn/graph.hpp"
#include "npn/param.hpp"
#include "test_util.hpp"

using namespace npn;
using npn::testutil::max_grad_rel_err;
using npn::testutil::random_tensor;
using npn::testutil::rel_err;

TEST(TensorOps, MatmulIdentity) {
    Graph g;
    Var a = g.leaf(Tensor::mat(2, 2, {1, 2, 3, 4}));
    Var eye = g.leaf(Tensor::mat(2, 2, {1, 0, 0, 1}));
    Var c = g.matmul(a, eye);
    EXPECT_EQ(g.value(c).data, (std::vector<double>{1, 2, 3, 4}));
}

TEST(TensorOps, ReluDefinition) {
    Graph g;
    Var x = g.leaf(Tensor::vec({-1.0, 2.5}));
    const Tensor& y = g.value(g.relu(x));
    EXPECT_DOUBLE_EQ(y[0], 0.0);
    EXPECT_DOUBLE_EQ(y[1], 2.5);
}

TEST(TensorOps, SoftmaxSymmetry) {
    Graph g;
    const Tensor& y = g.value(g.softmax(g.leaf(Tensor::vec({0.0, 0.0}))));
    EXPECT_DOUBLE_EQ(y[0], 0.5);
    EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(TensorOps, SoftmaxSumsToOneAndPositive) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        const Tensor& y = g.value(g.softmax(g.leaf(random_tensor({9}, rng, -30.0, 30.0))));
        double s = 0.0;
        for (double v : y.data) {
            EXPECT_GT(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(TensorOps, ShapeMismatchNamesShapesAndOp) {
    Graph g;
    Var a = g.leaf(Tensor::vec({1, 2, 3}));
    Var b = g.leaf(Tensor::vec({1, 2}));
    try {
        g.add(a, b);
        FAIL() << "expected shape error";
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[3]"), std::string::npos);
        EXPECT_NE(msg.find("[2]"), std::string::npos);
    }
    Var m = g.leaf(Tensor::mat(2, 3, {1, 2, 3, 4, 5, 6}));
    EXPECT_THROW(g.matmul(m, m), std::invalid_argument);
    EXPECT_THROW(g.matvec(m, b), std::invalid_argument);
}

TEST(Bilinear3, OrthogonalBasisVectors) {
    // every k-slice W[:,:,k] = I2  => out_k = x . y
    Tensor w = Tensor::zeros({2, 2, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 3; ++k)
                if (i == j) w.data[(static_cast<size_t>(i) * 2 + j) * 3 + k] = 1.0;
    Graph g;
    Var out = g.bilinear3(g.leaf(Tensor::vec({1, 0})), g.leaf(w), g.leaf(Tensor::vec({0, 1})));
    for (double v : g.value(out).data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Bilinear3, AllOnesSumsEntries) {
    Graph g;
    Var out = g.bilinear3(g.leaf(Tensor::vec({1, 1})), g.leaf(Tensor::full({2, 2, 3}, 1.0)), g.leaf(Tensor::vec({1, 1})));
    EXPECT_EQ(g.value(out).data, (std::vector<double>{4, 4, 4}));
}

namespace {

// Builds a scalar loss through one op and checks every input's gradient
// against central finite differences.
void check_unary(const std::function<Var(Graph&, Var)>& op, std::vector<int> shape, uint64_t seed,
                 double lo = -2.0, double hi = 2.0) {
    std::mt19937_64 rng(seed);
    Param x("x", random_tensor(shape, rng, lo, hi));
    auto eval = [&]() {
        Graph g;
        return g.value(g.sum(op(g, g.param(x)))).data[0];
    };
    Graph g;
    Var out = op(g, g.param(x));
    g.backward(g.sum(out));
    double worst = max_grad_rel_err(eval, x.value.data, g.param_grad(x).data);
    EXPECT_LT(worst, 1e-4);
}

}  // namespace

TEST(GradCheck, ElementwiseAndActivations) {
    check_unary([](Graph& g, Var x) { return g.sigmoid(x); }, {7}, 11);
    check_unary([](Graph& g, Var x) { return g.tanh_(x); }, {7}, 12);
    check_unary([](Graph& g, Var x) { return g.mul(g.relu(x), x); }, {7}, 13);
    check_unary([](Graph& g, Var x) { return g.log_(g.affine(x, 0.2, 3.0)); }, {7}, 14);
    check_unary([](Graph& g, Var x) { return g.softmax(x); }, {5}, 15);
    check_unary([](Graph& g, Var x) { return g.mul(g.softmax(x), x); }, {5}, 16);
    check_unary([](Graph& g, Var x) { return g.mean(g.mul(x, x)); }, {6}, 17);
}

TEST(GradCheck, BinaryOpsWithScalarBroadcast) {
    std::mt19937_64 rng(21);
    Param a("a", random_tensor({6}, rng, 0.5, 2.0));
    Param b("b", random_tensor({6}, rng, 0.5, 2.0));
    Param s("s", random_tensor({1}, rng, 0.5, 2.0));
    auto build = [&](Graph& g) {
        Var va = g.param(a), vb = g.param(b), vs = g.param(s);
        Var t = g.add(g.mul(va, vb), g.div(va, vs));
        return g.sum(g.sub(t, g.mul(vs, vb)));
    };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    EXPECT_LT(max_grad_rel_err(eval, a.value.data, g.param_grad(a).data), 1e-4);
    EXPECT_LT(max_grad_rel_err(eval, b.value.data, g.param_grad(b).data), 1e-4);
    EXPECT_LT(max_grad_rel_err(eval, s.value.data, g.param_grad(s).data), 1e-4);
}

TEST(GradCheck, MatrixOps) {
    std::mt19937_64 rng(31);
    Param W("W", random_tensor({4, 3}, rng));
    Param x("x", random_tensor({3}, rng));
    Param A("A", random_tensor({3, 4}, rng));
    Param B("B", random_tensor({4, 2}, rng));
    auto build = [&](Graph& g) {
        Var mv = g.matvec(g.param(W), g.param(x));
        Var vm = g.vecmat(mv, g.param(B));
        Var mm = g.matmul(g.param(A), g.param(B));
        return g.add(g.sum(g.tanh_(vm)), g.sum(g.mul(mm, mm)));
    };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    for (Param* p : {&W, &x, &A, &B}) EXPECT_LT(max_grad_rel_err(eval, p->value.data, g.param_grad(*p).data), 1e-4) << p->name;
}

TEST(GradCheck, Bilinear3RandomMatchesFiniteDifferences) {
    std::mt19937_64 rng(41);
    Param x("x", random_tensor({3}, rng));
    Param W("W", random_tensor({3, 4, 2}, rng));
    Param y("y", random_tensor({4}, rng));
    auto build = [&](Graph& g) { return g.sum(g.sigmoid(g.bilinear3(g.param(x), g.param(W), g.param(y)))); };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    for (Param* p : {&x, &W, &y}) EXPECT_LT(max_grad_rel_err(eval, p->value.data, g.param_grad(*p).data), 1e-4) << p->name;
}

TEST(GradCheck, ShapeOpsAndClamp) {
    std::mt19937_64 rng(51);
    Param a("a", random_tensor({4}, rng));
    Param b("b", random_tensor({3}, rng));
    auto build = [&](Graph& g) {
        Var cat = g.concat(g.param(a), g.param(b));
        Var picked = g.stack({g.at(cat, 0), g.at(cat, 5), g.dot(g.param(a), g.param(a))});
        return g.sum(g.mul(g.clamp(picked, -0.4, 0.9), picked));
    };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    EXPECT_LT(max_grad_rel_err(eval, a.value.data, g.param_grad(a).data), 1e-4);
    EXPECT_LT(max_grad_rel_err(eval, b.value.data, g.param_grad(b).data), 1e-4);
}

TEST(GradCheck, RandomFiveOpComposition) {
    std::mt19937_64 rng(61);
    Param x("x", random_tensor({5}, rng, 0.2, 1.5));
    Param W("W", random_tensor({5, 5}, rng));
    auto build = [&](Graph& g) {
        Var h = g.matvec(g.param(W), g.param(x));   // 1 matvec
        Var s = g.sigmoid(h);                       // 2 sigmoid
        Var t = g.mul(s, g.param(x));               // 3 mul
        Var u = g.softmax(t);                       // 4 softmax
        return g.mean(g.log_(u));                   // 5 log + mean
    };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    EXPECT_LT(max_grad_rel_err(eval, x.value.data, g.param_grad(x).data), 1e-4);
    EXPECT_LT(max_grad_rel_err(eval, W.value.data, g.param_grad(W).data), 1e-4);
}

TEST(GradCheck, DropoutBackwardWithFixedMask) {
    std::mt19937_64 rng(71);
    Param x("x", random_tensor({12}, rng));
    auto build = [&](Graph& g) {
        std::mt19937_64 mask_rng(99);  // same mask for every evaluation
        Var d = g.dropout(g.param(x), 0.3, true, mask_rng);
        return g.sum(g.mul(d, d));
    };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    EXPECT_LT(max_grad_rel_err(eval, x.value.data, g.param_grad(x).data), 1e-4);
}

TEST(Backward, SimpleCalculus) {
    // d/dx (x*x) at 3 = 6
    Param x("x", Tensor::scalar(3.0));
    Graph g;
    Var v = g.param(x);
    g.backward(g.mul(v, v));
    EXPECT_NEAR(g.param_grad(x)[0], 6.0, 1e-12);

    // d/dx sigmoid(x) at 0 = 0.25
    Param z("z", Tensor::scalar(0.0));
    Graph g2;
    g2.backward(g2.sigmoid(g2.param(z)));
    EXPECT_NEAR(g2.param_grad(z)[0], 0.25, 1e-12);
}

TEST(Backward, NonScalarLossRejected) {
    Graph g;
    Var x = g.leaf(Tensor::vec({1, 2}));
    EXPECT_THROW(g.backward(x), std::invalid_argument);
}

TEST(Backward, SecondBackwardIsError) {
    Param x("x", Tensor::scalar(2.0));
    Graph g;
    Var loss = g.mul(g.param(x), g.param(x));
    g.backward(loss);
    EXPECT_THROW(g.backward(loss), std::logic_error);
}

TEST(Backward, UnreachableParamGetsZeroGrad) {
    Param used("used", Tensor::scalar(2.0));
    Param unused("unused", Tensor::vec({1, 2, 3}));
    Graph g;
    Var loss = g.mul(g.param(used), g.param(used));
    g.param(unused);  // in the graph, but not on the loss path
    g.backward(loss);
    for (double v : g.param_grad(unused).data) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : unused.grad.data) EXPECT_DOUBLE_EQ(v, 0.0);
    EXPECT_NEAR(used.grad[0], 4.0, 1e-12);
}

TEST(Backward, ParamGradAccumulatesAcrossUses) {
    Param x("x", Tensor::scalar(1.5));
    Graph g;
    Var a = g.param(x);
    Var b = g.param(x);  // memoized: same node
    EXPECT_EQ(a.id, b.id);
    g.backward(g.add(g.mul(a, a), g.scale(b, 3.0)));  // d/dx (x^2 + 3x) = 2x + 3
    EXPECT_NEAR(x.grad[0], 6.0, 1e-12);
}

TEST(GruStep, ZeroParamsHalveHidden) {
    ParamStore store;
    std::mt19937_64 rng(5);
    GruCell cell = GruCell::create(store, "gru", 4, 3, rng);
    for (Param* p : cell.params()) p->value.fill(0.0);
    Graph g;
    Var h_prev = g.leaf(Tensor::vec({0.4, -0.2, 1.0, 0.8}));
    Var h = gru_step(g, g.leaf(Tensor::vec({1.0, 2.0, 3.0})), h_prev, cell);
    const Tensor& hv = g.value(h);
    const Tensor& pv = g.value(h_prev);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(hv[i], 0.5 * pv[i], 1e-12);
}

TEST(GruStep, ZeroInputsZeroState) {
    ParamStore store;
    std::mt19937_64 rng(6);
    GruCell cell = GruCell::create(store, "gru", 4, 3, rng);
    cell.bz->value.fill(0.0);
    cell.br->value.fill(0.0);
    cell.bh->value.fill(0.0);
    Graph g;
    Var h = gru_step(g, g.leaf(Tensor::zeros({3})), g.leaf(Tensor::zeros({4})), cell);
    for (double v : g.value(h).data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(GruStep, RandomStepMatchesFiniteDifferences) {
    ParamStore store;
    std::mt19937_64 rng(7);
    GruCell cell = GruCell::create(store, "gru", 4, 3, rng);
    for (Param* p : {cell.bz, cell.br, cell.bh})
        p->value = testutil::random_tensor({4}, rng, -0.5, 0.5);
    Tensor x = testutil::random_tensor({3}, rng);
    Tensor h0 = testutil::random_tensor({4}, rng);
    auto build = [&](Graph& g) { return g.sum(g.mul(gru_step(g, g.leaf(x), g.leaf(h0), cell), g.leaf(h0))); };
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };
    Graph g;
    g.backward(build(g));
    for (Param* p : cell.params())
        EXPECT_LT(max_grad_rel_err(eval, p->value.data, g.param_grad(*p).data), 1e-4) << p->name;
}

TEST(GruStep, DimMismatchRejected) {
    ParamStore store;
    std::mt19937_64 rng(8);
    GruCell cell = GruCell::create(store, "gru", 4, 3, rng);
    Graph g;
    EXPECT_THROW(gru_step(g, g.leaf(Tensor::zeros({5})), g.leaf(Tensor::zeros({4})), cell), std::invalid_argument);
    EXPECT_THROW(gru_step(g, g.leaf(Tensor::zeros({3})), g.leaf(Tensor::zeros({2})), cell), std::invalid_argument);
}

TEST(Adam, ZeroGradFreshStateLeavesParamsUnchanged) {
    Param p("p", Tensor::vec({1.0, -2.0, 3.0}));
    Tensor before = p.value;
    AdamState st(0.01);
    adam_step({&p}, st);
    EXPECT_EQ(p.value.data, before.data);
    EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    Param p("p", Tensor::scalar(1.0));
    p.grad[0] = 0.37;
    AdamState st(0.001);
    adam_step({&p}, st);
    // bias-corrected m^ = g, v^ = g^2, so the update is -lr * g/(|g|+eps)
    EXPECT_NEAR(p.value[0], 1.0 - 0.001, 1e-9);

    Param q("q", Tensor::scalar(1.0));
    q.grad[0] = -2.0;
    AdamState st2(0.001);
    adam_step({&q}, st2);
    EXPECT_NEAR(q.value[0], 1.0 + 0.001, 1e-9);
}

TEST(Adam, TwoConstantStepsMatchHandRecurrence) {
    const double g = 0.5, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Param p("p", Tensor::scalar(0.0));
    AdamState st(lr);
    double m = 0.0, v = 0.0, x = 0.0;
    for (int t = 1; t <= 2; ++t) {
        p.grad[0] = g;
        adam_step({&p}, st);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
        EXPECT_NEAR(p.value[0], x, 1e-15) << "step " << t;
        EXPECT_NEAR(st.m.at("p")[0], m, 1e-15);
        EXPECT_NEAR(st.v.at("p")[0], v, 1e-15);
    }
}

TEST(Adam, ShapeMismatchRejected) {
    Param p("p", Tensor::vec({1.0, 2.0}));
    AdamState st;
    st.m.emplace("p", Tensor::scalar(0.0));
    st.v.emplace("p", Tensor::scalar(0.0));
    EXPECT_THROW(adam_step({&p}, st), std::invalid_argument);
}

TEST(Checkpoint, RoundTripWithAdamState) {
    ParamStore store;
    std::mt19937_64 rng(9);
    store.create("W1", testutil::random_tensor({3, 4}, rng));
    store.create("b1", testutil::random_tensor({3}, rng));
    AdamState adam(0.002);
    adam.t = 17;
    adam.m.emplace("W1", testutil::random_tensor({3, 4}, rng));
    adam.v.emplace("W1", testutil::random_tensor({3, 4}, rng));

    std::string path = ::testing::TempDir() + "ckpt_test.npnckpt";
    save_params(path, store, &adam);

    ParamStore loaded;
    loaded.create("W1", Tensor::zeros({3, 4}));
    loaded.create("b1", Tensor::zeros({3}));
    bool has_adam = false;
    AdamState restored = load_params(path, loaded, &has_adam);
    EXPECT_TRUE(has_adam);
    EXPECT_EQ(restored.t, 17);
    EXPECT_DOUBLE_EQ(restored.lr, 0.002);
    EXPECT_EQ(loaded.get("W1").value.data, store.get("W1").value.data);
    EXPECT_EQ(loaded.get("b1").value.data, store.get("b1").value.data);
    EXPECT_EQ(restored.m.at("W1").data, adam.m.at("W1").data);
    EXPECT_EQ(restored.v.at("W1").data, adam.v.at("W1").data);
}

TEST(Checkpoint, RejectsWrongMagicAndMissingParam) {
    std::string path = ::testing::TempDir() + "bad.npnckpt";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTACKPTxxxxxxxxxxxx";
    }
    ParamStore store;
    store.create("W", Tensor::zeros({2}));
    EXPECT_THROW(load_params(path, store), std::runtime_error);

    std::string path2 = ::testing::TempDir() + "partial.npnckpt";
    ParamStore small;
    small.create("other", Tensor::zeros({2}));
    save_params(path2, small);
    EXPECT_THROW(load_params(path2, store), std::runtime_error);
}
