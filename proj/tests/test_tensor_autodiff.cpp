#include <cmath>
#include <vector>

#include "bar/adam.hpp"
#include "bar/gemm.hpp"
#include "bar/graph.hpp"
#include "bar/ops.hpp"
#include "bar/rng.hpp"
#include "bar/tensor.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace bar;

namespace {

TensorT<double> random_tensor(const std::vector<int>& shape, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
    TensorT<double> t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor shape constructor zero-fills and validates") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    for (float v : t.data) CHECK(v == 0.0f);
    CHECK_THROWS_AS(Tensor({2, -1}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1.0f}), std::invalid_argument);
    Tensor u({1, 2, 2, 2});
    u.at4(0, 1, 1, 0) = 5.0f;
    CHECK(u.data[6] == 5.0f);
}

TEST_CASE("gemm variants match hand-computed products") {
    // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
    std::vector<float> a = {1, 2, 3, 4}, b = {5, 6, 7, 8};
    std::vector<float> c(4, 0.0f);
    gemm_nn(2, 2, 2, a.data(), b.data(), c.data(), false);
    CHECK(c == std::vector<float>{19, 22, 43, 50});

    // A·B^T
    gemm_nt(2, 2, 2, a.data(), b.data(), c.data(), false);
    CHECK(c == std::vector<float>{17, 23, 39, 53});

    // A^T·B
    gemm_tn(2, 2, 2, a.data(), b.data(), c.data(), false);
    CHECK(c == std::vector<float>{26, 30, 38, 44});

    // accumulate adds on top of the existing contents
    gemm_nn(2, 2, 2, a.data(), b.data(), c.data(), true);
    CHECK(c == std::vector<float>{26 + 19, 30 + 22, 38 + 43, 44 + 50});
}

TEST_CASE("conv2d forward matches a hand-computed neighborhood sum") {
    Graph g;
    Tensor x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Var vx = make_leaf(g, x, false);
    Var vw = make_leaf(g, w, false);
    Var y = conv2d(vx, vw, 1, 1);
    const std::vector<float> want = {12, 21, 16, 27, 45, 33, 24, 39, 28};
    REQUIRE(y.value().shape == std::vector<int>{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i)
        CHECK(y.value().data[static_cast<std::size_t>(i)] ==
              doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("batchnorm eval mode applies the affine running-stat transform") {
    GraphT<double> g;
    TensorT<double> x({1, 1, 1, 2});
    x.data = {3.0, -1.0};
    auto gamma = TensorT<double>::full({1}, 2.0);
    auto beta = TensorT<double>::full({1}, 0.5);
    std::vector<double> rmean = {1.0}, rvar = {4.0};
    auto vx = make_leaf(g, x, false);
    auto y = batchnorm2d(vx, make_leaf(g, gamma, false), make_leaf(g, beta, false), &rmean, &rvar,
                         false, 0.1, 1e-8);
    CHECK(y.value().data[0] == doctest::Approx(2.0 * (3.0 - 1.0) / 2.0 + 0.5).epsilon(1e-6));
    CHECK(y.value().data[1] == doctest::Approx(2.0 * (-2.0) / 2.0 + 0.5).epsilon(1e-6));
    CHECK(rmean[0] == 1.0);  // eval mode must not touch running stats
    CHECK(rvar[0] == 4.0);
}

TEST_CASE("cross entropy of uniform logits is log(num_classes)") {
    GraphT<double> g;
    auto logits = make_leaf(g, TensorT<double>({3, 4}), false);
    auto loss = cross_entropy_logits(logits, std::vector<int>{0, 1, 3});
    CHECK(loss.value().data[0] == doctest::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("backward accumulates products and resets between calls") {
    GraphT<double> g;
    TensorT<double> av({2}), bv({2});
    av.data = {2.0, -3.0};
    bv.data = {5.0, 7.0};
    auto a = make_leaf(g, av, true);
    auto b = make_leaf(g, bv, true);
    auto loss = sum(mul(a, b));
    CHECK(loss.value().data[0] == doctest::Approx(-11.0));
    g.backward(loss.id);
    CHECK(a.grad().data == bv.data);
    CHECK(b.grad().data == av.data);
    g.backward(loss.id);  // a second pass must not double-count
    CHECK(a.grad().data == bv.data);

    auto two = scale(loss, 2.0);
    g.backward(two.id);
    CHECK(a.grad().data[0] == doctest::Approx(10.0));
    CHECK_THROWS_AS(g.backward(a.id), std::invalid_argument);  // non-scalar root
}

TEST_CASE("finite differences validate every elementwise and reduction op") {
    Rng rng(101);
    for (int round = 0; round < 4; ++round) {
        const int n = 1 + static_cast<int>(rng.below(3));
        const int c = 2 + static_cast<int>(rng.below(3));
        const std::vector<int> shape = {n, c, 2, 3};

        auto one_input = [&](auto&& make_loss, const char* /*name*/) {
            auto eval = [&](const std::vector<TensorT<double>>& ls) {
                GraphT<double> g;
                return make_loss(g, make_leaf(g, ls[0], true)).value().data[0];
            };
            auto grads = [&](const std::vector<TensorT<double>>& ls) {
                GraphT<double> g;
                auto x = make_leaf(g, ls[0], true);
                g.backward(make_loss(g, x).id);
                return std::vector<TensorT<double>>{x.grad()};
            };
            FdResult r = fd_compare({random_tensor(shape, rng)}, eval, grads, rng);
            CHECK(r.max_rel < 1e-4);
        };

        one_input([](GraphT<double>&, VarT<double> x) { return sum(scale(relu(x), 1.7)); },
                  "relu+scale+sum");
        one_input([](GraphT<double>&, VarT<double> x) { return sum(global_avg_pool(x)); },
                  "global_avg_pool");

        // two-input ops
        auto eval2 = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto a = make_leaf(g, ls[0], true);
            auto b = make_leaf(g, ls[1], true);
            return add(sum(mul(a, b)), sum(mul(concat_channels(a, b), concat_channels(b, a)))).value().data[0];
        };
        auto grads2 = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto a = make_leaf(g, ls[0], true);
            auto b = make_leaf(g, ls[1], true);
            g.backward(add(sum(mul(a, b)), sum(mul(concat_channels(a, b), concat_channels(b, a)))).id);
            return std::vector<TensorT<double>>{a.grad(), b.grad()};
        };
        FdResult r2 =
            fd_compare({random_tensor(shape, rng), random_tensor(shape, rng)}, eval2, grads2, rng);
        CHECK(r2.max_rel < 1e-4);

        // gating broadcast over channels
        auto evalg = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto x = make_leaf(g, ls[0], true);
            auto z = make_leaf(g, ls[1], true);
            return sum(apply_gates(x, z)).value().data[0];
        };
        auto gradsg = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto x = make_leaf(g, ls[0], true);
            auto z = make_leaf(g, ls[1], true);
            g.backward(sum(apply_gates(x, z)).id);
            return std::vector<TensorT<double>>{x.grad(), z.grad()};
        };
        FdResult rg = fd_compare({random_tensor(shape, rng), random_tensor({c}, rng, 0.0, 1.0)},
                                 evalg, gradsg, rng);
        CHECK(rg.max_rel < 1e-4);
    }
}

TEST_CASE("finite differences validate the linear layer and both losses") {
    Rng rng(202);
    for (int round = 0; round < 4; ++round) {
        const int n = 2 + static_cast<int>(rng.below(3));
        const int f = 3 + static_cast<int>(rng.below(3));
        const int c = 2 + static_cast<int>(rng.below(3));
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(c)));
        TensorT<double> teacher = random_tensor({n, c}, rng, -2.0, 2.0);
        const TensorT<double> target = softmax_rows(teacher, 4.0);

        auto build = [&](GraphT<double>& g, const std::vector<TensorT<double>>& ls) {
            auto x = make_leaf(g, ls[0], true);
            auto w = make_leaf(g, ls[1], true);
            auto b = make_leaf(g, ls[2], true);
            auto logits = linear(x, w, b);
            return add(cross_entropy_logits(logits, labels),
                       soft_cross_entropy(logits, target, 4.0));
        };
        auto eval = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            return build(g, ls).value().data[0];
        };
        auto grads = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto x = make_leaf(g, ls[0], true);
            auto w = make_leaf(g, ls[1], true);
            auto b = make_leaf(g, ls[2], true);
            auto logits = linear(x, w, b);
            g.backward(add(cross_entropy_logits(logits, labels),
                           soft_cross_entropy(logits, target, 4.0))
                           .id);
            return std::vector<TensorT<double>>{x.grad(), w.grad(), b.grad()};
        };
        FdResult r = fd_compare(
            {random_tensor({n, f}, rng), random_tensor({c, f}, rng), random_tensor({c}, rng)}, eval,
            grads, rng);
        CHECK(r.max_rel < 1e-4);
    }
}

TEST_CASE("finite differences validate convolution and batchnorm") {
    Rng rng(303);
    for (int round = 0; round < 3; ++round) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int cin = 1 + static_cast<int>(rng.below(3));
        const int cout = 1 + static_cast<int>(rng.below(3));
        const int k = rng.below(2) ? 3 : 1;
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = k / 2;
        const bool training = round != 1;

        auto build = [&](GraphT<double>& g, const std::vector<TensorT<double>>& ls) {
            // fresh running stats per evaluation so reruns see identical state
            std::vector<double> rmean(static_cast<std::size_t>(cout), 0.1);
            std::vector<double> rvar(static_cast<std::size_t>(cout), 0.9);
            auto x = make_leaf(g, ls[0], true);
            auto w = make_leaf(g, ls[1], true);
            auto gm = make_leaf(g, ls[2], true);
            auto bt = make_leaf(g, ls[3], true);
            auto y = batchnorm2d(conv2d(x, w, stride, pad), gm, bt, &rmean, &rvar, training, 0.1,
                                 1e-5);
            return sum(relu(y));
        };
        auto eval = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            return build(g, ls).value().data[0];
        };
        auto grads = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            std::vector<double> rmean(static_cast<std::size_t>(cout), 0.1);
            std::vector<double> rvar(static_cast<std::size_t>(cout), 0.9);
            auto x = make_leaf(g, ls[0], true);
            auto w = make_leaf(g, ls[1], true);
            auto gm = make_leaf(g, ls[2], true);
            auto bt = make_leaf(g, ls[3], true);
            auto y = batchnorm2d(conv2d(x, w, stride, pad), gm, bt, &rmean, &rvar, training, 0.1,
                                 1e-5);
            g.backward(sum(relu(y)).id);
            return std::vector<TensorT<double>>{x.grad(), w.grad(), gm.grad(), bt.grad()};
        };
        FdResult r = fd_compare({random_tensor({n, cin, 5, 4}, rng),
                                 random_tensor({cout, cin, k, k}, rng),
                                 random_tensor({cout}, rng, 0.5, 1.5), random_tensor({cout}, rng)},
                                eval, grads, rng);
        CHECK(r.max_rel < 1e-4);
    }
}

TEST_CASE("adam takes a bias-corrected step and rejects bad gradients") {
    Tensor p({1});
    Tensor g = Tensor::full({1}, 1.0f);
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step(p, g, st, cfg);
    CHECK(p.data[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(st.step == 1);

    Tensor bad = Tensor::full({1}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(adam_step(p, bad, st, cfg), std::runtime_error);
    Tensor wrong({2});
    AdamState st2;
    CHECK_THROWS_AS(adam_step(p, wrong, st2, cfg), std::invalid_argument);
}

TEST_CASE("weight decay enters the gradient, not the update directly") {
    Tensor p = Tensor::full({1}, 2.0f);
    Tensor g({1});  // zero gradient: only decay acts
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    adam_step(p, g, st, cfg);
    // effective gradient 1.0 -> first adam step is -lr
    CHECK(p.data[0] == doctest::Approx(1.9).epsilon(1e-6));
}

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).fork(1), d = Rng(42).fork(2);
    CHECK(c.next_u64() != d.next_u64());
    Rng e(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = e.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(e.below(17) < 17);
    }
    // Box-Muller sanity: mean near zero over many draws
    double acc = 0;
    for (int i = 0; i < 10000; ++i) acc += e.normal();
    CHECK(std::abs(acc / 10000.0) < 0.05);
}
