#include <cmath>
#include <vector>

#include "bar/distill.hpp"
#include "bar/graph.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace bar;

TEST_CASE("alpha = 0 degenerates to plain cross-entropy exactly") {
    GraphT<double> g;
    Rng rng(21);
    TensorT<double> logits({3, 4}), teacher({3, 4});
    for (auto& v : logits.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : teacher.data) v = rng.uniform(-2.0, 2.0);
    const std::vector<int> labels = {1, 0, 3};

    auto s1 = make_leaf(g, logits, true);
    auto plain = cross_entropy_logits(s1, labels);
    auto s2 = make_leaf(g, logits, true);
    auto mixed = kd_loss(s2, labels, teacher, 0.0, 4.0);
    CHECK(mixed.value().data[0] == plain.value().data[0]);

    g.backward(plain.id);
    const TensorT<double> g1 = s1.grad();
    g.backward(mixed.id);
    const TensorT<double> g2 = s2.grad();
    for (std::size_t i = 0; i < g1.data.size(); ++i)
        CHECK(g2.data[i] == doctest::Approx(g1.data[i]).epsilon(1e-12));
}

TEST_CASE("pure soft loss at T=1 equals the teacher-distribution cross-entropy") {
    GraphT<double> g;
    TensorT<double> logits({1, 2}), teacher({1, 2});
    logits.data = {std::log(3.0), 0.0};  // softmax -> (0.75, 0.25)
    teacher.data = {std::log(3.0), 0.0};
    auto s = make_leaf(g, logits, false);
    auto loss = kd_loss(s, std::vector<int>{0}, teacher, 1.0, 1.0);
    // matching distributions: cross-entropy equals the entropy of (0.75, 0.25)
    CHECK(loss.value().data[0] == doctest::Approx(0.5623351446188083).epsilon(1e-12));
}

TEST_CASE("temperature squares into the soft term") {
    GraphT<double> g;
    Rng rng(22);
    TensorT<double> logits({2, 3}), teacher({2, 3});
    for (auto& v : logits.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : teacher.data) v = rng.uniform(-1.0, 1.0);
    auto s = make_leaf(g, logits, false);
    KdPartsT<double> parts;
    auto total = kd_loss(s, std::vector<int>{0, 2}, teacher, 0.9, 4.0, &parts);
    CHECK(total.value().data[0] ==
          doctest::Approx(0.1 * parts.hard.value().data[0] + 0.9 * 16.0 *
                          parts.soft.value().data[0])
              .epsilon(1e-12));

    auto s2 = make_leaf(g, logits, false);
    auto soft_only = kd_loss(s2, std::vector<int>{0, 2}, teacher, 1.0, 4.0);
    const TensorT<double> probs = softmax_rows(teacher, 4.0);
    auto s3 = make_leaf(g, logits, false);
    auto direct = soft_cross_entropy(s3, probs, 4.0);
    CHECK(soft_only.value().data[0] ==
          doctest::Approx(16.0 * direct.value().data[0]).epsilon(1e-12));
}

TEST_CASE("kd loss rejects out-of-range mixing and temperature") {
    GraphT<double> g;
    auto s = make_leaf(g, TensorT<double>({1, 2}), false);
    TensorT<double> teacher({1, 2});
    CHECK_THROWS_AS(kd_loss(s, std::vector<int>{0}, teacher, -0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(kd_loss(s, std::vector<int>{0}, teacher, 1.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(kd_loss(s, std::vector<int>{0}, teacher, 0.5, 0.0), std::invalid_argument);
    TensorT<double> wrong({1, 3});
    CHECK_THROWS_AS(kd_loss(s, std::vector<int>{0}, wrong, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("kd gradient matches finite differences") {
    Rng rng(23);
    for (int round = 0; round < 3; ++round) {
        const int n = 2 + static_cast<int>(rng.below(3));
        const int c = 2 + static_cast<int>(rng.below(4));
        TensorT<double> logits({n, c}), teacher({n, c});
        for (auto& v : logits.data) v = rng.uniform(-2.0, 2.0);
        for (auto& v : teacher.data) v = rng.uniform(-2.0, 2.0);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(c)));

        auto eval = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto s = make_leaf(g, ls[0], true);
            return kd_loss(s, labels, teacher, 0.9, 4.0).value().data[0];
        };
        auto grads = [&](const std::vector<TensorT<double>>& ls) {
            GraphT<double> g;
            auto s = make_leaf(g, ls[0], true);
            g.backward(kd_loss(s, labels, teacher, 0.9, 4.0).id);
            return std::vector<TensorT<double>>{s.grad()};
        };
        FdResult r = fd_compare({logits}, eval, grads, rng, 48);
        CHECK(r.max_rel < 1e-4);
    }
}

TEST_CASE("logits cache rows are aligned and contiguous") {
    LogitsCache cache;
    cache.n = 3;
    cache.c = 2;
    cache.logits = {0, 1, 2, 3, 4, 5};
    CHECK(cache.row(0)[0] == 0.0f);
    CHECK(cache.row(1)[1] == 3.0f);
    CHECK(cache.row(2)[0] == 4.0f);
}
