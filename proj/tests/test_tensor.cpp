#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "aifn/rng.hpp"
#include "aifn/tensor.hpp"

using namespace aifn;

namespace {

Tensor rand_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                 bool requires_grad = true) {
    std::size_t n = 1;
    for (const std::size_t e : shape) {
        n *= e;
    }
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

// Values drawn from a shuffled grid with spacing 0.02, so every pair differs
// by at least 0.02 and finite differencing never crosses an argmax switch.
Tensor gapped_leaf(Rng& rng, Shape shape) {
    std::size_t n = 1;
    for (const std::size_t e : shape) {
        n *= e;
    }
    std::vector<double> grid(128);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        grid[k] = -1.27 + 0.02 * static_cast<double>(k);
    }
    shuffle(grid, rng);
    grid.resize(n);
    return Tensor::leaf(std::move(shape), std::move(grid), true);
}

}  // namespace

TEST_CASE("rng stream is pinned") {
    Rng r(0);
    CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
    CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
    CHECK(r.next_u64() == 0x06c45d188009454fULL);
    Rng r2(0);
    CHECK(r2.uniform() == doctest::Approx(0.8833108082136426).epsilon(1e-15));
    CHECK(named_rng(7, "a").next_u64() != named_rng(7, "b").next_u64());
    CHECK(named_rng(7, "a").next_u64() == named_rng(7, "a").next_u64());
}

TEST_CASE("matmul forward") {
    Tape t;
    const Tensor I = Tensor::leaf({2, 2}, {1, 0, 0, 1});
    const Tensor B = Tensor::leaf({2, 2}, {3, 4, 5, 6});
    const Tensor P = t.matmul(I, B);
    CHECK(P.shape() == Shape{2, 2});
    CHECK(P.at(0, 0) == 3.0);
    CHECK(P.at(0, 1) == 4.0);
    CHECK(P.at(1, 0) == 5.0);
    CHECK(P.at(1, 1) == 6.0);

    const Tensor a = Tensor::leaf({1, 2}, {1, 2});
    const Tensor b = Tensor::leaf({2, 1}, {3, 4});
    CHECK(t.matmul(a, b).item() == 11.0);

    CHECK_THROWS_AS(t.matmul(a, a), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(42);
    const Tensor A = rand_leaf(rng, {3, 3});
    const Tensor B = rand_leaf(rng, {3, 3});
    const double err = grad_check(
        [&](Tape& t) { return t.sum(t.matmul(A, B)); }, std::vector<Tensor>{A, B}, 1e-4, 9, 1);
    CHECK(err < 1e-5);
}

TEST_CASE("elementwise forward") {
    Tape t;
    const Tensor z = t.mul(Tensor::leaf({3}, {1, 2, 3}), Tensor::leaf({3}, {0, 0, 0}));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(z.at(i) == 0.0);
    }
    const Tensor s = t.add(Tensor::leaf({2}, {1, 2}), Tensor::leaf({2}, {3, 4}));
    CHECK(s.at(0) == 4.0);
    CHECK(s.at(1) == 6.0);

    const Tensor m = t.mul(Tensor::leaf({2, 2}, {1, 2, 3, 4}), Tensor::leaf({2}, {10, 100}));
    CHECK(m.at(0, 0) == 10.0);
    CHECK(m.at(0, 1) == 200.0);
    CHECK(m.at(1, 0) == 30.0);
    CHECK(m.at(1, 1) == 400.0);

    // Vector on the left broadcasts the same way.
    const Tensor m2 = t.mul(Tensor::leaf({2}, {10, 100}), Tensor::leaf({2, 2}, {1, 2, 3, 4}));
    CHECK(m2.at(1, 1) == 400.0);

    CHECK_THROWS_AS(t.add(Tensor::leaf({2}, {1, 2}), Tensor::leaf({3}, {1, 2, 3})),
                    DimensionError);
    CHECK_THROWS_AS(t.add(Tensor::leaf({2, 2}, {1, 2, 3, 4}), Tensor::leaf({3}, {1, 2, 3})),
                    DimensionError);
}

TEST_CASE("activations forward") {
    Tape t;
    CHECK(t.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(t.tanh(Tensor::scalar(0.0)).item() == 0.0);
    const Tensor r = t.relu(Tensor::leaf({2}, {-1, 2}));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 2.0);
}

TEST_CASE("softmax forward") {
    Tape t;
    const Tensor a = t.softmax(Tensor::leaf({2}, {0, 0}), 0);
    CHECK(a.at(0) == doctest::Approx(0.5).epsilon(1e-12));

    const Tensor big = t.softmax(Tensor::leaf({2}, {1000, 1000}), 0);
    CHECK(std::isfinite(big.at(0)));
    CHECK(big.at(0) == doctest::Approx(0.5).epsilon(1e-12));

    const Tensor probs = t.softmax(Tensor::leaf({3}, {1, 2, 3}), 0);
    CHECK(std::abs(probs.at(0) - 0.0900) < 1e-4);
    CHECK(std::abs(probs.at(1) - 0.2447) < 1e-4);
    CHECK(std::abs(probs.at(2) - 0.6652) < 1e-4);
    CHECK(probs.at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-9));
}

TEST_CASE("softmax rows sum to one on random input, both axes") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Tape t;
        const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
        const Tensor x = rand_leaf(rng, {m, n}, -5.0, 5.0, false);
        const Tensor rowwise = t.softmax(x, 1);
        for (std::size_t i = 0; i < m; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p = rowwise.at(i, j);
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
        const Tensor colwise = t.softmax(x, 0);
        for (std::size_t j = 0; j < n; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                total += colwise.at(i, j);
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("concat forward and backward") {
    Tape t;
    const Tensor a = Tensor::leaf({2, 1}, {1, 2}, true);
    const Tensor b = Tensor::leaf({2, 1}, {3, 4}, true);
    const Tensor c = t.concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.at(0, 0) == 1.0);
    CHECK(c.at(0, 1) == 3.0);
    CHECK(c.at(1, 0) == 2.0);
    CHECK(c.at(1, 1) == 4.0);

    const Tensor stacked = t.concat({a, a, a}, 0);
    CHECK(stacked.shape() == Shape{6, 1});

    t.backward(t.sum(c));
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.grad()[i] == 1.0);
        CHECK(b.grad()[i] == 1.0);
    }

    CHECK_THROWS_AS(t.concat({a, Tensor::leaf({3, 1}, {1, 2, 3})}, 1), DimensionError);
}

TEST_CASE("max_pool forward") {
    Tape t;
    const auto r = t.max_pool(Tensor::leaf({2, 2}, {1, 4, 3, 2}));
    CHECK(r.values.at(0) == 3.0);
    CHECK(r.values.at(1) == 4.0);
    CHECK(r.argmax == std::vector<std::size_t>{1, 0});

    const auto single = t.max_pool(Tensor::leaf({1, 3}, {7, 8, 9}));
    CHECK(single.values.at(2) == 9.0);
    CHECK(single.argmax == std::vector<std::size_t>{0, 0, 0});

    const auto tie = t.max_pool(Tensor::leaf({2, 1}, {5, 5}));
    CHECK(tie.argmax == std::vector<std::size_t>{0});

    const std::vector<std::uint8_t> mask{0, 1};
    const auto masked = t.max_pool(Tensor::leaf({2, 1}, {9, 5}), &mask);
    CHECK(masked.values.at(0) == 5.0);
    CHECK(masked.argmax == std::vector<std::size_t>{1});

    const std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS_AS(t.max_pool(Tensor::leaf({2, 1}, {9, 5}), &none), DomainError);
}

TEST_CASE("max_pool backward routes one entry per column") {
    Tape t;
    const Tensor x = Tensor::leaf({3, 2}, {1, 9, 5, 5, 5, 2}, true);
    const auto r = t.max_pool(x);
    t.backward(t.sum(r.values));
    // Column 0 max is 5 shared by rows 1 and 2; the tie goes to row 1.
    int nonzero0 = 0, nonzero1 = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        nonzero0 += x.grad()[i * 2 + 0] != 0.0;
        nonzero1 += x.grad()[i * 2 + 1] != 0.0;
    }
    CHECK(nonzero0 == 1);
    CHECK(nonzero1 == 1);
    CHECK(x.grad()[1 * 2 + 0] == 1.0);
    CHECK(x.grad()[0 * 2 + 1] == 1.0);
}

TEST_CASE("backward on simple expressions") {
    {
        Tape t;
        const Tensor x = Tensor::leaf({1}, {3}, true);
        const Tensor loss = t.sum(t.mul(x, x));
        t.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    {
        const double c = 1.7;
        Tape t;
        const Tensor pre = Tensor::leaf({1}, {0}, true);
        const Tensor loss = t.scale(t.sigmoid(pre), c);
        t.backward(loss);
        CHECK(pre.grad()[0] == doctest::Approx(0.25 * c).epsilon(1e-12));
    }
}

TEST_CASE("backward accumulates into leaves across calls") {
    Tape t;
    const Tensor x = Tensor::leaf({1}, {3}, true);
    const Tensor loss = t.sum(t.mul(x, x));
    t.backward(loss);
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));
    x.zero_grad();
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss and disabled tapes") {
    Tape t;
    const Tensor x = Tensor::leaf({2}, {1, 2}, true);
    const Tensor y = t.mul(x, x);
    CHECK_THROWS_AS(t.backward(y), ContractError);

    Tape frozen(false);
    const Tensor z = frozen.sum(t.mul(x, x));
    CHECK_THROWS_AS(frozen.backward(z), ContractError);
}

TEST_CASE("no-grad tape records nothing") {
    Tape t(false);
    const Tensor x = Tensor::leaf({2, 2}, {1, 2, 3, 4}, true);
    const Tensor y = t.matmul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(t.node_count() == 0);
    // Ops on inputs that need no gradient also stay off the tape.
    Tape live;
    const Tensor cst = Tensor::leaf({2}, {1, 2});
    (void)live.add(cst, cst);
    CHECK(live.node_count() == 0);
}

TEST_CASE("tape order is topological for a composed forward") {
    Tape t;
    Rng rng(5);
    const Tensor x = rand_leaf(rng, {2, 3});
    const Tensor w = rand_leaf(rng, {3, 3});
    const Tensor b = rand_leaf(rng, {3});
    const Tensor h = t.tanh(t.add(t.matmul(x, w), b));
    const auto pooled = t.max_pool(h);
    (void)t.sum(pooled.values);
    CHECK(t.node_count() > 0);
    CHECK(t.topologically_ordered());
}

TEST_CASE("gather_rows accumulates duplicate rows") {
    Tape t;
    const Tensor table = Tensor::leaf({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    const Tensor g = t.gather_rows(table, {2, 0, 2});
    CHECK(g.shape() == Shape{3, 2});
    CHECK(g.at(0, 0) == 5.0);
    CHECK(g.at(1, 0) == 1.0);
    t.backward(t.sum(g));
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[2 * 2] == 2.0);  // row 2 used twice
    CHECK(table.grad()[1 * 2] == 0.0);
    CHECK_THROWS_AS(t.gather_rows(table, {3}), DimensionError);
}

TEST_CASE("grad_check on pinned functions") {
    Rng rng(11);
    const Tensor x = rand_leaf(rng, {4});
    const double lin =
        grad_check([&](Tape& t) { return t.sum(x); }, std::vector<Tensor>{x}, 1e-5, 4, 1);
    CHECK(lin < 1e-10);

    const Tensor zero = Tensor::zeros({4}, true);
    const double th = grad_check([&](Tape& t) { return t.sum(t.tanh(zero)); },
                                 std::vector<Tensor>{zero}, 1e-5, 4, 1);
    CHECK(th < 1e-7);
}

// The fused gate expression, written twice: once on the tape and once with
// plain loops. Agreement of values and a passing finite-difference check make
// each implementation the oracle for the other.
namespace gate_oracle {

double plain(const std::vector<double>& xp, const std::vector<double>& xc,
             const std::vector<double>& wf1, const std::vector<double>& wf2,
             const std::vector<double>& bf, const std::vector<double>& w1,
             const std::vector<double>& w2, const std::vector<double>& bh) {
    const std::size_t n = 4;
    std::vector<double> mu(n), gp(n), gc(n), f(n);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = bf[j];
        for (std::size_t k = 0; k < n; ++k) {
            acc += xp[k] * wf1[k * n + j] + xc[k] * wf2[k * n + j];
        }
        mu[j] = 1.0 / (1.0 + std::exp(-acc));
    }
    for (std::size_t k = 0; k < n; ++k) {
        gp[k] = xp[k] * mu[k];
        gc[k] = xc[k] * (1.0 - mu[k]);
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double acc = bh[j];
        for (std::size_t k = 0; k < n; ++k) {
            acc += gp[k] * w1[k * n + j] + gc[k] * w2[k * n + j];
        }
        loss += std::tanh(acc);
    }
    return loss;
}

}  // namespace gate_oracle

TEST_CASE("composed gate expression: taped forward equals plain loops and passes grad check") {
    Rng rng(23);
    const Tensor xp = rand_leaf(rng, {1, 4});
    const Tensor xc = rand_leaf(rng, {1, 4});
    const Tensor wf1 = rand_leaf(rng, {4, 4});
    const Tensor wf2 = rand_leaf(rng, {4, 4});
    const Tensor bf = rand_leaf(rng, {4});
    const Tensor w1 = rand_leaf(rng, {4, 4});
    const Tensor w2 = rand_leaf(rng, {4, 4});
    const Tensor bh = rand_leaf(rng, {4});
    const Tensor ones = Tensor::full({1, 4}, 1.0);

    auto f = [&](Tape& t) {
        const Tensor mu =
            t.sigmoid(t.add(t.add(t.matmul(xp, wf1), t.matmul(xc, wf2)), bf));
        const Tensor gate_p = t.mul(xp, mu);
        const Tensor gate_c = t.mul(xc, t.sub(ones, mu));
        const Tensor fused =
            t.tanh(t.add(t.add(t.matmul(gate_p, w1), t.matmul(gate_c, w2)), bh));
        return t.sum(fused);
    };

    double taped;
    {
        Tape t(false);
        taped = f(t).item();
    }
    auto vec = [](const Tensor& t) {
        return std::vector<double>(t.values().begin(), t.values().end());
    };
    const double looped = gate_oracle::plain(vec(xp), vec(xc), vec(wf1), vec(wf2), vec(bf),
                                             vec(w1), vec(w2), vec(bh));
    CHECK(taped == doctest::Approx(looped).epsilon(1e-12));

    const std::vector<Tensor> params{xp, xc, wf1, wf2, bf, w1, w2, bh};
    CHECK(grad_check(f, params, 1e-5, 6, 3) < 1e-5);
}

TEST_CASE("per-op gradients match finite differences over 100 random trials") {
    int trials_run = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        const std::size_t m = 1 + rng.below(8);
        const std::size_t n = 1 + rng.below(8);
        const std::size_t p = 1 + rng.below(8);
        std::vector<Tensor> params;
        std::function<Tensor(Tape&)> f;
        // Losses are weighted sums: a fixed random weighting makes the loss
        // sensitive to every output entry, so transposed or misrouted
        // gradients cannot cancel out.
        switch (trial % 14) {
            case 0: {  // add, equal shapes
                const Tensor a = rand_leaf(rng, {m, n}), b = rand_leaf(rng, {m, n});
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a, b};
                f = [=](Tape& t) { return t.sum(t.mul(t.add(a, b), w)); };
                break;
            }
            case 1: {  // sub with matrix-vector broadcast
                const Tensor a = rand_leaf(rng, {m, n}), b = rand_leaf(rng, {n});
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a, b};
                f = [=](Tape& t) { return t.sum(t.mul(t.sub(a, b), w)); };
                break;
            }
            case 2: {  // mul with vector on the left
                const Tensor a = rand_leaf(rng, {n}), b = rand_leaf(rng, {m, n});
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a, b};
                f = [=](Tape& t) { return t.sum(t.mul(t.mul(a, b), w)); };
                break;
            }
            case 3: {  // matmul
                const Tensor a = rand_leaf(rng, {m, n}), b = rand_leaf(rng, {n, p});
                const Tensor w = rand_leaf(rng, {m, p}, -1, 1, false);
                params = {a, b};
                f = [=](Tape& t) { return t.sum(t.mul(t.matmul(a, b), w)); };
                break;
            }
            case 4: {  // sigmoid then tanh chain
                const Tensor a = rand_leaf(rng, {m, n}, -2, 2);
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a};
                f = [=](Tape& t) { return t.sum(t.mul(t.tanh(t.sigmoid(a)), w)); };
                break;
            }
            case 5: {  // relu with values kept away from the kink
                std::vector<double> v(m * n);
                for (double& x : v) {
                    x = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
                }
                const Tensor a = Tensor::leaf({m, n}, std::move(v), true);
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a};
                f = [=](Tape& t) { return t.sum(t.mul(t.relu(a), w)); };
                break;
            }
            case 6: {  // softmax along either axis
                const Tensor a = rand_leaf(rng, {m, n}, -3, 3);
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                const std::size_t axis = rng.below(2);
                params = {a};
                f = [=](Tape& t) { return t.sum(t.mul(t.softmax(a, axis), w)); };
                break;
            }
            case 7: {  // concat of three parts along a random axis
                const Tensor a = rand_leaf(rng, {m, n}), b = rand_leaf(rng, {m, n}),
                             c = rand_leaf(rng, {m, n});
                const std::size_t axis = rng.below(2);
                const Shape ws = axis == 0 ? Shape{3 * m, n} : Shape{m, 3 * n};
                const Tensor w = rand_leaf(rng, ws, -1, 1, false);
                params = {a, b, c};
                f = [=](Tape& t) {
                    return t.sum(t.mul(t.concat({a, b, c}, axis), w));
                };
                break;
            }
            case 8: {  // max_pool, sometimes masked
                const Tensor a = gapped_leaf(rng, {m, n});
                const Tensor w = rand_leaf(rng, {n}, -1, 1, false);
                auto mask = std::make_shared<std::vector<std::uint8_t>>(m, 1);
                if (m > 1 && rng.below(2)) {
                    (*mask)[rng.below(m)] = 0;
                }
                params = {a};
                f = [=](Tape& t) {
                    return t.sum(t.mul(t.max_pool(a, mask.get()).values, w));
                };
                break;
            }
            case 9: {  // gather_rows with repeats
                const Tensor table = rand_leaf(rng, {m, n});
                std::vector<std::size_t> rows(p);
                for (auto& r : rows) {
                    r = rng.below(m);
                }
                const Tensor w = rand_leaf(rng, {p, n}, -1, 1, false);
                params = {table};
                f = [=](Tape& t) { return t.sum(t.mul(t.gather_rows(table, rows), w)); };
                break;
            }
            case 10: {  // transpose then reshape round trip
                const Tensor a = rand_leaf(rng, {m, n});
                const Tensor w = rand_leaf(rng, {n * m}, -1, 1, false);
                params = {a};
                f = [=](Tape& t) {
                    return t.sum(t.mul(t.reshape(t.transpose(a), {n * m}), w));
                };
                break;
            }
            case 11: {  // scale and sum
                const Tensor a = rand_leaf(rng, {m, n});
                params = {a};
                f = [=](Tape& t) { return t.scale(t.sum(a), -0.37); };
                break;
            }
            case 12: {  // log of clamped positives
                const Tensor a = rand_leaf(rng, {m, n}, 0.5, 2.0);
                const Tensor w = rand_leaf(rng, {m, n}, -1, 1, false);
                params = {a};
                f = [=](Tape& t) {
                    return t.sum(t.mul(t.log(t.clamp_min(a, 1e-12)), w));
                };
                break;
            }
            default: {  // element pick
                const Tensor a = rand_leaf(rng, {m, n});
                const std::size_t idx = rng.below(m * n);
                params = {a};
                f = [=](Tape& t) { return t.scale(t.element(a, idx), 2.5); };
                break;
            }
        }
        const double err = grad_check(f, params, 1e-5, 6, trial);
        CHECK_MESSAGE(err < 1e-4, "trial ", trial, " err ", err);
        ++trials_run;
    }
    CHECK(trials_run == 100);
}

TEST_CASE("identical seeds give bit-identical composed outputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tape t;
        const Tensor x = rand_leaf(rng, {3, 4});
        const Tensor w = rand_leaf(rng, {4, 4});
        const Tensor b = rand_leaf(rng, {4});
        const Tensor h = t.tanh(t.add(t.matmul(x, w), b));
        const Tensor s = t.softmax(h, 1);
        const auto pooled = t.max_pool(s);
        std::vector<double> out(pooled.values.values().begin(), pooled.values.values().end());
        return out;
    };
    const auto a = run(77);
    const auto b = run(77);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
    }
    CHECK(run(78) != a);
}

TEST_CASE("leaf validation") {
    CHECK_THROWS_AS(Tensor::leaf({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::leaf({0}, {}), DimensionError);
    CHECK_THROWS_AS(Tensor::leaf({2, 2, 2}, std::vector<double>(8, 0.0)), DimensionError);
    const Tensor s = Tensor::scalar(4.25);
    CHECK(s.item() == 4.25);
    CHECK_THROWS_AS(Tensor::leaf({2}, {1, 2}).item(), ContractError);
}
