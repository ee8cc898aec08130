#include <cmath>
#include <vector>

#include "doctest.h"
#include "voltron/error.hpp"
#include "voltron/rng.hpp"
#include "voltron/tensor.hpp"

using namespace voltron;

namespace {

struct PrecisionGuard {
    Precision saved;
    explicit PrecisionGuard(Precision p) : saved(precision()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(saved); }
};

Tensor random_param(int r, int c, Rng& rng, double scale = 0.5) {
    std::vector<double> v(size_t(r) * c);
    for (auto& x : v) x = (rng.uniform() * 2.0 - 1.0) * scale;
    return Tensor::from_values(r, c, std::move(v), true);
}

}  // namespace

TEST_CASE("rng is deterministic and well distributed") {
    Rng a = Rng::seeded(7);
    Rng b = Rng::seeded(7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base = Rng::seeded(42);
    Rng c1 = base.child("mask");
    Rng c2 = base.child("gate");
    Rng c3 = base.child("mask", 1);
    CHECK(c1.next_u64() != c2.next_u64());
    CHECK(base.child("mask").next_u64() != c3.next_u64());
    // child derivation must not consume parent state
    Rng d1 = base.child("mask");
    Rng d2 = base.child("mask");
    CHECK(d1.next_u64() == d2.next_u64());

    Rng u = Rng::seeded(3);
    double lo = 1.0, hi = 0.0, acc = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = u.uniform();
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        acc += x;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(acc / n == doctest::Approx(0.5).epsilon(0.02));

    Rng g = Rng::seeded(11);
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = g.normal();
        m1 += x;
        m2 += x * x;
    }
    CHECK(m1 / n == doctest::Approx(0.0).epsilon(0.05));
    CHECK(m2 / n == doctest::Approx(1.0).epsilon(0.05));

    Rng t = Rng::seeded(5);
    for (int i = 0; i < 1000; ++i) {
        CHECK(std::abs(t.truncated_normal(0.02, 0.04)) <= 0.04);
    }

    Rng ui = Rng::seeded(9);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 5000; ++i) ++counts[ui.uniform_int(5)];
    for (int k : counts) CHECK(k > 800);
}

TEST_CASE("forward values match hand-computed oracles") {
    PrecisionGuard g(Precision::f64);
    Tensor a = Tensor::from_values(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::from_values(2, 2, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19));
    CHECK(c.at(0, 1) == doctest::Approx(22));
    CHECK(c.at(1, 0) == doctest::Approx(43));
    CHECK(c.at(1, 1) == doctest::Approx(50));

    Tensor s = softmax_rows(Tensor::row({1, 2, 3}));
    CHECK(s.at(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(s.at(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(s.at(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));

    Tensor r = rmsnorm_rows(Tensor::row({3, 4}), 1e-6);
    double inv = 1.0 / std::sqrt(12.5 + 1e-6);
    CHECK(r.at(0, 0) == doctest::Approx(3 * inv).epsilon(1e-12));
    CHECK(r.at(0, 1) == doctest::Approx(4 * inv).epsilon(1e-12));

    CHECK(gelu(Tensor::row({1.0})).item() ==
          doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(swish(Tensor::row({1.0})).item() ==
          doctest::Approx(0.7310585786300049).epsilon(1e-12));

    // log-softmax rows sum to a proper distribution after exp
    Tensor ls = log_softmax_rows(Tensor::from_values(2, 3, {0.3, -1, 2, 5, 5, 5}));
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(ls.at(0, j));
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ls.at(1, 0) == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-12));

    Tensor h = huber(Tensor::row({0.5, 3.0}), Tensor::row({0.0, 0.0}), 1.0);
    CHECK(h.at(0, 0) == doctest::Approx(0.125));
    CHECK(h.at(0, 1) == doctest::Approx(2.5));
}

TEST_CASE("structural ops and their gradients") {
    PrecisionGuard guard(Precision::f64);
    Rng rng = Rng::seeded(101);

    Tensor a = random_param(4, 3, rng);
    Tensor b = random_param(3, 5, rng);
    auto f = [&] {
        Tensor m = matmul(a, b);
        Tensor t = transpose(m);                       // 5x4
        Tensor s = slice_rows(t, 1, 4);                // 3x4
        Tensor s2 = slice_cols(s, 0, 2);               // 3x2
        Tensor r = reshape(s2, 2, 3);
        Tensor cc = concat_cols({r, r});               // 2x6
        Tensor cr = concat_rows({cc, cc, cc});         // 6x6
        Tensor gathered = gather_rows(cr, {0, 5, -1, 2});
        Tensor picked = take_per_row(gathered, {0, 3, 1, 5});
        return mean(square(picked));
    };
    auto report = grad_check(f, {a, b}, 1e-5, 12, rng);
    CHECK(report.max_rel_err < 1e-6);
    CHECK(report.entries_checked == 24);

    // -1 index produces a zero row
    Tensor z = gather_rows(Tensor::from_values(2, 2, {1, 2, 3, 4}), {-1, 1});
    CHECK(z.at(0, 0) == 0.0);
    CHECK(z.at(0, 1) == 0.0);
    CHECK(z.at(1, 0) == 3.0);
}

TEST_CASE("elementwise and broadcast gradients") {
    PrecisionGuard guard(Precision::f64);
    Rng rng = Rng::seeded(202);

    Tensor a = random_param(3, 4, rng);
    Tensor b = random_param(3, 4, rng);
    Tensor rv = random_param(1, 4, rng);
    Tensor cv = random_param(3, 1, rng);
    auto f = [&] {
        Tensor x = add(mul(a, b), sub(a, b));
        Tensor y = div(x, add_scalar(square(b), 1.5));
        Tensor z = mul_colvec(mul_rowvec(add_rowvec(y, rv), rv), cv);
        return sum(mul(z, z)) * 0.5 + mean(huber(a, b, 0.4));
    };
    auto report = grad_check(f, {a, b, rv, cv}, 1e-5, 10, rng);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("unary chain gradients") {
    PrecisionGuard guard(Precision::f64);
    Rng rng = Rng::seeded(303);

    Tensor a = random_param(2, 6, rng, 0.8);
    auto f = [&] {
        Tensor p = add_scalar(square(a), 0.7);  // strictly positive
        Tensor x = log(p) + sqrt(p) + reciprocal(p) + pow_scalar(p, 1.7);
        Tensor y = tanh(a) + sigmoid(a) + gelu(a) + swish(a) + relu(a) + exp(scale(a, 0.3));
        return mean(x) + mean(square(y)) + sum(neg(a)) * 0.01 + mean(sin(a));
    };
    auto report = grad_check(f, {a}, 1e-5, 12, rng);
    CHECK(report.max_rel_err < 2e-6);

    // closed-form check: d sum(sin(w)) / dw == cos(w)
    Tensor w = random_param(1, 5, rng, 1.5);
    {
        GradTape tape;
        tape.backward(sum(sin(w)));
    }
    for (int i = 0; i < 5; ++i) {
        CHECK(w.grad()[i] == doctest::Approx(std::cos(w.values()[i])).epsilon(1e-12));
    }

    // max reduction routes gradient to the (first) argmax only
    Tensor m = Tensor::from_values(2, 2, {1.0, 4.0, 4.0, 2.0}, true);
    {
        GradTape tape;
        tape.backward(max_all(m) * 3.0);
    }
    CHECK(m.grad() == std::vector<double>{0, 3, 0, 0});
}

TEST_CASE("fused row op gradients") {
    PrecisionGuard guard(Precision::f64);
    Rng rng = Rng::seeded(404);

    Tensor q = random_param(4, 6, rng);
    Tensor k = random_param(4, 6, rng);
    Tensor v = random_param(4, 6, rng);
    Tensor gain = random_param(1, 6, rng, 0.9);
    auto attention_like = [&] {
        Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(6.0));
        Tensor attn = softmax_rows(scores);
        Tensor out = mul_rowvec(rmsnorm_rows(matmul(attn, v), 1e-6), gain);
        return mean(square(out));
    };
    auto r1 = grad_check(attention_like, {q, k, v, gain}, 1e-5, 10, rng);
    CHECK(r1.max_rel_err < 1e-6);

    Tensor logits = random_param(5, 7, rng, 2.0);
    std::vector<int> targets = {3, 0, 6, 2, 2};
    auto nll_like = [&] {
        Tensor lp = log_softmax_rows(logits);
        return neg(mean(take_per_row(lp, targets)));
    };
    auto r2 = grad_check(nll_like, {logits}, 1e-5, 20, rng);
    CHECK(r2.max_rel_err < 1e-6);

    Tensor m = random_param(6, 3, rng);
    auto pool_like = [&] { return sum(square(mean_rows(m))); };
    auto r3 = grad_check(pool_like, {m}, 1e-5, 18, rng);
    CHECK(r3.max_rel_err < 1e-6);
}

TEST_CASE("gradients accumulate when a tensor is reused") {
    PrecisionGuard guard(Precision::f64);
    Tensor a = Tensor::from_values(1, 2, {2.0, 3.0}, true);
    GradTape tape;
    Tensor loss = sum(mul(a, a) + a);  // d/da = 2a + 1
    tape.backward(loss);
    CHECK(a.grad()[0] == doctest::Approx(5.0));
    CHECK(a.grad()[1] == doctest::Approx(7.0));
}

TEST_CASE("no tape means no recording and constants get no grad") {
    PrecisionGuard guard(Precision::f64);
    Tensor a = Tensor::from_values(1, 2, {1.0, 2.0}, true);
    Tensor c = Tensor::from_values(1, 2, {3.0, 4.0});  // constant
    Tensor out = mul(a, c);
    CHECK_FALSE(out.requires_grad());  // no active tape
    {
        GradTape tape;
        Tensor loss = sum(mul(a, c));
        tape.backward(loss);
        CHECK(a.grad()[0] == doctest::Approx(3.0));
        CHECK_FALSE(c.has_grad());
    }
}

TEST_CASE("errors: shapes, numerics, contracts") {
    PrecisionGuard guard(Precision::f64);
    Tensor a = Tensor::from_values(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_values(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, transpose(b)), ShapeError);
    CHECK_THROWS_AS(reshape(a, 4, 2), ShapeError);
    CHECK_THROWS_AS(slice_rows(a, 1, 1), ShapeError);
    CHECK_THROWS_AS(take_per_row(a, {0, 3}), ShapeError);
    CHECK_THROWS_AS(log(Tensor::row({-1.0})), NumericsError);
    CHECK_THROWS_AS(div(a, Tensor::zeros(2, 3)), NumericsError);
    CHECK_THROWS_AS(Tensor::from_values(1, 1, {std::nan("")}), NumericsError);
    Tensor scalar = Tensor::row({1.0});
    GradTape tape;
    CHECK_THROWS_AS(tape.backward(scalar), ContractError);
    CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

TEST_CASE("f32 mode rounds every op output through float") {
    PrecisionGuard guard(Precision::f32);
    Tensor a = Tensor::row({0.1});
    Tensor b = Tensor::row({0.2});
    Tensor c = add(a, b);
    CHECK(c.item() == double(0.1f + 0.2f));
    CHECK(c.item() == double(float(c.item())));  // representable in float

    // f64 mode keeps the full double value
    set_precision(Precision::f64);
    Tensor d = add(Tensor::row({0.1}), Tensor::row({0.2}));
    CHECK(d.item() == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(d.item() != double(float(d.item())));
}

TEST_CASE("same program yields identical results across runs") {
    PrecisionGuard guard(Precision::f32);
    auto run = [] {
        Rng rng = Rng::seeded(55);
        Tensor a = random_param(3, 3, rng);
        Tensor b = random_param(3, 3, rng);
        GradTape tape;
        Tensor loss = mean(square(matmul(gelu(a), b)));
        tape.backward(loss);
        std::vector<double> out = a.grad();
        out.push_back(loss.item());
        return out;
    };
    CHECK(run() == run());
}
