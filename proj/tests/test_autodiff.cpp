#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dcpl/errors.hpp"
#include "dcpl/ops.hpp"
#include "gradcheck.hpp"

using namespace dcpl;
using namespace dcpl::ad;
using dcpl::testing::grad_check;
using dcpl::testing::random_tensor;

namespace {
void check_close(std::span<const double> got, std::initializer_list<double> want, double tol = 1e-12) {
    REQUIRE(got.size() == want.size());
    std::size_t i = 0;
    for (double w : want) CHECK(std::abs(got[i++] - w) <= tol);
}
}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
    Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {0.3, -1.5, 2.25, 7.0});
    Tensor r = matmul(eye, m);
    CHECK(std::equal(r.data().begin(), r.data().end(), m.data().begin()));

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::from({2, 1}, {1, 1});
    Tensor s = matmul(a, ones);
    CHECK(s.shape() == Shape{2, 1});
    CHECK(s[0] == 3.0);
    CHECK(s[1] == 7.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
        CHECK(std::string(e.what()).find("[4x5]") != std::string::npos);
    }

    Rng rng(7);
    Tensor A = random_tensor(rng, {3, 4});
    Tensor B = random_tensor(rng, {4, 2});
    auto res = grad_check([&] { return sum(matmul(A, B)); }, {A, B});
    CHECK(res.rel_error < 1e-6);
    Tensor v = random_tensor(rng, {4});
    res = grad_check([&] { return sum(mul(matmul(A, v), matmul(A, v))); }, {A, v});
    CHECK(res.rel_error < 1e-6);
}

TEST_CASE("elementwise ops") {
    Tensor v = Tensor::vector({1.5, -2.0, 3.25});
    Tensor z = add(v, 0.0);
    CHECK(std::equal(z.data().begin(), z.data().end(), v.data().begin()));
    Tensor one = mul(v, Tensor::scalar(1.0));
    CHECK(std::equal(one.data().begin(), one.data().end(), v.data().begin()));
    Tensor s = scale(Tensor::vector({1, 2, 3}), 2.0);
    check_close(s.data(), {2, 4, 6});
    CHECK_THROWS_AS(add(Tensor::zeros({3}), Tensor::zeros({2})), DimensionError);

    // Row broadcast.
    Tensor m = Tensor::from({2, 3}, {0, 0, 0, 1, 1, 1});
    Tensor rb = add(m, Tensor::vector({1, 2, 3}));
    check_close(rb.data(), {1, 2, 3, 2, 3, 4});

    Rng rng(11);
    Tensor a = random_tensor(rng, {2, 3});
    Tensor b = random_tensor(rng, {2, 3});
    Tensor r = random_tensor(rng, {3});
    Tensor c = random_tensor(rng, {1});
    CHECK(grad_check([&] { return sum(mul(add(a, r), sub(b, c))); }, {a, b, r, c}).rel_error < 1e-6);
    CHECK(grad_check([&] { return sum(mul(scale(a, -0.7), mul(a, r))); }, {a, r}).rel_error < 1e-6);
    Tensor p = Tensor::from({3}, {0.4, 1.1, 2.5}, true);
    CHECK(grad_check([&] { return sum(mul(exp(p), log(p))); }, {p}).rel_error < 1e-6);
}

TEST_CASE("relu") {
    Tensor x = Tensor::vector({-1, 0, 2}, true);
    Tensor y = relu(x);
    check_close(y.data(), {0, 0, 2});
    backward(sum(y));
    check_close(x.grad(), {0, 0, 1});  // subgradient 0 at 0

    Tensor neg = Tensor::vector({-1, -2, -3}, true);
    Tensor yn = relu(neg);
    check_close(yn.data(), {0, 0, 0});
    backward(sum(mul(yn, Tensor::vector({5, 6, 7}))));
    check_close(neg.grad(), {0, 0, 0});

    Rng rng(3);
    Tensor a = dcpl::testing::away_from_zero(rng, {4, 5}, 1e-4);
    Tensor w = random_tensor(rng, {4, 5}, false);
    CHECK(grad_check([&] { return sum(mul(relu(a), w)); }, {a}).rel_error < 1e-6);
}

TEST_CASE("softmax") {
    Tensor u = softmax(Tensor::vector({0, 0, 0}));
    check_close(u.data(), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);

    // Oracle: exp/sum in extended precision.
    Tensor s = softmax(Tensor::vector({1, 2, 3}));
    long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
    check_close(s.data(), {double(e1 / z), double(e2 / z), double(e3 / z)}, 1e-15);

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor l = random_tensor(rng, {7}, false, 10.0);
        Tensor p = softmax(l);
        const double total = std::accumulate(p.data().begin(), p.data().end(), 0.0);
        CHECK(std::abs(total - 1.0) < 1e-12);
        for (double v : p.data()) CHECK(v > 0.0);
        const auto am = [](std::span<const double> x) { return std::max_element(x.begin(), x.end()) - x.begin(); };
        CHECK(am(p.data()) == am(l.data()));
    }

    // Shift invariance is bitwise when the shift is exactly representable.
    Tensor l = Tensor::vector({0.25, -1.5, 3.0, 2.0});
    Tensor shifted = add(l, 64.0);
    Tensor p1 = softmax(l), p2 = softmax(shifted);
    CHECK(std::equal(p1.data().begin(), p1.data().end(), p2.data().begin()));

    Tensor x = random_tensor(rng, {3, 5});
    Tensor w = random_tensor(rng, {3, 5}, false);
    CHECK(grad_check([&] { return sum(mul(softmax(x), w)); }, {x}).rel_error < 1e-6);
}

TEST_CASE("mean and sum") {
    CHECK(mean(Tensor::vector({1, 2, 3})).item() == 2.0);
    CHECK(mean(Tensor::full({4, 2}, 3.5)).item() == 3.5);
    Tensor x = Tensor::vector({1, 2, 3, 4}, true);
    backward(mean(x));
    check_close(x.grad(), {0.25, 0.25, 0.25, 0.25});
    CHECK_THROWS_AS(mean(Tensor()), PreconditionError);
}

TEST_CASE("cosine similarity") {
    Tensor v = Tensor::vector({0.3, -2.0, 1.0});
    CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(v, scale(v, -1.0)).item() == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0.0);
    CHECK_THROWS_AS(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({0, 1})), DegenerateInputError);

    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        Tensor a = random_tensor(rng, {6}, false), b = random_tensor(rng, {6}, false);
        const double alpha = 0.01 + 10 * rng.uniform(), beta = 0.01 + 10 * rng.uniform();
        const double c = cosine_similarity(a, b).item();
        CHECK(std::abs(cosine_similarity(scale(a, alpha), scale(b, beta)).item() - c) < 1e-12);
        CHECK(std::abs(c) <= 1.0);
    }
    Tensor a = random_tensor(rng, {5}), b = random_tensor(rng, {5});
    CHECK(grad_check([&] { return cosine_similarity(a, b); }, {a, b}).rel_error < 1e-6);
    Tensor m = random_tensor(rng, {3, 5});
    Tensor w = random_tensor(rng, {3, 5}, false);
    CHECK(grad_check([&] { return sum(mul(normalize(m), w)); }, {m}).rel_error < 1e-6);
}

TEST_CASE("layer norm") {
    Tensor gain = Tensor::full({4}, 1.0), bias = Tensor::zeros({4});
    Tensor y = layer_norm(Tensor::full({4}, 2.5), gain, bias);
    for (double v : y.data()) CHECK(v == 0.0);

    Tensor b2 = Tensor::vector({0.1, 0.2, 0.3, 0.4});
    Tensor y2 = layer_norm(Tensor::vector({3, -1, 4, 1}), gain, b2);
    CHECK(mean(y2).item() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK_THROWS_AS(layer_norm(Tensor::vector({1}), Tensor::vector({1}), Tensor::vector({0})), PreconditionError);

    Rng rng(13);
    Tensor x = random_tensor(rng, {3, 6});
    Tensor g = random_tensor(rng, {6}), b = random_tensor(rng, {6});
    Tensor w = random_tensor(rng, {3, 6}, false);
    CHECK(grad_check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b}).rel_error < 1e-6);
}

TEST_CASE("cross entropy") {
    Tensor u = Tensor::full({5}, 0.2);
    CHECK(cross_entropy(u, 3).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    CHECK(cross_entropy(Tensor::vector({0, 1, 0}), 1).item() == 0.0);
    CHECK_THROWS_AS(cross_entropy(u, 5), IndexError);
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor::vector({1, 2}), 2), IndexError);

    Tensor l = Tensor::vector({0.5, -1.0, 2.0, 0.0}, true);
    backward(softmax_cross_entropy(l, 2));
    Tensor p = softmax(l.detach());
    for (std::size_t j = 0; j < 4; ++j) CHECK(l.grad()[j] == doctest::Approx(p[j] - (j == 2 ? 1.0 : 0.0)).epsilon(1e-14));

    // Fused and unfused routes agree.
    CHECK(softmax_cross_entropy(l.detach(), 1).item() ==
          doctest::Approx(cross_entropy(softmax(l.detach()), 1).item()).epsilon(1e-14));

    Rng rng(17);
    Tensor x = random_tensor(rng, {4, 3});
    const std::size_t labels[] = {0, 2, 1, 1};
    CHECK(grad_check([&] { return softmax_cross_entropy_rows(x, labels); }, {x}).rel_error < 1e-6);
    Tensor q = random_tensor(rng, {4});
    CHECK(grad_check([&] { return cross_entropy(softmax(q), 3); }, {q}).rel_error < 1e-6);
}

TEST_CASE("shape ops") {
    Rng rng(19);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {3, 2});
    Tensor v = random_tensor(rng, {4});
    Tensor w = random_tensor(rng, {4, 6}, false);
    const std::size_t idx[] = {2, 0, 2};
    auto loss = [&] {
        Tensor left = slice_cols(a, 1, 3);
        Tensor joined = concat_cols({left, b, transpose(transpose(b))});
        Tensor stacked = concat_rows({v, gather_rows(a, idx), row(a, 1)});
        Tensor flat = concat({reshape(joined, {18}), v});
        return add(sum(mul(matmul(stacked, w), matmul(stacked, w))), mean(mul(flat, flat)));
    };
    CHECK(grad_check(loss, {a, b, v}).rel_error < 1e-6);

    const std::size_t perm[] = {3, 1, 0, 2};
    Tensor g = gather(v, perm, {2, 2});
    CHECK(g.at(0, 0) == v[3]);
    CHECK(g.at(1, 1) == v[2]);
    CHECK(grad_check([&] { return sum(mul(gather(v, perm, {2, 2}), gather(v, perm, {2, 2}))); }, {v}).rel_error < 1e-6);
}

TEST_CASE("backward") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == 6.0);

    Tensor frozen = Tensor::vector({1, 2}, false);
    Tensor learn = Tensor::vector({3, 4}, true);
    Tensor loss = sum(mul(frozen, learn));
    backward(loss);
    CHECK_FALSE(frozen.has_grad());
    CHECK(learn.has_grad());

    // Second sweep over the same graph is rejected.
    CHECK_THROWS_AS(backward(loss), PreconditionError);
    CHECK_THROWS_AS(backward(mul(learn, learn)), PreconditionError);  // not scalar
    CHECK_THROWS_AS(backward(sum(frozen)), PreconditionError);        // nothing learnable

    // Tape order: each node appears once, after its inputs.
    Tensor p = Tensor::vector({1, 2, 3}, true);
    Tensor shared = mul(p, p);
    Tensor l2 = add(sum(shared), mean(shared));
    Tape tape = record_tape(l2);
    CHECK(tape.nodes.size() == 5);
    for (std::size_t i = 1; i < tape.nodes.size(); ++i) CHECK(tape.nodes[i - 1]->id < tape.nodes[i]->id);
    backward(l2);
    CHECK(p.grad()[2] == doctest::Approx(2 * 3 * (1 + 1.0 / 3)).epsilon(1e-14));

    {
        NoGradGuard guard;
        Tensor c = mul(p, p);
        CHECK_FALSE(c.requires_grad());
    }
    CHECK(mul(p, p).requires_grad());
}

TEST_CASE("sgd step") {
    Tensor p = Tensor::scalar(1.0, true);
    backward(scale(p, 2.0));
    std::vector<Tensor> params{p};
    sgd_step(params, 0.5);
    CHECK(p.item() == 0.0);
    CHECK_FALSE(p.has_grad());

    Tensor q = Tensor::vector({1, -2}, true);
    backward(sum(mul(q, q)));
    std::vector<Tensor> qs{q};
    sgd_step(qs, 0.0);
    check_close(q.data(), {1, -2});
    CHECK_THROWS_AS(sgd_step(qs, 0.1), PreconditionError);  // gradient was cleared

    // f(p) = ½p² with lr 0.5 decays as 0.5^k; 20 steps reach 2^-20 < 1e-6.
    Tensor bowl = Tensor::scalar(1.0, true);
    std::vector<Tensor> bs{bowl};
    int steps = 0;
    while (std::abs(bowl.item()) >= 1e-6 && steps < 100) {
        backward(scale(mul(bowl, bowl), 0.5));
        sgd_step(bs, 0.5);
        ++steps;
        CHECK(bowl.item() == doctest::Approx(std::pow(0.5, steps)).epsilon(1e-15));
    }
    CHECK(steps == 20);
}

TEST_CASE("gaussian sampling") {
    Rng a(42, 3), b(42, 3);
    Tensor ta = sample_gaussian(a, {4, 4}), tb = sample_gaussian(b, {4, 4});
    CHECK(std::equal(ta.data().begin(), ta.data().end(), tb.data().begin()));

    Rng base(42);
    Rng s1 = base.split(1), s2 = base.split(2);
    Tensor t1 = sample_gaussian(s1, {8}), t2 = sample_gaussian(s2, {8});
    CHECK_FALSE(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));

    Rng big(2024);
    Tensor n = sample_gaussian(big, {100000});
    double m = 0.0, sq = 0.0;
    for (double v : n.data()) m += v;
    m /= 1e5;
    for (double v : n.data()) sq += (v - m) * (v - m);
    const double sd = std::sqrt(sq / (1e5 - 1));
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(sd - 1.0) < 0.02);
}
