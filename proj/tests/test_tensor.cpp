#include <doctest.h>

#include <cmath>
#include <random>

#include "gridcast/gradcheck.hpp"
#include "gridcast/tensor.hpp"

using namespace gridcast;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor::Array a(shape_numel(shape));
    for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
    return Tensor::from_array(std::move(shape), std::move(a), grad);
}

}  // namespace

TEST_CASE("matmul identity, hand product, annihilator") {
    Tensor eye = Tensor::from_vector({1, 0, 0, 1}, {2, 2});
    Tensor m = Tensor::from_vector({3, 4, 5, 6}, {2, 2});
    Tensor p = matmul(eye, m);
    CHECK(p(0, 0) == 3.0);
    CHECK(p(0, 1) == 4.0);
    CHECK(p(1, 0) == 5.0);
    CHECK(p(1, 1) == 6.0);

    Tensor a = Tensor::from_vector({1, 2}, {1, 2});
    Tensor b = Tensor::from_vector({3, 4}, {2, 1});
    CHECK(matmul(a, b)(0, 0) == 11.0);

    Tensor z = Tensor::zeros({2, 3});
    Tensor any = Tensor::from_vector({1, -2, 3, 4, -5, 6}, {3, 2});
    CHECK(matmul(z, any).value().abs().maxCoeff() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    try {
        matmul(a, b);
        FAIL("expected shape mismatch");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2 x 3]") != std::string::npos);
        CHECK(msg.find("[2 x 2]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on small random matrices") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({3, 4}, rng, false);
        Tensor b = random_tensor({4, 2}, rng, false);
        Tensor c = random_tensor({2, 5}, rng, false);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        CHECK((left.value() - right.value()).abs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("elementwise closed forms") {
    CHECK(sigmoid(Tensor::scalar(0.0))(0) == 0.5);
    CHECK(tanh(Tensor::scalar(0.0))(0) == 0.0);
    Tensor s = add(Tensor::from_vector({1, 2}, {2}), Tensor::from_vector({3, 4}, {2}));
    CHECK(s(0) == 4.0);
    CHECK(s(1) == 6.0);
    Tensor r = relu(Tensor::from_vector({-1.5, 0.0, 2.5}, {3}));
    CHECK(r(0) == 0.0);
    CHECK(r(1) == 0.0);
    CHECK(r(2) == 2.5);
}

TEST_CASE("elementwise rejects shape mismatch and non-finite input") {
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({3});
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, b), std::invalid_argument);

    Tensor bad = Tensor::from_vector({1.0, std::numeric_limits<double>::infinity()}, {2});
    CHECK_THROWS_AS(add(bad, Tensor::zeros({2})), std::invalid_argument);
    Tensor nan = Tensor::from_vector({std::nan("")}, {1});
    CHECK_THROWS_AS(sigmoid(nan), std::invalid_argument);
}

TEST_CASE("softmax closed forms and stability") {
    Tensor flat = softmax(Tensor::from_vector({3.3, 3.3, 3.3, 3.3}, {4}));
    for (Index i = 0; i < 4; ++i) CHECK(flat(i) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor big = softmax(Tensor::from_vector({1000.0, 1000.0}, {2}));
    CHECK(big(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(big(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(big.value().isFinite().all());

    Tensor quarters = softmax(Tensor::from_vector({0.0, std::log(3.0)}, {2}));
    CHECK(quarters(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(quarters(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rejects empty input") {
    CHECK_THROWS_AS(Tensor::zeros({0}), std::invalid_argument);
    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2})), std::invalid_argument);
}

TEST_CASE("softmax sums to one and is shift invariant") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({7}, rng, false);
        Tensor y = softmax(x);
        CHECK(std::abs(y.value().sum() - 1.0) < 1e-9);
        CHECK((y.value() > 0.0).all());
        Tensor shifted = softmax(add_scalar(x, 13.75));
        CHECK((y.value() - shifted.value()).abs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("backward: sum gives unit gradients") {
    Tensor w = Tensor::from_vector({1.0, -2.0, 0.5}, {3}, true);
    backward(sum(w));
    for (Index i = 0; i < 3; ++i) CHECK(w.grad()[i] == 1.0);
}

TEST_CASE("backward: chain rule through a zeroing multiply") {
    Tensor w = Tensor::scalar(1.7, true);
    Tensor loss = sigmoid(mul_scalar(w, 0.0));
    CHECK(loss(0) == 0.5);
    backward(loss);
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("backward errors: non-scalar loss, double invocation") {
    Tensor w = Tensor::from_vector({1.0, 2.0}, {2}, true);
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
    Tensor loss = sum(y);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("leaf used twice accumulates the sum of single-use gradients") {
    Tensor w = Tensor::from_vector({0.3, -1.1}, {2}, true);

    Tensor both = sum(add(mul(w, w), w));  // d/dw = 2w + 1
    backward(both);
    Tensor::Array twice = w.grad();

    w.zero_grad();
    backward(sum(mul(w.clone(), w.clone())));  // independent clones: no shared leaf
    w.zero_grad();

    backward(sum(mul(w, w)));
    Tensor::Array quad = w.grad();
    w.zero_grad();
    backward(sum(w));
    Tensor::Array lin = w.grad();

    for (Index i = 0; i < 2; ++i) CHECK(twice[i] == doctest::Approx(quad[i] + lin[i]).epsilon(1e-15));
}

TEST_CASE("grad_check closed forms") {
    Tensor theta = Tensor::scalar(3.0, true);
    auto square = [&]() { return mul(theta, theta); };
    double err = grad_check<double>(square, {&theta});
    CHECK(err < 1e-6);
    theta.zero_grad();
    backward(mul(theta, theta));
    CHECK(theta.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

    Tensor unused = Tensor::scalar(0.4, true);
    auto constant = [&]() { return Tensor::scalar(2.0); };
    CHECK(grad_check<double>(constant, {&unused}) == 0.0);
}

TEST_CASE("finite differences across the op battery") {
    std::mt19937_64 rng(211);

    // composite mixing matmul/linear/elementwise/softmax/reductions
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 local(900 + seed);
        Tensor w1 = random_tensor({3, 4}, local);
        Tensor w2 = random_tensor({3, 2}, local);
        Tensor b = random_tensor({2}, local);
        Tensor x = random_tensor({2, 4}, local, false);
        auto program = [&]() {
            Tensor h = tanh(matmul(matmul(x, transpose(w1)), w2));
            Tensor g = sigmoid(add_rowwise(h, b));
            Tensor a = softmax_rows(g);
            return mean(mul(a, g));
        };
        double err = grad_check<double>(program, {&w1, &w2, &b});
        CAPTURE(seed);
        CHECK(err <= 1e-4);
    }

    // per-op spots not covered above
    {
        Tensor x = random_tensor({4, 3}, rng);
        Tensor s = random_tensor({4}, rng);
        auto program = [&]() { return mean(scale_rows(x, s)); };
        CHECK(grad_check<double>(program, {&x, &s}) <= 1e-4);
    }
    {
        Tensor a = random_tensor({3, 2}, rng);
        Tensor b = random_tensor({3, 1}, rng);
        auto program = [&]() {
            Tensor c = concat_cols<double>({a, b});
            return sum(mul(col(c, 1), col(c, 2)));
        };
        CHECK(grad_check<double>(program, {&a, &b}) <= 1e-4);
    }
    {
        auto prop = std::make_shared<const Tensor::MatrixRM>(
            (Tensor::MatrixRM(2, 2) << 0.5, 0.5, 0.5, 0.5).finished());
        Tensor x = random_tensor({4, 3}, rng);
        auto program = [&]() { return mean(relu(graph_propagate(prop, x))); };
        CHECK(grad_check<double>(program, {&x}) <= 1e-4);
    }
    {
        Tensor x = random_tensor({2, 6}, rng);
        auto program = [&]() { return mean(sigmoid(reshape(x, {3, 4}))); };
        CHECK(grad_check<double>(program, {&x}) <= 1e-4);
    }
    {
        Tensor x = random_tensor({5}, rng);
        auto program = [&]() { return mean(mul(softmax(x), x)); };
        CHECK(grad_check<double>(program, {&x}) <= 1e-4);
    }
    {
        Tensor w = random_tensor({2, 3}, rng);
        Tensor bias = random_tensor({2}, rng);
        Tensor x = random_tensor({4, 3}, rng, false);
        auto program = [&]() { return mse_loss(linear(x, w, bias), Tensor::ones({4, 2})); };
        CHECK(grad_check<double>(program, {&w, &bias}) <= 1e-4);
    }
}

TEST_CASE("forward outputs stay finite on finite inputs") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({6, 6}, rng, false, -50.0, 50.0);
        CHECK(sigmoid(x).value().isFinite().all());
        CHECK(tanh(x).value().isFinite().all());
        CHECK(relu(x).value().isFinite().all());
        CHECK(softmax_rows(x).value().isFinite().all());
        CHECK(matmul(x, x).value().isFinite().all());
    }
}

TEST_CASE("tensor invariants: data length, grad congruence") {
    CHECK_THROWS_AS(Tensor::from_vector({1.0, 2.0}, {3}), std::invalid_argument);
    Tensor t = Tensor::zeros({2, 2}, true);
    CHECK(t.grad().size() == t.numel());
    CHECK(shape_numel(t.shape()) == t.numel());
}
