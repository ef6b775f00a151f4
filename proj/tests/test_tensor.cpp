#include "doctest.h"

#include "goat/error.hpp"
#include "goat/ops.hpp"
#include "goat/tape.hpp"

#include <cmath>
#include <random>

using namespace goat;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.storage())
        v = u(rng);
    return t;
}

} // namespace

TEST_CASE("matmul examples")
{
    Tape tape;
    auto a = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
    auto id = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(matmul(a, id).value() == a.value());

    auto r = tape.constant(Tensor::matrix({{1, 2}}));
    auto c = tape.constant(Tensor::matrix({{3}, {4}}));
    CHECK(matmul(r, c).value() == Tensor::matrix({{11}}));

    auto z = tape.constant(Tensor({2, 3}));
    auto any = tape.constant(Tensor::matrix({{1, -2}, {3, 7}, {5, 9}}));
    CHECK(matmul(z, any).value() == Tensor({2, 2}));
}

TEST_CASE("matmul shape mismatch names both shapes")
{
    Tape tape;
    auto a = tape.constant(Tensor({2, 3}));
    auto b = tape.constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random chains")
{
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        Tape tape;
        auto a = tape.constant(random_tensor({3, 4}, rng));
        auto b = tape.constant(random_tensor({4, 5}, rng));
        auto c = tape.constant(random_tensor({5, 2}, rng));
        const Tensor l = matmul(matmul(a, b), c).value();
        const Tensor r = matmul(a, matmul(b, c)).value();
        for (std::size_t i = 0; i < l.numel(); ++i)
            CHECK(std::abs(l[i] - r[i]) <= 1e-9 * std::max(1.0, std::abs(l[i])));
    }
}

TEST_CASE("softmax examples")
{
    Tape tape;
    CHECK(softmax_lastdim(tape.constant(Tensor::vector({0, 0}))).value() == Tensor::vector({0.5, 0.5}));

    const Tensor s = softmax_lastdim(tape.constant(Tensor::vector({std::log(2.0), 0}))).value();
    CHECK(s[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const Tensor m = softmax_lastdim(tape.constant(Tensor::vector({5, 123})), {true, false}).value();
    CHECK(m[0] == 1.0);
    CHECK(m[1] == 0.0);

    CHECK_THROWS_AS(softmax_lastdim(tape.constant(Tensor::vector({1, 2})), {false, false}), DegenerateRowError);
}

TEST_CASE("softmax rows sum to one and ignore row shifts")
{
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        Tape tape;
        Tensor x = random_tensor({4, 7}, rng, -20, 20);
        Tensor shifted = x;
        std::uniform_real_distribution<double> u(-50, 50);
        for (std::size_t r = 0; r < 4; ++r) {
            const double c = u(rng);
            for (std::size_t j = 0; j < 7; ++j)
                shifted.at(r, j) += c;
        }
        const Tensor a = softmax_lastdim(tape.constant(x)).value();
        const Tensor b = softmax_lastdim(tape.constant(shifted)).value();
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < 7; ++j) {
                CHECK(a.at(r, j) >= 0.0);
                sum += a.at(r, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
        CHECK(max_abs_diff(a, b) <= 1e-12);
    }
}

TEST_CASE("pointwise examples")
{
    Tape tape;
    CHECK(pointwise(tape.constant(Tensor::scalar(0)), Pointwise::tanh).value().item() == 0.0);
    CHECK(pointwise(tape.constant(Tensor::scalar(0)), Pointwise::sigm).value().item() == 0.5);
    CHECK(pointwise(tape.constant(Tensor::vector({-1, 2})), Pointwise::relu).value() == Tensor::vector({0, 2}));
    CHECK(pointwise(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4})), Pointwise::mul)
              .value() == Tensor::vector({3, 8}));
    CHECK_THROWS_AS(
        pointwise(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 2})), Pointwise::add), DimensionError);
}

TEST_CASE("row broadcast")
{
    Tape tape;
    auto x = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    auto b = tape.constant(Tensor::vector({10, 20}));
    CHECK(add(x, b).value() == Tensor::matrix({{11, 22}, {13, 24}}));
}

TEST_CASE("backward examples")
{
    {
        Tape tape;
        auto x = tape.leaf(Tensor::scalar(3));
        auto y = mul(x, x);
        CHECK(tape.backward(y).at(x).item() == 6.0);
    }
    {
        Tape tape;
        auto x = tape.leaf(Tensor::vector({0.3, -1.2, 2.0}));
        auto grads = tape.backward(sum(softmax_lastdim(x)));
        for (double g : grads.at(x).storage())
            CHECK(std::abs(g) <= 1e-15);
    }
    {
        // sum(a * b) with `a` also reused: f = sum(a*b) + sum(a*a)
        const Tensor a0 = Tensor::vector({0.5, -1.5, 2.0});
        const Tensor b0 = Tensor::vector({1.0, 3.0, -2.0});
        Tape tape;
        auto a = tape.leaf(a0);
        auto b = tape.constant(b0);
        auto f = add(sum(mul(a, b)), sum(mul(a, a)));
        const Tensor g = tape.backward(f).at(a);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(g[i] == doctest::Approx(b0[i] + 2 * a0[i]).epsilon(1e-14));

        const double err = grad_check(
            [&](Tape& t, Var x) { return add(sum(mul(x, t.constant(b0))), sum(mul(x, x))); }, a0);
        CHECK(err < 1e-8);
    }
}

TEST_CASE("backward contracts")
{
    Tape tape;
    auto x = tape.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);

    Tape other;
    auto y = other.leaf(Tensor::scalar(1));
    CHECK_THROWS_AS(tape.backward(mul(y, y)), ContractError);

    Tape t3;
    auto a = t3.leaf(Tensor::scalar(1));
    auto b = t3.leaf(Tensor::scalar(2));
    auto g = t3.backward(mul(a, a));
    CHECK(g.contains(a));
    CHECK_FALSE(g.contains(b));
}

TEST_CASE("grad_check on linear function is exact")
{
    std::mt19937_64 rng(1);
    const Tensor w = random_tensor({4, 3}, rng);
    const double err = grad_check([&](Tape& t, Var x) { return sum(matmul(x, t.constant(w))); },
                                  random_tensor({2, 4}, rng));
    CHECK(err < 1e-10);
}

TEST_CASE("grad_check rejects non-finite evaluations")
{
    CHECK_THROWS_AS(grad_check([](Tape&, Var x) { return sum(div(x, x)); }, Tensor::vector({0.0, 1.0})),
                    NumericError);
}

TEST_CASE("every op matches finite differences")
{
    std::mt19937_64 rng(42);
    const Tensor w = random_tensor({3, 4}, rng);
    const Tensor v = random_tensor({2, 3}, rng);
    const Tensor row = random_tensor({3}, rng);
    const Tensor pos = random_tensor({2, 3}, rng, 0.5, 2.0);
    const Tensor gamma = random_tensor({3}, rng);
    const Tensor beta = random_tensor({3}, rng);
    CsrMatrix m;
    m.n_rows = 3;
    m.n_cols = 2;
    m.row_ptr = {0, 2, 3, 4};
    m.col_idx = {0, 1, 1, 0};
    m.values = {0.5, -1.0, 2.0, 0.25};
    const std::vector<std::size_t> offsets{0, 1, 2};
    const std::vector<std::size_t> seg{0, 2, 5, 6};

    // Random linear read-out so every output coordinate matters.
    auto readout = [&](Tape& t, Var y) {
        std::mt19937_64 r(7);
        return sum(mul(y, t.constant(random_tensor(y.shape(), r))));
    };

    const std::vector<std::pair<std::string, ScalarFn>> cases{
        {"matmul", [&](Tape& t, Var x) { return readout(t, matmul(x, t.constant(w))); }},
        {"matmul_nt", [&](Tape& t, Var x) { return readout(t, matmul_nt(x, t.constant(v))); }},
        {"transpose", [&](Tape& t, Var x) { return readout(t, transpose(x)); }},
        {"add", [&](Tape& t, Var x) { return readout(t, add(x, x)); }},
        {"add_row", [&](Tape& t, Var x) { return readout(t, add(t.constant(v), reshape(gather_rows(x, {0}), {3}))); }},
        {"sub", [&](Tape& t, Var x) { return readout(t, sub(x, mul(x, x))); }},
        {"mul", [&](Tape& t, Var x) { return readout(t, mul(x, t.constant(v))); }},
        {"div", [&](Tape& t, Var x) { return readout(t, div(t.constant(pos), add(mul(x, x), t.constant(pos)))); }},
        {"scale", [&](Tape& t, Var x) { return readout(t, scale(x, -2.5)); }},
        {"tanh", [&](Tape& t, Var x) { return readout(t, tanh(x)); }},
        {"sigmoid", [&](Tape& t, Var x) { return readout(t, sigmoid(x)); }},
        {"relu", [&](Tape& t, Var x) { return readout(t, relu(x)); }},
        {"mean_rows", [&](Tape& t, Var x) { return readout(t, mean_rows(x)); }},
        {"max_rows", [&](Tape& t, Var x) { return readout(t, max_rows(x)); }},
        {"gather_rows", [&](Tape& t, Var x) { return readout(t, gather_rows(x, {1, 0, 1})); }},
        {"segment_sum", [&](Tape& t, Var x) { return readout(t, segment_sum(x, offsets)); }},
        {"block_sum_cols", [&](Tape& t, Var x) { return readout(t, block_sum_cols(reshape(x, {3, 2}), 2)); }},
        {"repeat_cols", [&](Tape& t, Var x) { return readout(t, repeat_cols(x, 2)); }},
        {"spmm", [&](Tape& t, Var x) { return readout(t, spmm(m, x)); }},
        {"softmax", [&](Tape& t, Var x) { return readout(t, softmax_lastdim(x)); }},
        {"softmax_masked",
         [&](Tape& t, Var x) { return readout(t, softmax_lastdim(x, {true, false, true, true, true, false})); }},
        {"segment_softmax",
         [&](Tape& t, Var x) { return readout(t, segment_softmax(reshape(x, {6, 1}), seg)); }},
        {"layer_norm", [&](Tape& t, Var x) { return readout(t, layer_norm(x, t.constant(gamma), t.constant(beta))); }},
        {"cross_entropy", [&](Tape&, Var x) { return cross_entropy(reshape(x, {6}), 4); }},
    };
    for (const auto& [name, f] : cases) {
        CAPTURE(name);
        CHECK(grad_check(f, random_tensor({2, 3}, rng)) < 1e-4);
    }
}

TEST_CASE("cross entropy is shift invariant")
{
    Tape tape;
    const Tensor z = Tensor::vector({0.3, -1.0, 2.5});
    Tensor shifted = z;
    for (auto& v : shifted.storage())
        v += 17.0;
    const double a = cross_entropy(tape.constant(z), 1).value().item();
    const double b = cross_entropy(tape.constant(shifted), 1).value().item();
    CHECK(std::abs(a - b) <= 1e-12);
    CHECK_THROWS_AS(cross_entropy(tape.constant(z), 3), ContractError);
}

TEST_CASE("non-finite forward values are rejected")
{
    Tape tape;
    auto x = tape.constant(Tensor::vector({1.0, 0.0}));
    CHECK_THROWS_AS(div(x, tape.constant(Tensor::vector({0.0, 0.0}))), NumericError);
}
