#include "doctest.h"
#include "test_util.hpp"

#include "goat/error.hpp"
#include "goat/pooling.hpp"

using namespace goat;
using namespace goat::testing;

namespace {

void add_pool(ParamStore& p, std::size_t d, std::size_t da, std::mt19937_64& rng)
{
    p.add("w", random_tensor({1, da}, rng));
    p.add("v", random_tensor({da, d}, rng));
    p.add("u", random_tensor({da, d}, rng));
}

void add_head(ParamStore& p, std::size_t d, std::size_t dffn, std::size_t ncls, std::mt19937_64& rng)
{
    p.add("f1w", random_tensor({d, dffn}, rng));
    p.add("f1b", random_tensor({dffn}, rng));
    p.add("f2w", random_tensor({dffn, d}, rng));
    p.add("f2b", random_tensor({d}, rng));
    p.add("ow", random_tensor({d, ncls}, rng));
    p.add("ob", random_tensor({ncls}, rng));
}

PoolingWeights pool_from(const Bindings& b) { return {b["w"], b["v"], b["u"]}; }
HeadWeights head_from(const Bindings& b) { return {b["f1w"], b["f1b"], b["f2w"], b["f2b"], b["ow"], b["ob"]}; }

} // namespace

TEST_CASE("gated attention scores")
{
    std::mt19937_64 rng(1);
    ParamStore p;
    add_pool(p, 5, 3, rng);
    Tape tape;
    Bindings b(tape, p, false);

    const Tensor row = random_tensor({1, 5}, rng);
    Tensor same({4, 5});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 5; ++c)
            same.at(i, c) = row.at(0, c);
    for (double a : gated_attention_scores(tape.constant(same), pool_from(b)).value().storage())
        CHECK(a == doctest::Approx(0.25).epsilon(1e-15));

    CHECK(gated_attention_scores(tape.constant(row), pool_from(b)).value() == Tensor::vector({1.0}));

    // Straight-line oracle on a random 4-node case.
    const Tensor h = random_tensor({4, 5}, rng);
    const Tensor alpha = gated_attention_scores(tape.constant(h), pool_from(b)).value();
    std::vector<double> s(4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t a = 0; a < 3; ++a) {
            double vh = 0, uh = 0;
            for (std::size_t c = 0; c < 5; ++c) {
                vh += p.at("v").at(a, c) * h.at(i, c);
                uh += p.at("u").at(a, c) * h.at(i, c);
            }
            s[i] += p.at("w").at(0, a) * std::tanh(vh) / (1.0 + std::exp(-uh));
        }
    double z = 0;
    for (double v : s)
        z += std::exp(v);
    double total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(alpha[i] - std::exp(s[i]) / z) <= 1e-14);
        CHECK(alpha[i] > 0.0);
        total += alpha[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("pool")
{
    std::mt19937_64 rng(2);
    Tape tape;
    const Tensor h = random_tensor({4, 3}, rng);
    auto hv = tape.constant(h);
    const Tensor mean = pool(hv, tape.constant(Tensor({4}, 0.25))).value();
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(std::abs(mean[c] - (h.at(0, c) + h.at(1, c) + h.at(2, c) + h.at(3, c)) / 4) <= 1e-15);

    const Tensor pick = pool(hv, tape.constant(Tensor::vector({0, 0, 1, 0}))).value();
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(pick[c] == h.at(2, c));

    for (int rep = 0; rep < 20; ++rep) {
        Tensor a = random_tensor({4}, rng, 0.0, 1.0);
        double s = 0;
        for (double v : a.storage())
            s += v;
        for (auto& v : a.storage())
            v /= s;
        const Tensor out = pool(hv, tape.constant(a)).value();
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t i = 0; i < 4; ++i) {
                lo = std::min(lo, h.at(i, c));
                hi = std::max(hi, h.at(i, c));
            }
            CHECK(out[c] >= lo - 1e-15);
            CHECK(out[c] <= hi + 1e-15);
        }
    }
    CHECK_THROWS_AS(pool(hv, tape.constant(Tensor::vector({0.5, 0.5, 0.5, 0}))), ContractError);
}

TEST_CASE("pooled embedding is permutation invariant")
{
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 2 + rng() % 20;
        ParamStore p;
        add_pool(p, 6, 3, rng);
        const Tensor h = random_tensor({n, 6}, rng);
        const auto perm = random_permutation(n, rng);
        Tape tape;
        Bindings b(tape, p, false);
        auto a = gated_attention_scores(tape.constant(h), pool_from(b));
        auto ap = gated_attention_scores(tape.constant(permute_rows(h, perm)), pool_from(b));
        for (std::size_t r = 0; r < n; ++r)
            CHECK(std::abs(ap.value()[r] - a.value()[perm[r]]) <= 1e-12);
        CHECK(max_abs_diff(pool(tape.constant(h), a).value(), pool(tape.constant(permute_rows(h, perm)), ap).value()) <=
              1e-10);
    }
}

TEST_CASE("classify")
{
    std::mt19937_64 rng(4);
    Tape tape;
    auto z = [&](Shape s) { return tape.constant(Tensor(std::move(s))); };
    HeadWeights zero{z({4, 16}), z({16}), z({16, 4}), z({4}), z({4, 3}), z({3})};
    CHECK(classify(tape.constant(random_tensor({4}, rng)), zero).value() == Tensor({3}));

    for (std::size_t ncls : {2u, 3u}) {
        ParamStore p;
        add_head(p, 4, 16, ncls, rng);
        Bindings b(tape, p, false);
        const Tensor x = random_tensor({4}, rng);
        const Tensor logits = classify(tape.constant(x), head_from(b)).value();
        CHECK(logits.shape() == Shape{ncls});

        ParamStore shifted = p;
        for (auto& v : shifted.at("ob").storage())
            v += 3.5;
        Bindings bs(tape, shifted, false);
        const Tensor l2 = classify(tape.constant(x), head_from(bs)).value();
        auto argmax = [](const Tensor& t) {
            return std::max_element(t.storage().begin(), t.storage().end()) - t.storage().begin();
        };
        CHECK(argmax(logits) == argmax(l2));
        CHECK(std::abs(cross_entropy(tape.constant(logits), 1).value().item() -
                       cross_entropy(tape.constant(l2), 1).value().item()) <= 1e-12);
    }
}

TEST_CASE("baseline pools")
{
    Tape tape;
    CHECK(baseline_pool(tape.constant(Tensor::matrix({{1, 5}, {3, 2}})), BaselinePool::max).value() ==
          Tensor::vector({3, 5}));
    auto same = tape.constant(Tensor::matrix({{0.5, -2}, {0.5, -2}, {0.5, -2}}));
    CHECK(baseline_pool(same, BaselinePool::mean).value() == Tensor::vector({0.5, -2}));

    std::mt19937_64 rng(5);
    ParamStore p;
    add_pool(p, 2, 3, rng);
    Bindings b(tape, p, false);
    const PoolingWeights pw = pool_from(b);
    CHECK(max_abs_diff(baseline_pool(same, BaselinePool::abmil, &pw).value(), Tensor::vector({0.5, -2})) <= 1e-15);
    CHECK_THROWS_AS(baseline_pool(same, BaselinePool::abmil), ContractError);
    CHECK(parse_baseline_pool("abmil") == BaselinePool::abmil);
    CHECK(to_string(BaselinePool::max) == "max");
}

TEST_CASE("pooling and head gradients match finite differences")
{
    std::mt19937_64 rng(6);
    ParamStore p;
    add_pool(p, 5, 3, rng);
    add_head(p, 5, 8, 3, rng);
    p.add("h", random_tensor({6, 5}, rng));
    CHECK(param_grad_error(p, [](const Bindings& b) {
              auto alpha = gated_attention_scores(b["h"], pool_from(b));
              return readout(pool(b["h"], alpha));
          }) < 1e-4);
    CHECK(param_grad_error(p, [](const Bindings& b) {
              return cross_entropy(classify(pool(b["h"], gated_attention_scores(b["h"], pool_from(b))), head_from(b)), 2);
          }) < 1e-4);
    for (BaselinePool m : {BaselinePool::max, BaselinePool::mean, BaselinePool::abmil}) {
        const PoolingWeights* none = nullptr;
        CHECK(param_grad_error(p, [&](const Bindings& b) {
                  const PoolingWeights pw = pool_from(b);
                  return readout(baseline_pool(b["h"], m, m == BaselinePool::abmil ? &pw : none));
              }) < 1e-4);
    }
}
