#include <algorithm>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "r3/errors.hpp"
#include "r3/gradcheck.hpp"
#include "r3/rating_model.hpp"

using namespace r3;

namespace {

RatingModel make_model(Tensor users, Tensor items, Tensor weights, double bias) {
    RatingParams p;
    p.users = Parameter("rating.users", std::move(users));
    p.items = Parameter("rating.items", std::move(items));
    p.weights = Parameter("rating.weights", std::move(weights));
    p.bias = Parameter("rating.bias", Tensor::scalar(bias));
    return RatingModel(std::move(p));
}

// Independent scorer: builds the feature vector explicitly.
double reference_rec(const RatingModel& m, std::uint32_t i, std::uint32_t j) {
    const auto& P = m.params();
    const std::size_t k = m.k();
    std::vector<double> f;
    for (std::size_t a = 0; a < k; ++a) f.push_back(P.users.value.at(i, a));
    for (std::size_t b = 0; b < k; ++b) f.push_back(P.items.value.at(j, b));
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) f.push_back(P.users.value.at(i, a) * P.items.value.at(j, b));
    double s = 0.0;
    for (std::size_t t = 0; t < f.size(); ++t) s += P.weights.value[t] * f[t];
    return s + P.bias.value.item();
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("rec hand examples") {
    SUBCASE("K=1") {
        auto m = make_model(Tensor::matrix({{2}}), Tensor::matrix({{3}}), Tensor::vector({1, 1, 1}), 0.0);
        CHECK(m.rec(0, 0) == 11.0);
    }
    SUBCASE("zero user vector leaves only the item segment") {
        auto m = make_model(Tensor::matrix({{0, 0}}), Tensor::matrix({{3, 4}}),
                            Tensor::vector({5, 6, 7, 8, 9, 9, 9, 9}), 0.5);
        CHECK(m.rec(0, 0) == 7 * 3 + 8 * 4 + 0.5);
    }
    SUBCASE("K=2 outer segment") {
        auto m = make_model(Tensor::matrix({{1, 2}}), Tensor::matrix({{3, 4}}),
                            Tensor::vector({0, 0, 0, 0, 1, 1, 1, 1}), 0.0);
        CHECK(m.rec(0, 0) == 21.0);
    }
}

TEST_CASE("embed lookups") {
    Tensor table = Tensor::matrix({{0, 0}, {0, 0}, {.1, .2}});
    auto row = RatingModel::embed(table, 2);
    CHECK(row[0] == .1);
    CHECK(row[1] == .2);
    CHECK_THROWS_AS(RatingModel::embed(table, 3), LookupError);

    Rng rng(3);
    auto m = RatingModel::initialize(4, 5, 2, 3.5, rng);
    CHECK_THROWS_AS(m.rec(4, 0), LookupError);
    CHECK_THROWS_AS(m.rec(0, 5), LookupError);
}

TEST_CASE("embedding gradient touches one row") {
    Parameter table("t", Tensor::matrix({{1, 1}, {2, 2}, {.1, .2}, {4, 4}}));
    Tape tape;
    Var t = tape.param(table);
    Var loss = tape.dot(tape.gather_row(t, 2), tape.constant(Tensor::vector({3, 5})));
    tape.backward(loss);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(table.grad.at(r, 0) == (r == 2 ? 3.0 : 0.0));
        CHECK(table.grad.at(r, 1) == (r == 2 ? 5.0 : 0.0));
    }
}

TEST_CASE("taped, untaped and reference scorers agree") {
    Rng rng(11);
    auto m = RatingModel::initialize(7, 9, 4, 3.0, rng);
    for (std::uint32_t i = 0; i < 7; ++i) {
        for (std::uint32_t j = 0; j < 9; ++j) {
            Tape tape;
            auto vars = m.bind(tape);
            double taped = tape.value(RatingModel::rec(tape, vars, i, j)).item();
            CHECK(same_bits(taped, m.rec(i, j)));
            CHECK(m.rec(i, j) == doctest::Approx(reference_rec(m, i, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("rec_batch") {
    Rng rng(5);
    auto m = RatingModel::initialize(50, 40, 8, 3.7, rng);
    std::vector<UserItem> pairs(1024);
    for (auto& p : pairs) {
        p.user = static_cast<std::uint32_t>(uniform_index(rng, 50));
        p.item = static_cast<std::uint32_t>(uniform_index(rng, 40));
    }

    SUBCASE("singleton") {
        auto out = m.rec_batch(std::span<const UserItem>(pairs.data(), 1));
        REQUIRE(out.size() == 1);
        CHECK(same_bits(out[0], m.rec(pairs[0].user, pairs[0].item)));
    }
    SUBCASE("1024 entries equal scalar calls bitwise, threaded too") {
        auto out = m.rec_batch(pairs);
        auto threaded = m.rec_batch(pairs, 4);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            CHECK(same_bits(out[i], m.rec(pairs[i].user, pairs[i].item)));
            CHECK(same_bits(out[i], threaded[i]));
        }
    }
    SUBCASE("permuted batch permutes outputs") {
        std::vector<std::size_t> perm(pairs.size());
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(std::span<std::size_t>(perm), rng);
        std::vector<UserItem> permuted;
        for (auto p : perm) permuted.push_back(pairs[p]);
        auto a = m.rec_batch(pairs);
        auto b = m.rec_batch(permuted);
        for (std::size_t i = 0; i < perm.size(); ++i) CHECK(same_bits(b[i], a[perm[i]]));
    }
    SUBCASE("invalid id names its batch index") {
        pairs[17].item = 40;
        try {
            m.rec_batch(pairs);
            FAIL("expected LookupError");
        } catch (const LookupError& e) {
            CHECK(std::string(e.what()).find("batch index 17") != std::string::npos);
        }
    }
}

TEST_CASE("rec is linear in the regressor weights") {
    Rng rng(8);
    auto m = RatingModel::initialize(6, 6, 3, 0.0, rng);
    auto doubled = m;
    for (auto& x : doubled.params().weights.value.data()) x *= 2.0;
    for (std::uint32_t i = 0; i < 6; ++i)
        for (std::uint32_t j = 0; j < 6; ++j) CHECK(doubled.rec(i, j) == 2.0 * m.rec(i, j));
}

TEST_CASE("per-entry cost is quadratic in K") {
    for (std::size_t k : {2, 4, 8, 16}) {
        Rng rng(k);
        auto m = RatingModel::initialize(3, 3, k, 3.0, rng);
        RatingModel::reset_multiply_adds();
        m.rec(1, 2);
        CHECK(RatingModel::multiply_adds() == 2 * k + 2 * k * k);
    }
}

TEST_CASE("rec gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed);
        auto m = RatingModel::initialize(5, 4, 3, 3.0, rng);
        auto& P = m.params();
        const std::uint32_t i = static_cast<std::uint32_t>(seed % 5), j = static_cast<std::uint32_t>(seed % 4);
        auto loss = [&](Tape& t) {
            auto vars = m.bind(t);
            return RatingModel::rec(t, vars, i, j);
        };
        std::vector<Parameter*> params{&P.users, &P.items, &P.weights, &P.bias};
        GradCheckOptions opts;
        opts.max_coords = 0;
        opts.seed = seed;
        auto report = finite_diff_check(loss, params, opts);
        CHECK_MESSAGE(report.passed(), "max rel error " << report.max_rel_error());
    }
}
