#include <cmath>

#include "doctest.h"
#include "r3/errors.hpp"
#include "r3/gradcheck.hpp"
#include "r3/kernels.hpp"
#include "r3/rating_model.hpp"
#include "r3/review_regularizer.hpp"

using namespace r3;

namespace {

ReviewEntry entry(std::size_t item, std::vector<std::uint32_t> tokens, double rating = 4.0) {
    ReviewEntry e;
    e.item = static_cast<std::uint32_t>(item);
    e.rating = rating;
    for (auto t : tokens) e.mask.push_back(t != 0);
    e.tokens = std::move(tokens);
    return e;
}

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (auto& x : t.data()) x = scale * standard_normal(rng);
    return t;
}

// Word table with a zero padding row.
Tensor word_table(std::size_t vocab, std::size_t dim, Rng& rng) {
    Tensor t = random_tensor({vocab, dim}, rng);
    for (std::size_t c = 0; c < dim; ++c) t.data()[c] = 0.0;
    return t;
}

RegularizerConfig small_config(std::size_t k, std::size_t d, bool relu = true) {
    RegularizerConfig c;
    c.k = k;
    c.word_dim = d;
    c.window = 3;
    c.conv_relu = relu;
    return c;
}

}  // namespace

TEST_CASE("conv_text examples") {
    RegularizerConfig c = small_config(1, 1, false);
    RegularizerParams p;
    p.conv_filters = Parameter("f", Tensor(Shape{1, 3, 1}, {1, 1, 1}));
    p.conv_bias = Parameter("b", Tensor::vector({0}));
    p.query = Parameter("q", Tensor::matrix({{1}}));
    p.key = Parameter("k", Tensor::matrix({{1}}));
    p.value = Parameter("v", Tensor::matrix({{1}}));
    ReviewRegularizer reg(c, p);

    SUBCASE("identity activation") {
        Tape t;
        auto vars = reg.bind(t);
        Var m = reg.conv_text(t, vars, t.constant(Tensor::matrix({{1}, {2}, {3}})));
        CHECK(t.value(m) == Tensor::matrix({{3}, {6}, {5}}));
    }
    SUBCASE("zero input passes the bias") {
        reg.params().conv_bias.value = Tensor::vector({-0.5});
        Tape t;
        auto vars = reg.bind(t);
        Var m = reg.conv_text(t, vars, t.constant(Tensor(Shape{4, 1})));
        for (std::size_t r = 0; r < 4; ++r) CHECK(t.value(m).at(r, 0) == -0.5);
    }
    SUBCASE("relu activation") {
        c.conv_relu = true;
        p.conv_filters.value = Tensor(Shape{1, 3, 1}, {0, 1, 0});
        ReviewRegularizer relu_reg(c, p);
        Tape t;
        auto vars = relu_reg.bind(t);
        Var m = relu_reg.conv_text(t, vars, t.constant(Tensor::matrix({{-1}, {2}, {-3}})));
        CHECK(t.value(m) == Tensor::matrix({{0}, {2}, {0}}));
    }
    SUBCASE("even window rejected") {
        c.window = 2;
        CHECK_THROWS_AS(ReviewRegularizer(c, p), ConfigError);
    }
}

TEST_CASE("attention examples") {
    const std::size_t k = 2;
    RegularizerConfig c = small_config(k, 1);
    Rng rng(1);
    auto reg = ReviewRegularizer::initialize(c, rng);
    Tensor features = Tensor::matrix({{1, 2}, {3, -1}, {0.5, 4}});
    Tensor v_j = Tensor::vector({0.7, -0.3});

    auto run = [&](std::vector<std::uint8_t> mask) {
        Tape t;
        auto vars = reg.bind(t);
        auto att = reg.attend(t, vars, t.constant(v_j), t.constant(features), mask);
        Var values = t.matmul(t.constant(features), vars.value, true);
        return std::tuple{t.value(att.z), t.value(att.scores), t.value(values)};
    };

    SUBCASE("zero keys give uniform attention") {
        reg.params().key.value = Tensor(Shape{k, k});
        auto [z, scores, values] = run({1, 0, 1});
        CHECK(scores[1] == 0.0);
        CHECK(scores[0] == doctest::Approx(0.5));
        CHECK(scores[2] == doctest::Approx(0.5));
        for (std::size_t c2 = 0; c2 < k; ++c2)
            CHECK(z[c2] == doctest::Approx((values.at(0, c2) + values.at(2, c2)) / 2).epsilon(1e-14));
    }
    SUBCASE("singleton row") {
        auto [z, scores, values] = run({0, 1, 0});
        CHECK(scores[1] == 1.0);
        for (std::size_t c2 = 0; c2 < k; ++c2) CHECK(z[c2] == doctest::Approx(values.at(1, c2)).epsilon(1e-14));
    }
    SUBCASE("logits 0 and ln 2") {
        // q = W_q v = [1, 0]; keys row t = features[t] . W_k^T. Choose W_k so
        // the scaled logits are exactly [0, ln 2].
        RegularizerConfig lc = small_config(k, 1);
        lc.scale_logits = false;
        RegularizerParams p = reg.params();
        p.query.value = Tensor::matrix({{1, 0}, {0, 0}});
        p.key.value = Tensor::matrix({{0, std::log(2.0)}, {0, 0}});
        ReviewRegularizer r2(lc, p);
        Tensor f = Tensor::matrix({{1, 0}, {0, 1}});
        Tape t;
        auto vars = r2.bind(t);
        auto att = r2.attend(t, vars, t.constant(Tensor::vector({1, 0})), t.constant(f), std::vector<std::uint8_t>{1, 1});
        Tensor values = kernels::matmul(f, p.value.value, true);
        CHECK(t.value(att.scores)[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
        CHECK(t.value(att.scores)[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));
        for (std::size_t c2 = 0; c2 < k; ++c2) {
            CHECK(t.value(att.z)[c2] ==
                  doctest::Approx((values.at(0, c2) + 2 * values.at(1, c2)) / 3).epsilon(1e-14));
        }
    }
    SUBCASE("all masked is a contract violation") {
        CHECK_THROWS_AS(run({0, 0, 0}), ContractError);
    }
}

TEST_CASE("rec_R examples") {
    const std::size_t k = 3, d = 4;
    Rng rng(2);
    auto reg = ReviewRegularizer::initialize(small_config(k, d), rng);
    Tensor words = word_table(10, d, rng);
    Tensor items = random_tensor({5, k}, rng);
    auto e = entry(2, {3, 4, 5, 6, 0, 0});

    SUBCASE("zero item vector gives zero") {
        for (std::size_t c = 0; c < k; ++c) items.data()[2 * k + c] = 0.0;
        CHECK(reg.rec_r(items, words, e) == 0.0);
    }
    SUBCASE("identity values and a single unmasked row") {
        reg.params().value.value = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
        auto single = entry(2, {0, 7, 0, 0});
        Tape t;
        auto vars = reg.bind(t);
        Var m = reg.conv_text(t, vars, ReviewRegularizer::review_matrix(t, t.constant(words), single));
        double expect = 0.0;
        for (std::size_t c = 0; c < k; ++c) expect += items.at(2, c) * t.value(m).at(1, c);
        CHECK(reg.rec_r(items, words, single) == doctest::Approx(expect).epsilon(1e-14));
    }
    SUBCASE("doubling v_j with zero keys doubles rec_R") {
        reg.params().key.value = Tensor(Shape{k, k});
        double base = reg.rec_r(items, words, e);
        for (std::size_t c = 0; c < k; ++c) items.data()[2 * k + c] *= 2.0;
        CHECK(reg.rec_r(items, words, e) == doctest::Approx(2.0 * base).epsilon(1e-14));
    }
    SUBCASE("taped equals untaped") {
        Parameter it("items", items), wd("words", words);
        wd.trainable = false;
        Tape t;
        auto vars = reg.bind(t);
        double taped = t.value(reg.rec_r(t, vars, t.param(it), t.param(wd), e)).item();
        CHECK(taped == reg.rec_r(items, words, e));
    }
    SUBCASE("validation errors") {
        CHECK_THROWS_AS(reg.rec_r(items, words, entry(5, {1, 2, 3})), LookupError);
        CHECK_THROWS_AS(reg.rec_r(items, words, entry(0, {1, 2, 30})), LookupError);
        CHECK_THROWS_AS(reg.rec_r(items, words, entry(0, {1, 2})), ShapeError);
    }
}

TEST_CASE("attention score and padding invariants on random entries") {
    const std::size_t k = 4, d = 6, len = 8, vocab = 20;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        auto reg = ReviewRegularizer::initialize(small_config(k, d), rng);
        Tensor words = word_table(vocab, d, rng);
        Tensor items = random_tensor({3, k}, rng);
        std::vector<std::uint32_t> toks(len, 0);
        const std::size_t real = 3 + uniform_index(rng, len - 2);
        for (std::size_t i = 0; i < real; ++i) toks[i] = static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1));
        auto e = entry(uniform_index(rng, 3), toks);

        Tensor s = reg.attention_scores(items, words, e);
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            CHECK(s[i] >= 0.0);
            if (!e.mask[i]) CHECK(s[i] == 0.0);
            total += s[i];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

        // Garbage ids under the mask must not change anything.
        auto garbled = e;
        for (std::size_t i = real; i < len; ++i) garbled.tokens[i] = static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1));
        CHECK(reg.rec_r(items, words, garbled) == reg.rec_r(items, words, e));
    }
}

TEST_CASE("full-branch gradients match finite differences") {
    const std::size_t k = 4, d = 6, len = 8, vocab = 15;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(100 + seed);
        auto reg = ReviewRegularizer::initialize(small_config(k, d), rng);
        // Keep pre-activations away from the ReLU kink.
        reg.params().conv_bias.value = Tensor::vector({0.3, 0.4, 0.5, 0.6});
        Parameter items("items", random_tensor({4, k}, rng));
        Parameter words("words", word_table(vocab, d, rng));
        words.trainable = false;
        std::vector<std::uint32_t> toks(len, 0);
        for (std::size_t i = 0; i < 6; ++i) toks[i] = static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1));
        auto e = entry(1, toks);

        auto loss = [&](Tape& t) {
            auto vars = reg.bind(t);
            return reg.rec_r(t, vars, t.param(items), t.param(words), e);
        };
        auto& P = reg.params();
        std::vector<Parameter*> params{&items, &P.conv_filters, &P.conv_bias, &P.query, &P.key, &P.value};
        GradCheckOptions opts;
        opts.max_coords = 0;
        opts.seed = seed;
        auto report = finite_diff_check(loss, params, opts);
        CHECK_MESSAGE(report.passed(), "max rel error " << report.max_rel_error());

        // Only the reviewed item's row moves; word vectors are frozen.
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < k; ++c)
                if (r != 1) CHECK(items.grad.at(r, c) == 0.0);
        for (double g : words.grad.values()) CHECK(g == 0.0);
    }
}

TEST_CASE("review-only step moves the shared item table") {
    const std::size_t k = 3, d = 4;
    Rng rng(9);
    auto model = RatingModel::initialize(4, 4, k, 3.0, rng);
    auto reg = ReviewRegularizer::initialize(small_config(k, d), rng);
    Parameter words("words", word_table(12, d, rng));
    words.trainable = false;
    auto e = entry(2, {1, 5, 7, 9, 0});

    const double before = model.rec(1, 2);
    const double untouched = model.rec(1, 3);
    Tape t;
    auto vars = reg.bind(t);
    Var err = t.sub(reg.rec_r(t, vars, t.param(model.params().items), t.param(words), e), t.scalar(e.rating));
    t.backward(t.square(err));
    auto& items = model.params().items;
    for (std::size_t i = 0; i < items.value.size(); ++i) items.value.data()[i] -= 0.1 * items.grad.values()[i];

    CHECK(model.rec(1, 2) != before);
    CHECK(model.rec(1, 3) == untouched);
}
