// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "r3/baselines.hpp"
#include "r3/checkpoint.hpp"
#include "r3/data_ingest.hpp"
#include "r3/evalbench.hpp"
#include "r3/gradcheck.hpp"
#include "r3/kernels.hpp"
#include "r3/review_regularizer.hpp"
#include "r3/training.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace r3;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RatingTriple triple(std::uint32_t u, std::uint32_t i, double r) {
    RatingTriple t;
    t.user = u;
    t.item = i;
    t.rating = r;
    return t;
}

double min_train_rmse(const std::vector<EpochLog>& log) {
    double best = INFINITY;
    for (const auto& e : log) best = std::min(best, e.train_rmse);
    return best;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckShape shape;  // 4 users, 4 items, K=4, L=8, D=6, 8 reviews
    auto inst = make_gradcheck_instance(shape, 0);
    GradCheckOptions opts;
    opts.tol = 1e-4;
    opts.max_coords = 0;
    auto report = check_r3_gradients(inst, opts);
    const double secs = seconds_since(t0);

    std::set<std::string> checked;
    for (const auto& p : report.params) checked.insert(p.name);
    std::size_t trainable = 0;
    bool covered = true;
    for (auto* p : inst.model.optimized()) {
        if (!p->trainable) continue;
        ++trainable;
        covered = covered && checked.count(p->name) > 0;
    }
    return {report.passed() && covered && trainable == 11 && secs < 60.0,
            fmt("max rel error %.3e over %zu tensors, %.2f s", report.max_rel_error(), checked.size(), secs)};
}

Outcome reduction_identity() {
    GradCheckShape shape;
    shape.users = 12;
    shape.items = 10;
    shape.reviews = 16;
    shape.ratings = 16;
    auto inst = make_gradcheck_instance(shape, 4);
    auto& m = inst.model;
    m.uncertainty.rating.value = Tensor::scalar(0.0);
    m.uncertainty.review.value = Tensor::scalar(0.0);
    m.uncertainty.rating.trainable = false;
    m.uncertainty.review.trainable = false;

    Rng rng(21);
    const std::size_t len = inst.reviews.front().length();
    const std::size_t vocab = m.word_embeddings.value.dim(0);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<RatingTriple> ratings;
        const std::size_t nr = 1 + uniform_index(rng, 32);
        for (std::size_t i = 0; i < nr; ++i) {
            ratings.push_back(triple(static_cast<std::uint32_t>(uniform_index(rng, shape.users)),
                                     static_cast<std::uint32_t>(uniform_index(rng, shape.items)),
                                     1.0 + 4.0 * uniform_unit(rng)));
        }
        std::vector<ReviewEntry> reviews;
        const std::size_t nv = 1 + uniform_index(rng, 16);
        for (std::size_t i = 0; i < nv; ++i) {
            ReviewEntry e;
            e.item = static_cast<std::uint32_t>(uniform_index(rng, shape.items));
            e.rating = 1.0 + 4.0 * uniform_unit(rng);
            const std::size_t real = 1 + uniform_index(rng, len);
            for (std::size_t p = 0; p < len; ++p) {
                e.tokens.push_back(p < real ? static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1)) : 0);
                e.mask.push_back(p < real);
            }
            reviews.push_back(std::move(e));
        }
        Tape tape;
        auto loss = r3_loss(tape, m, ratings, reviews, 0.0);
        const double total = tape.value(loss.total).item();
        const double sum = tape.value(loss.rating).item() + tape.value(*loss.review).item();
        if (!same_bits(total, sum)) ++mismatches;
    }
    return {mismatches == 0, fmt("%zu of 100 batches differ bitwise", mismatches)};
}

// Independent two-pass means oracle, recomputed per query.
double stats_oracle(const std::vector<RatingTriple>& train, std::uint32_t user, std::uint32_t item) {
    double alpha = 0.0;
    for (const auto& t : train) alpha += t.rating;
    alpha /= static_cast<double>(train.size());
    auto bu = [&](std::uint32_t u) {
        double s = 0.0;
        int n = 0;
        for (const auto& t : train)
            if (t.user == u) s += t.rating - alpha, ++n;
        return n ? s / n : 0.0;
    };
    double s = 0.0;
    int n = 0;
    for (const auto& t : train)
        if (t.item == item) s += t.rating - alpha - bu(t.user), ++n;
    return alpha + bu(user) + (n ? s / n : 0.0);
}

Outcome oracle_equivalence() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t users = 1 + uniform_index(rng, 20), items = 1 + uniform_index(rng, 20);
        const std::size_t n = 1 + uniform_index(rng, 200);
        std::vector<RatingTriple> train;
        for (std::size_t i = 0; i < n; ++i) {
            train.push_back(triple(static_cast<std::uint32_t>(uniform_index(rng, users)),
                                   static_cast<std::uint32_t>(uniform_index(rng, items)),
                                   1.0 + static_cast<double>(uniform_index(rng, 5))));
        }
        auto m = fit_stats(train, users + 2, items + 2);
        for (std::uint32_t u = 0; u < users + 2; ++u)
            for (std::uint32_t i = 0; i < items + 2; ++i) {
                const double want = stats_oracle(train, u, i);
                worst = std::max(worst, std::abs(m.predict(u, i) - want) / std::max(1.0, std::abs(want)));
            }
    }
    std::vector<RatingTriple> hand{triple(0, 0, 4), triple(0, 1, 2), triple(1, 0, 5)};
    const double p = fit_stats(hand, 2, 2).predict(0, 0);
    return {worst <= 1e-12 && p == 3.5, fmt("worst rel error %.2e over 50 datasets, hand example %.17g", worst, p)};
}

Outcome recoverability() {
    synth::Rank1Options clean;
    clean.seed = 2;
    auto splits = synth::rank1(clean);

    PMFConfig pc;
    pc.k = 1;
    pc.lambda = 0.0;
    pc.lr = 1e-2;
    pc.batch = 32;
    pc.max_epochs = 200;
    pc.patience = 200;
    const double pmf_train = min_train_rmse(train_pmf(splits, pc).log);

    TrainConfig rc;
    rc.k = 8;
    rc.lambda = 0.0;
    rc.lr = 1e-2;
    rc.rating_batch = 32;
    rc.max_epochs = 200;
    rc.patience = 200;
    rc.use_reviews = false;
    const Tensor words(Shape{2, 4});
    const double r3_train = min_train_rmse(train(splits, {}, words, rc).log);

    synth::Rank1Options noisy = clean;
    noisy.noise = 0.1;
    auto noisy_splits = synth::rank1(noisy);
    rc.patience = 10;
    rc.lr = 3e-3;
    rc.lambda = 1e-3;
    const double r3_valid = train(noisy_splits, {}, words, rc).best_valid_rmse;

    return {pmf_train < 0.05 && r3_train < 0.05 && r3_valid < 0.15,
            fmt("pmf train %.4f, r3 train %.4f, r3 valid (noise 0.1) %.4f", pmf_train, r3_train, r3_valid)};
}

Outcome regularizer_effect() {
    std::vector<double> with, without;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        synth::PlantedOptions o;
        o.seed = seed;
        auto set = synth::planted_topics(o);
        TrainConfig cfg;
        cfg.k = 8;
        cfg.max_len = o.review_len;
        cfg.lr = 1e-2;
        cfg.lambda = 1e-4;
        cfg.rating_batch = 32;
        cfg.review_batch = 32;
        cfg.max_epochs = 200;
        cfg.patience = 10;
        cfg.seed = seed;
        with.push_back(train(set.splits, set.reviews, set.words, cfg).best_valid_rmse);
        cfg.use_reviews = false;
        without.push_back(train(set.splits, {}, set.words, cfg).best_valid_rmse);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double a = median(with), b = median(without);
    std::ostringstream per;
    for (std::size_t i = 0; i < with.size(); ++i) per << (i ? ", " : "") << fmt("%.3f/%.3f", with[i], without[i]);
    return {a <= b, fmt("median valid rmse with reviews %.4f, without %.4f (per seed %s)", a, b, per.str().c_str())};
}

Outcome serving_isolation() {
    ScalingOptions s;
    s.k_values = {8};
    s.review_lens = {32, 128, 512};
    s.rating = BenchOptions{1024, 50, 5, 0};
    s.text = BenchOptions{64, 5, 1, 0};
    s.rounds = 60;
    reset_primitive_calls();
    const auto reports = bench_scaling(s);
    std::map<std::size_t, double> serve, text;
    std::uint64_t serve_calls = 0;
    for (const auto& r : reports) {
        if (r.kind == "r3") {
            serve[*r.review_len] = r.p50_us;
            serve_calls += r.text_primitive_calls;
        } else {
            text[*r.review_len] = r.mean_us;
        }
    }
    double lo = INFINITY, hi = 0.0;
    for (auto& [len, v] : serve) lo = std::min(lo, v), hi = std::max(hi, v);
    const double serve_ratio = hi / lo;
    const double text_ratio = text.at(512) / text.at(32);
    return {serve_calls == 0 && serve_ratio < 1.5 && text_ratio > 4.0,
            fmt("serving text calls %llu, serving p50 %.4f/%.4f/%.4f us (spread %.3fx), regularizer 512/32 %.1fx",
                static_cast<unsigned long long>(serve_calls), serve.at(32), serve.at(128), serve.at(512), serve_ratio,
                text_ratio)};
}

Outcome pipeline_invariants() {
    auto raw = testutil::toy_corpus(500, 3);
    PipelineOptions o;
    o.seed = 5;
    auto s = build_splits(raw, o);
    std::vector<std::string> problems;

    std::vector<const RatingTriple*> all;
    for (auto* part : {&s.train, &s.validation, &s.test})
        for (const auto& t : *part) all.push_back(&t);
    std::vector<std::size_t> udeg(s.num_users()), ideg(s.num_items());
    for (auto* t : all) ++udeg[t->user], ++ideg[t->item];
    const auto min_u = *std::min_element(udeg.begin(), udeg.end());
    const auto min_i = *std::min_element(ideg.begin(), ideg.end());
    if (min_u < 5 || min_i < 5) problems.push_back("k-core degree below 5");

    // Test holds the user's latest triple; no user has two test triples.
    std::vector<std::int64_t> latest(s.num_users(), INT64_MIN);
    for (auto* t : all) latest[t->user] = std::max(latest[t->user], t->timestamp);
    std::set<std::uint32_t> test_users;
    for (const auto& t : s.test) {
        if (t.timestamp != latest[t.user]) problems.push_back("test triple is not the user's latest");
        if (!test_users.insert(t.user).second) problems.push_back("user with two test triples");
    }
    if (test_users.size() + s.manifest.cold_item_guard_hits < s.num_users()) {
        // users missing from test must be explained by the cold-item guard
        std::size_t missing = s.num_users() - test_users.size();
        if (missing > s.manifest.cold_item_guard_hits) problems.push_back("users missing from test");
    }

    auto key = [](const RatingTriple& t) { return std::tuple(t.user, t.item, t.timestamp, t.rating); };
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::int64_t, double>> seen;
    std::size_t dup = 0;
    for (auto* t : all) dup += !seen.insert(key(*t)).second;
    if (dup) problems.push_back("splits overlap");

    testutil::TempDir dir;
    auto again = build_splits(raw, o);
    persist_splits(s, dir.path() / "a");
    persist_splits(again, dir.path() / "b");
    for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "users.tsv", "items.tsv", "manifest.json"}) {
        if (testutil::read_file(dir.path() / "a" / f) != testutil::read_file(dir.path() / "b" / f))
            problems.push_back(std::string("re-run differs in ") + f);
    }

    const auto st = s.stats();
    const double hand = static_cast<double>(all.size()) / (static_cast<double>(s.num_users()) * s.num_items());
    if (st.sparsity != hand || st.ratings != all.size()) problems.push_back("sparsity mismatch");

    std::string detail = fmt("%zu users, %zu items, %zu ratings, min degree %zu/%zu, sparsity %.4f", st.users,
                             st.items, st.ratings, min_u, min_i, st.sparsity);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

Outcome attention_invariants() {
    const std::size_t vocab = 40;
    double worst_sum = 0.0;
    std::size_t pad_nonzero = 0, rec_changed = 0;
    Rng rng(77);
    for (int n = 0; n < 1000; ++n) {
        RegularizerConfig c;
        c.k = 2 + uniform_index(rng, 7);
        c.word_dim = 2 + uniform_index(rng, 9);
        c.window = 1 + 2 * uniform_index(rng, 3);
        c.conv_relu = uniform_index(rng, 2) == 0;
        c.scale_logits = uniform_index(rng, 2) == 0;
        auto reg = ReviewRegularizer::initialize(c, rng);
        Tensor words(Shape{vocab, c.word_dim});
        for (std::size_t i = c.word_dim; i < words.size(); ++i) words.data()[i] = standard_normal(rng);
        Tensor items(Shape{3, c.k});
        for (auto& x : items.data()) x = standard_normal(rng);

        const std::size_t len = c.window + uniform_index(rng, 64);
        ReviewEntry e;
        e.item = static_cast<std::uint32_t>(uniform_index(rng, 3));
        e.rating = 3.0;
        for (std::size_t p = 0; p < len; ++p) {
            const bool real = uniform_index(rng, 3) != 0 || p == 0;
            e.tokens.push_back(real ? static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1)) : 0);
            e.mask.push_back(real);
        }
        const Tensor s = reg.attention_scores(items, words, e);
        double total = 0.0;
        for (std::size_t p = 0; p < len; ++p) {
            if (e.mask[p]) total += s[p];
            else if (s[p] != 0.0) ++pad_nonzero;
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));

        auto mutated = e;
        for (std::size_t p = 0; p < len; ++p)
            if (!e.mask[p]) mutated.tokens[p] = static_cast<std::uint32_t>(1 + uniform_index(rng, vocab - 1));
        if (!same_bits(reg.rec_r(items, words, mutated), reg.rec_r(items, words, e))) ++rec_changed;
    }
    return {worst_sum <= 1e-12 && pad_nonzero == 0 && rec_changed == 0,
            fmt("max |sum-1| %.2e, nonzero padded scores %zu, rec_R changed %zu of 1000", worst_sum, pad_nonzero,
                rec_changed)};
}

Outcome checkpoint_round_trip() {
    synth::PlantedOptions o;
    o.users = 60;
    o.items = 30;
    o.seed = 9;
    auto set = synth::planted_topics(o);
    TrainConfig cfg;
    cfg.k = 4;
    cfg.max_len = o.review_len;
    cfg.max_epochs = 5;
    cfg.lr = 5e-3;
    cfg.rating_batch = 32;
    cfg.review_batch = 32;
    auto r = train(set.splits, set.reviews, set.words, cfg);

    testutil::TempDir dir;
    const auto path = dir.path() / "r3.ckpt";
    save_checkpoint(r3_checkpoint(r.model, r.optimizer, cfg, r.best_epoch, r.best_valid_rmse), path);
    auto back = restore_r3(load_checkpoint(path));
    R3Predictor before(r.model.rating, r.model.seen), after(back.model.rating, back.model.seen);
    auto a = evaluate(before, set.splits.validation, "validation");
    auto b = evaluate(after, set.splits.validation, "validation");
    std::size_t differ = a.predictions.size() == b.predictions.size() ? 0 : 1;
    for (std::size_t i = 0; !differ && i < a.predictions.size(); ++i)
        differ += !same_bits(a.predictions[i], b.predictions[i]);
    return {differ == 0 && same_bits(a.rmse, b.rmse) && same_bits(a.rmse, r.best_valid_rmse),
            fmt("validation rmse %.17g before, %.17g after, %zu predictions differ", a.rmse, b.rmse, differ)};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness", gradient_correctness},
    {2, "uncertainty reduction identity", reduction_identity},
    {3, "stats oracle equivalence", oracle_equivalence},
    {4, "recoverability", recoverability},
    {5, "regularizer effect", regularizer_effect},
    {6, "serving-path isolation", serving_isolation},
    {7, "pipeline invariants", pipeline_invariants},
    {8, "attention invariants", attention_invariants},
    {9, "checkpoint round trip", checkpoint_round_trip},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    set_warning_sink([](std::string_view) {});
    int failed = 0;
    for (const auto& c : kCriteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("AC%d %-32s %s  (%.1f s) %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", seconds_since(t0),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
