#include "r3/evalbench.hpp"

#include <optional>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "r3/errors.hpp"
#include "r3/kernels.hpp"
#include "r3/log.hpp"
#include "r3/text_pipeline.hpp"
#include "r3/training.hpp"

namespace r3 {

double rmse(std::span<const double> p, std::span<const double> t) {
    if (p.size() != t.size()) {
        throw ContractError("rmse: " + std::to_string(p.size()) + " predictions vs " + std::to_string(t.size()) +
                            " targets");
    }
    if (p.empty()) throw ContractError("rmse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = p[i] - t[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(p.size()));
}

std::string EvalReport::to_json() const {
    nlohmann::json j{{"split", split},   {"rmse", rmse},
                     {"scored", scored}, {"skipped", skipped},
                     {"skipped_reasons", {{"cold_user", cold_users}, {"cold_item", cold_items}}}};
    return j.dump();
}

EvalReport evaluate(const Predictor& model, std::span<const RatingTriple> split, std::string name) {
    EvalReport r;
    r.split = std::move(name);
    std::vector<UserItem> pairs;
    std::vector<double> targets;
    for (const auto& t : split) {
        switch (model.cold(t.user, t.item)) {
            case ColdReason::User: ++r.cold_users; continue;
            case ColdReason::Item: ++r.cold_items; continue;
            case ColdReason::None: break;
        }
        pairs.push_back({t.user, t.item});
        targets.push_back(t.rating);
    }
    r.scored = pairs.size();
    r.skipped = split.size() - pairs.size();
    if (pairs.empty()) {
        throw ContractError("evaluate: split '" + r.split + "' has nothing to score (" + std::to_string(split.size()) +
                            " triples, " + std::to_string(r.cold_users) + " cold users, " +
                            std::to_string(r.cold_items) + " cold items)");
    }
    r.predictions.resize(pairs.size());
    model.predict_batch(pairs, r.predictions);
    r.rmse = rmse(r.predictions, targets);
    return r;
}

std::string LatencyReport::to_json() const {
    nlohmann::json j{{"kind", kind},
                     {"k", k},
                     {"review_len", review_len ? nlohmann::json(*review_len) : nlohmann::json(nullptr)},
                     {"batch_size", batch_size},
                     {"batches", batches},
                     {"threads", threads},
                     {"mean_us", mean_us},
                     {"p50_us", p50_us},
                     {"p99_us", p99_us},
                     {"assembly_us", assembly_us},
                     {"entries_per_second", entries_per_second},
                     {"text_primitive_calls", text_primitive_calls}};
    return j.dump();
}

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::duration d) { return std::chrono::duration<double, std::micro>(d).count(); }

std::uint64_t text_calls() {
    return primitive_calls(OpKind::Conv1dSame) + primitive_calls(OpKind::MaskedSoftmax);
}

// Nearest-rank percentile of an unsorted sample.
double percentile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
    return xs[std::min(xs.size() - 1, rank == 0 ? 0 : rank - 1)];
}

void check_options(const BenchOptions& o) {
    if (o.batch_size == 0 || o.batches == 0) throw ConfigError("bench: batch size and batch count must be positive");
}

// Runs `body(batch_index)` for warmup + timed batches and fills the timing fields.
template <class Body>
void time_batches(LatencyReport& r, const BenchOptions& o, Body body) {
    for (std::size_t b = 0; b < o.warmup; ++b) body(b % o.batches);
    std::vector<double> per_entry;
    per_entry.reserve(o.batches);
    const std::uint64_t calls_before = text_calls();
    double total = 0.0;
    for (std::size_t b = 0; b < o.batches; ++b) {
        const auto start = Clock::now();
        body(b);
        const double us = micros(Clock::now() - start);
        total += us;
        per_entry.push_back(us / static_cast<double>(o.batch_size));
    }
    r.text_primitive_calls = text_calls() - calls_before;
    r.batch_size = o.batch_size;
    r.batches = o.batches;
    r.mean_us = total / static_cast<double>(o.batches * o.batch_size);
    r.p50_us = percentile(per_entry, 0.50);
    r.p99_us = percentile(per_entry, 0.99);
    r.entries_per_second = total > 0.0 ? 1e6 * static_cast<double>(o.batches * o.batch_size) / total : 0.0;
}

}  // namespace

LatencyReport bench_latency(const Predictor& model, std::size_t num_users, std::size_t num_items, std::size_t k,
                            const BenchOptions& o) {
    check_options(o);
    if (num_users == 0 || num_items == 0) throw ConfigError("bench: empty id universe");
    LatencyReport r;
    r.kind = std::string(model.kind());
    r.k = k;

    Rng rng(o.seed);
    const auto assembly_start = Clock::now();
    std::vector<std::vector<UserItem>> batches(o.batches, std::vector<UserItem>(o.batch_size));
    for (auto& batch : batches) {
        for (auto& p : batch) {
            p.user = static_cast<std::uint32_t>(uniform_index(rng, num_users));
            p.item = static_cast<std::uint32_t>(uniform_index(rng, num_items));
        }
    }
    r.assembly_us = micros(Clock::now() - assembly_start) / static_cast<double>(o.batches * o.batch_size);

    std::vector<double> out(o.batch_size);
    double sink = 0.0;
    time_batches(r, o, [&](std::size_t b) {
        model.predict_batch(batches[b], out);
        sink += out[0];
    });
    if (!std::isfinite(sink)) warn("bench: non-finite prediction encountered");
    return r;
}

LatencyReport bench_regularizer(const ReviewRegularizer& reg, const Tensor& item_table, const Tensor& embeddings,
                                std::size_t review_len, const BenchOptions& o) {
    check_options(o);
    if (embeddings.dim(0) < 2) throw ConfigError("bench: vocabulary needs at least one real word");
    LatencyReport r;
    r.kind = "regularizer";
    r.k = reg.config().k;
    r.review_len = review_len;

    Rng rng(o.seed);
    const auto assembly_start = Clock::now();
    std::vector<std::vector<ReviewEntry>> batches(o.batches, std::vector<ReviewEntry>(o.batch_size));
    for (auto& batch : batches) {
        for (auto& e : batch) {
            e.item = static_cast<std::uint32_t>(uniform_index(rng, item_table.dim(0)));
            e.tokens.resize(review_len);
            e.mask.assign(review_len, 1);
            for (auto& t : e.tokens) t = static_cast<std::uint32_t>(1 + uniform_index(rng, embeddings.dim(0) - 1));
        }
    }
    r.assembly_us = micros(Clock::now() - assembly_start) / static_cast<double>(o.batches * o.batch_size);

    double sink = 0.0;
    time_batches(r, o, [&](std::size_t b) {
        for (const auto& e : batches[b]) sink += reg.rec_r(item_table, embeddings, e);
    });
    if (!std::isfinite(sink)) warn("bench: non-finite regularizer output encountered");
    return r;
}

std::vector<LatencyReport> bench_scaling(const ScalingOptions& s) {
    if (s.rounds == 0) throw ConfigError("scaling benchmark needs at least one round");
    Vocab vocab;
    for (std::size_t i = 1; i < s.vocab; ++i) vocab.add("w" + std::to_string(i));
    const Tensor words = pseudo_embedding_matrix(vocab, s.word_dim, s.rating.seed);

    struct Config {
        std::size_t k, len;
        R3Model model;
        std::optional<LatencyReport> serve;
    };
    std::vector<Config> configs;
    for (std::size_t k : s.k_values) {
        for (std::size_t len : s.review_lens) {
            TrainConfig cfg;
            cfg.k = k;
            cfg.max_len = len;
            cfg.seed = s.rating.seed;
            R3Model model = R3Model::initialize(s.num_users, s.num_items, words, cfg, 3.0);
            model.seen.users.assign(s.num_users, 1);
            model.seen.items.assign(s.num_items, 1);
            configs.push_back({k, len, std::move(model), std::nullopt});
        }
    }
    for (std::size_t round = 0; round < s.rounds; ++round) {
        for (auto& c : configs) {
            R3Predictor predictor(c.model.rating, c.model.seen);
            LatencyReport r = bench_latency(predictor, s.num_users, s.num_items, c.k, s.rating);
            r.review_len = c.len;
            if (!c.serve || r.p50_us < c.serve->p50_us) c.serve = r;
        }
    }
    std::vector<LatencyReport> out;
    for (auto& c : configs) {
        out.push_back(*c.serve);
        out.push_back(bench_regularizer(c.model.regularizer, c.model.rating.params().items.value, words, c.len, s.text));
    }
    return out;
}

std::string format_table(std::span<const LatencyReport> reports) {
    std::ostringstream os;
    char line[200];
    std::snprintf(line, sizeof line, "%-12s %4s %6s %7s %8s %12s %12s %12s %10s\n", "kind", "K", "L", "batch",
                  "batches", "mean_us", "p50_us", "p99_us", "text_ops");
    os << line;
    for (const auto& r : reports) {
        const std::string len = r.review_len ? std::to_string(*r.review_len) : "-";
        std::snprintf(line, sizeof line, "%-12s %4zu %6s %7zu %8zu %12.4f %12.4f %12.4f %10llu\n", r.kind.c_str(),
                      r.k, len.c_str(), r.batch_size, r.batches, r.mean_us, r.p50_us, r.p99_us,
                      static_cast<unsigned long long>(r.text_primitive_calls));
        os << line;
    }
    return os.str();
}

}  // namespace r3
