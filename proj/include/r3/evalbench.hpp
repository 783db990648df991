#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "r3/data_ingest.hpp"
#include "r3/predictor.hpp"
#include "r3/review_regularizer.hpp"

namespace r3 {

/// sqrt(mean((p - t)^2)); ContractError on empty or mismatched input.
double rmse(std::span<const double> predictions, std::span<const double> targets);

struct EvalReport {
    std::string split;
    double rmse = 0.0;
    std::size_t scored = 0;
    std::size_t skipped = 0;
    std::size_t cold_users = 0;
    std::size_t cold_items = 0;
    std::vector<double> predictions;  // for the scored triples, in split order

    std::string to_json() const;
};

/// Scores every non-cold triple; cold ones are tallied. Nothing left to score
/// is a ContractError naming the split and why.
EvalReport evaluate(const Predictor& model, std::span<const RatingTriple> split, std::string name);

struct BenchOptions {
    std::size_t batch_size = 1024;
    std::size_t batches = 100;
    std::size_t warmup = 10;
    std::uint64_t seed = 0;
};

struct LatencyReport {
    std::string kind;
    std::size_t k = 0;
    std::optional<std::size_t> review_len;  // review length the model was built for, if any
    std::size_t batch_size = 0;
    std::size_t batches = 0;
    unsigned threads = 1;
    double mean_us = 0.0;  // per entry
    double p50_us = 0.0;
    double p99_us = 0.0;
    double assembly_us = 0.0;  // per entry, untimed batch generation measured separately
    double entries_per_second = 0.0;
    std::uint64_t text_primitive_calls = 0;  // conv + softmax calls during the timed loop

    std::string to_json() const;
};

/// Times predict_batch over pregenerated random ID pairs.
LatencyReport bench_latency(const Predictor& model, std::size_t num_users, std::size_t num_items, std::size_t k,
                            const BenchOptions& options);

/// Counterfactual: times the untaped regularizer forward on random reviews of length `review_len`.
LatencyReport bench_regularizer(const ReviewRegularizer& reg, const Tensor& item_table, const Tensor& embeddings,
                                std::size_t review_len, const BenchOptions& options);

struct ScalingOptions {
    std::vector<std::size_t> k_values{8};
    std::vector<std::size_t> review_lens{32, 128, 512};
    std::size_t num_users = 1000;
    std::size_t num_items = 1000;
    std::size_t word_dim = 50;
    std::size_t vocab = 1000;
    BenchOptions rating;
    BenchOptions text{64, 5, 1, 0};
    /// Serving runs are repeated round-robin over all (K, L) and the run with
    /// the lowest p50 is kept, so slow phases of a shared host hit every
    /// configuration alike.
    std::size_t rounds = 1;
};

/// For every (K, L): R3 serving latency and the regularizer-branch latency,
/// on randomly initialized models. Serving and regularizer reports alternate.
std::vector<LatencyReport> bench_scaling(const ScalingOptions& options);

/// Fixed-width table, one row per report.
std::string format_table(std::span<const LatencyReport> reports);

}  // namespace r3
