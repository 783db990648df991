#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "r3/random.hpp"
#include "r3/tape.hpp"
#include "r3/tensor.hpp"

namespace r3 {

struct UserItem {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
};

/// Parameters of the serving scorer. The item table is the one the review
/// regularizer reads as well.
struct RatingParams {
    Parameter users;   // num_users x K
    Parameter items;   // num_items x K
    Parameter weights; // 2K + K^2
    Parameter bias;    // scalar
};

/// rec(i, j) = w . [u_i, v_j, flatten_rowmajor(u_i v_j^T)] + b
class RatingModel {
public:
    RatingModel() = default;
    RatingModel(RatingParams params);

    /// Embeddings ~ N(0, 0.1^2); weights ~ U(+-sqrt(6 / (fan_in + 1))); bias = `mean_rating`.
    static RatingModel initialize(std::size_t num_users, std::size_t num_items, std::size_t k, double mean_rating,
                                  Rng& rng);

    std::size_t k() const { return params_.users.value.dim(1); }
    std::size_t num_users() const { return params_.users.value.dim(0); }
    std::size_t num_items() const { return params_.items.value.dim(0); }
    RatingParams& params() { return params_; }
    const RatingParams& params() const { return params_; }

    /// Row `id` of a K-column table; LookupError when out of range.
    static std::span<const double> embed(const Tensor& table, std::size_t id);

    double rec(std::uint32_t user, std::uint32_t item) const;

    /// Elementwise rec over the batch, no tape. With threads > 1 the batch is
    /// sharded; results are identical to the single-threaded path.
    std::vector<double> rec_batch(std::span<const UserItem> pairs, unsigned threads = 1) const;
    void rec_batch(std::span<const UserItem> pairs, std::span<double> out, unsigned threads = 1) const;

    struct Vars {
        Var users, items, weights, bias;
    };
    Vars bind(Tape& tape);
    /// Taped rec; bitwise equal to the untaped one.
    static Var rec(Tape& tape, const Vars& vars, std::uint32_t user, std::uint32_t item);

    /// Multiply-adds performed by rec() since the last reset (checked mode only).
    static std::uint64_t multiply_adds();
    static void reset_multiply_adds();

private:
    double score(std::span<const double> u, std::span<const double> v) const;

    RatingParams params_;
};

}  // namespace r3
