#include "r3/rating_model.hpp"

#include <cmath>
#include <string>
#include <thread>

#include "r3/errors.hpp"

namespace r3 {

namespace {
std::atomic<std::uint64_t> g_madds{0};
}

std::uint64_t RatingModel::multiply_adds() { return g_madds.load(std::memory_order_relaxed); }
void RatingModel::reset_multiply_adds() { g_madds.store(0, std::memory_order_relaxed); }

RatingModel::RatingModel(RatingParams params) : params_(std::move(params)) {
    const auto& u = params_.users.value;
    const auto& v = params_.items.value;
    if (u.rank() != 2 || v.rank() != 2 || u.dim(1) != v.dim(1)) {
        throw ShapeError("rating model: user table " + shape_str(u.shape()) + " and item table " +
                         shape_str(v.shape()) + " must be N x K with equal K");
    }
    const std::size_t k = u.dim(1);
    if (params_.weights.value.shape() != Shape{2 * k + k * k} || !params_.bias.value.is_scalar()) {
        throw ShapeError("rating model: regressor weights " + shape_str(params_.weights.value.shape()) +
                         " do not match K=" + std::to_string(k));
    }
}

RatingModel RatingModel::initialize(std::size_t num_users, std::size_t num_items, std::size_t k, double mean_rating,
                                    Rng& rng) {
    auto normal_table = [&](std::size_t rows) {
        Tensor t(Shape{rows, k});
        for (auto& x : t.data()) x = 0.1 * standard_normal(rng);
        return t;
    };
    RatingParams p;
    p.users = Parameter("rating.users", normal_table(num_users));
    p.items = Parameter("rating.items", normal_table(num_items));
    const std::size_t fan_in = 2 * k + k * k;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + 1));
    Tensor w(Shape{fan_in});
    for (auto& x : w.data()) x = limit * (2.0 * uniform_unit(rng) - 1.0);
    p.weights = Parameter("rating.weights", std::move(w));
    p.bias = Parameter("rating.bias", Tensor::scalar(mean_rating));
    return RatingModel(std::move(p));
}

std::span<const double> RatingModel::embed(const Tensor& table, std::size_t id) {
    if (id >= table.dim(0)) {
        throw LookupError("embedding id " + std::to_string(id) + " out of range for table with " +
                          std::to_string(table.dim(0)) + " rows");
    }
    return table.row(id);
}

double RatingModel::score(std::span<const double> u, std::span<const double> v) const {
    const std::size_t k = u.size();
    const double* w = params_.weights.value.data().data();
    // Same accumulation order as the taped dot(w, concat(u, v, outer)).
    double acc = 0.0;
    for (std::size_t a = 0; a < k; ++a) acc += w[a] * u[a];
    for (std::size_t b = 0; b < k; ++b) acc += w[k + b] * v[b];
    const double* wo = w + 2 * k;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) acc += wo[a * k + b] * (u[a] * v[b]);
    }
    return acc + params_.bias.value[0];
}

double RatingModel::rec(std::uint32_t user, std::uint32_t item) const {
    auto u = embed(params_.users.value, user);
    auto v = embed(params_.items.value, item);
    if (checked_mode()) {
        const std::uint64_t k = u.size();
        g_madds.fetch_add(2 * k + 2 * k * k, std::memory_order_relaxed);
    }
    return score(u, v);
}

void RatingModel::rec_batch(std::span<const UserItem> pairs, std::span<double> out, unsigned threads) const {
    if (out.size() != pairs.size()) throw ShapeError("rec_batch: output span size mismatch");
    const std::size_t nu = num_users(), ni = num_items();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].user >= nu || pairs[i].item >= ni) {
            throw LookupError("rec_batch: invalid id at batch index " + std::to_string(i) + " (user " +
                              std::to_string(pairs[i].user) + ", item " + std::to_string(pairs[i].item) + ")");
        }
    }
    const Tensor& users = params_.users.value;
    const Tensor& items = params_.items.value;
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) out[i] = score(users.row(pairs[i].user), items.row(pairs[i].item));
    };
    if (threads <= 1 || pairs.size() < 2 * threads) {
        run(0, pairs.size());
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (pairs.size() + threads - 1) / threads;
    for (std::size_t begin = 0; begin < pairs.size(); begin += chunk) {
        pool.emplace_back(run, begin, std::min(pairs.size(), begin + chunk));
    }
    for (auto& t : pool) t.join();
}

std::vector<double> RatingModel::rec_batch(std::span<const UserItem> pairs, unsigned threads) const {
    std::vector<double> out(pairs.size());
    rec_batch(pairs, out, threads);
    return out;
}

RatingModel::Vars RatingModel::bind(Tape& tape) {
    return Vars{tape.param(params_.users), tape.param(params_.items), tape.param(params_.weights),
                tape.param(params_.bias)};
}

Var RatingModel::rec(Tape& tape, const Vars& vars, std::uint32_t user, std::uint32_t item) {
    Var u = tape.gather_row(vars.users, user);
    Var v = tape.gather_row(vars.items, item);
    Var features = tape.concat({u, v, tape.outer_product(u, v)});
    return tape.add(tape.dot(vars.weights, features), vars.bias);
}

}  // namespace r3
