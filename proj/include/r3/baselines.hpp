#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "r3/checkpoint.hpp"
#include "r3/data_ingest.hpp"
#include "r3/predictor.hpp"
#include "r3/training.hpp"

namespace r3 {

/// Global mean plus sequential per-user and per-item mean offsets.
struct StatsModel {
    double alpha = 0.0;
    std::vector<double> user_offset;
    std::vector<double> item_offset;

    /// alpha + beta_user + beta_item; ids without an offset contribute 0.
    double predict(std::uint32_t user, std::uint32_t item) const;
};

/// alpha = mean r; beta_user = mean(r - alpha) over the user's triples;
/// beta_item = mean(r - alpha - beta_user) over the item's triples.
/// Ids never seen keep offset 0.
StatsModel fit_stats(std::span<const RatingTriple> train, std::size_t num_users, std::size_t num_items);

class StatsPredictor final : public Predictor {
public:
    explicit StatsPredictor(const StatsModel& m) : m_(&m) {}
    std::string_view kind() const override { return "stats"; }
    ColdReason cold(std::uint32_t, std::uint32_t) const override { return ColdReason::None; }
    void predict_batch(std::span<const UserItem> pairs, std::span<double> out) const override;

private:
    const StatsModel* m_;
};

Checkpoint stats_checkpoint(const StatsModel& m, const std::map<std::string, std::string>& config = {});
StatsModel restore_stats(const Checkpoint& c);

struct PMFConfig {
    std::size_t k = 8;  // 0 leaves only the offsets
    double lambda = 1e-5;
    double lr = 1e-3;
    std::size_t batch = 256;
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    std::uint64_t seed = 0;

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    static PMFConfig from_map(const std::map<std::string, std::string>& m);
};

/// r_hat = alpha + beta_user + beta_item + u . v
struct PMFModel {
    Parameter alpha;        // scalar
    Parameter user_offset;  // num_users
    Parameter item_offset;  // num_items
    Parameter users;        // num_users x K, empty name when K = 0
    Parameter items;        // num_items x K
    std::size_t k = 0;
    SeenIds seen;

    static PMFModel initialize(std::size_t num_users, std::size_t num_items, std::size_t k, double mean_rating,
                               Rng& rng);
    std::vector<Parameter*> parameters();
    std::size_t num_users() const { return user_offset.value.size(); }
    std::size_t num_items() const { return item_offset.value.size(); }
    double predict(std::uint32_t user, std::uint32_t item) const;
};

class PMFPredictor final : public Predictor {
public:
    explicit PMFPredictor(const PMFModel& m) : m_(&m) {}
    std::string_view kind() const override { return "pmf"; }
    ColdReason cold(std::uint32_t user, std::uint32_t item) const override { return m_->seen.check(user, item); }
    void predict_batch(std::span<const UserItem> pairs, std::span<double> out) const override;

private:
    const PMFModel* m_;
};

/// Fills parameter grads of mean squared error over `batch` plus
/// lambda (||U||^2 + ||V||^2); returns the MSE part.
double pmf_gradients(PMFModel& m, std::span<const RatingTriple> batch, double lambda);

struct PMFTrainResult {
    PMFModel model;
    Adam optimizer;
    std::vector<EpochLog> log;  // rating_loss, train_rmse, valid_rmse are filled
    std::size_t best_epoch = 0;
    double best_valid_rmse = 0.0;
};

PMFTrainResult train_pmf(const DatasetSplits& splits, const PMFConfig& config);

Checkpoint pmf_checkpoint(PMFModel& m, const Adam& optimizer, const PMFConfig& config, std::uint64_t epoch,
                          double best_valid_rmse, const std::map<std::string, std::string>& extra_config = {});
struct RestoredPMF {
    PMFModel model;
    Adam optimizer;
    PMFConfig config;
};
RestoredPMF restore_pmf(const Checkpoint& c);

}  // namespace r3
