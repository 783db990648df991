#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "r3/checkpoint.hpp"
#include "r3/data_ingest.hpp"
#include "r3/gradcheck.hpp"
#include "r3/predictor.hpp"
#include "r3/rating_model.hpp"
#include "r3/review_regularizer.hpp"
#include "r3/tape.hpp"

namespace r3 {

struct TrainConfig {
    std::size_t k = 8;
    std::size_t max_len = 128;
    std::size_t window = 3;
    std::size_t attention_dim = 0;  // 0 means K
    double lambda = 1e-5;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t rating_batch = 256;
    std::size_t review_batch = 256;
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    bool scale_logits = true;
    bool conv_relu = true;
    bool use_reviews = true;
    /// false freezes s_a = s_b = 0, i.e. the plain sum L_D + L_R.
    bool learn_uncertainty = true;

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    /// Reads the keys to_map() writes; other keys are ignored. ConfigError on bad values.
    static TrainConfig from_map(const std::map<std::string, std::string>& m);
};

/// Log-variances s = log sigma^2 of the two tasks.
struct UncertaintyParams {
    Parameter rating;  // s_a
    Parameter review;  // s_b
};

/// Everything R3 learns plus the frozen word vectors it reads.
struct R3Model {
    RatingModel rating;
    ReviewRegularizer regularizer;
    Parameter word_embeddings;  // frozen
    UncertaintyParams uncertainty;
    SeenIds seen;

    static R3Model initialize(std::size_t num_users, std::size_t num_items, Tensor word_embeddings,
                              const TrainConfig& config, double mean_rating);

    /// Tensors the optimizer owns, in a fixed order (Adam state follows it).
    /// Frozen entries (s_a, s_b in fixed-weight mode) stay in the list and are skipped.
    std::vector<Parameter*> optimized();
    /// Tensors under the L2 penalty: all trainable except s_a, s_b.
    std::vector<Parameter*> l2_terms(bool with_regularizer = true);
    /// Every tensor, frozen ones included.
    std::vector<Parameter*> all_parameters();
    void zero_grads();
};

/// Serving view of a trained R3 model: rating branch only.
class R3Predictor final : public Predictor {
public:
    R3Predictor(const RatingModel& model, const SeenIds& seen, unsigned threads = 1)
        : model_(&model), seen_(&seen), threads_(threads) {}
    std::string_view kind() const override { return "r3"; }
    ColdReason cold(std::uint32_t user, std::uint32_t item) const override { return seen_->check(user, item); }
    void predict_batch(std::span<const UserItem> pairs, std::span<double> out) const override {
        model_->rec_batch(pairs, out, threads_);
    }

private:
    const RatingModel* model_;
    const SeenIds* seen_;
    unsigned threads_;
};

SeenIds seen_ids(std::span<const RatingTriple> train, std::size_t num_users, std::size_t num_items);

/// Mean squared error of rec over the batch (L_D).
Var loss_rating(Tape& tape, const RatingModel::Vars& vars, std::span<const RatingTriple> batch);

/// Mean squared error of rec_R over the batch (L_R).
Var loss_review(Tape& tape, const ReviewRegularizer& reg, const ReviewRegularizer::Vars& vars, Var item_table,
                Var embeddings, std::span<const ReviewEntry> batch);

/// exp(-s_a) L_D + exp(-s_b) L_R + (s_a + s_b) / 2 + lambda * sum ||theta||^2.
/// Without a review loss the s_b terms are dropped. lambda == 0 adds nothing.
Var combined_loss(Tape& tape, Var rating_loss, std::optional<Var> review_loss, Var s_rating, Var s_review,
                  std::span<const Var> l2_terms, double lambda);

struct JointLoss {
    Var total;
    Var rating;
    std::optional<Var> review;
};

/// Full R3 objective on one rating batch and one review batch. An empty
/// review batch drops the regularizer branch and its L2 terms.
JointLoss r3_loss(Tape& tape, R3Model& model, std::span<const RatingTriple> ratings,
                  std::span<const ReviewEntry> reviews, double lambda);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed, ordered parameter list.
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig config, std::span<Parameter* const> params);

    /// One update from the current grads; grads are left as they are.
    void step(std::span<Parameter* const> params);

    const AdamConfig& config() const { return config_; }
    std::uint64_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Stops once more than `patience` consecutive epochs fail to improve on the best.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Feed the metric of epoch `epoch` (1-based). Returns true if it is a new best.
    bool observe(std::size_t epoch, double metric);
    bool should_stop() const { return since_best_ > patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_ = 0.0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double rating_loss = 0.0;   // mean L_D over the epoch's steps
    double review_loss = 0.0;   // mean L_R (0 without reviews)
    double rating_weight = 1.0; // exp(-s_a) at epoch end
    double review_weight = 1.0; // exp(-s_b)
    double train_rmse = 0.0;
    double valid_rmse = 0.0;
    bool best = false;
};

struct TrainResult {
    R3Model model;  // parameters of the best epoch
    Adam optimizer; // optimizer state at the best epoch
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_valid_rmse = 0.0;
    std::size_t epochs_run = 0;
};

/// Joint training with early stopping on validation RMSE of the rating branch.
/// An empty review set degrades to rating-only training with a warning.
/// Batch order and review draws of epoch e depend only on (seed, e).
TrainResult train(const DatasetSplits& splits, const std::vector<ReviewEntry>& reviews, Tensor word_embeddings,
                  const TrainConfig& config);

/// Continues from a saved state with epochs `epoch + 1 .. config.max_epochs`;
/// `best_valid_rmse` seeds early stopping.
TrainResult resume_training(const DatasetSplits& splits, const std::vector<ReviewEntry>& reviews, R3Model model,
                            Adam optimizer, const TrainConfig& config, std::size_t epoch, double best_valid_rmse);

/// Packs parameters, word vectors, seen-id masks and optimizer moments.
/// `extra_config` (dataset fingerprints and the like) is merged into the config block.
Checkpoint r3_checkpoint(R3Model& model, const Adam& optimizer, const TrainConfig& config, std::uint64_t epoch,
                         double best_valid_rmse, const std::map<std::string, std::string>& extra_config = {});

struct RestoredR3 {
    R3Model model;
    Adam optimizer;
    TrainConfig config;
};

/// Inverse of r3_checkpoint. CorruptionError if the tensors do not fit together.
RestoredR3 restore_r3(const Checkpoint& checkpoint);

/// Small random R3 problem for whole-model gradient checks.
struct GradCheckInstance {
    R3Model model;
    std::vector<RatingTriple> ratings;
    std::vector<ReviewEntry> reviews;
    double lambda = 1e-3;
};

struct GradCheckShape {
    std::size_t users = 4;
    std::size_t items = 4;
    std::size_t k = 4;
    std::size_t review_len = 8;
    std::size_t word_dim = 6;
    std::size_t reviews = 8;
    std::size_t ratings = 8;
    std::size_t vocab = 20;
};

/// Random parameters (s_a, s_b away from 0), random ratings and reviews.
GradCheckInstance make_gradcheck_instance(const GradCheckShape& shape, std::uint64_t seed);

/// Finite-difference check of the full joint loss over every trainable tensor.
GradCheckReport check_r3_gradients(GradCheckInstance& instance, const GradCheckOptions& options);

}  // namespace r3
