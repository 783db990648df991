#include "r3/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "r3/errors.hpp"
#include "r3/evalbench.hpp"
#include "r3/log.hpp"
#include "r3/random.hpp"
#include "parse_util.hpp"

namespace r3 {

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (k == 0) fail("k must be positive");
    if (window == 0 || window % 2 == 0) fail("window must be odd");
    if (max_len < 3) fail("max_len must be at least 3");
    if (window > max_len) fail("window larger than max_len");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be positive");
    if (rating_batch == 0 || review_batch == 0) fail("batch sizes must be positive");
    if (max_epochs == 0) fail("max_epochs must be positive");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(17);
        os << x;
        return os.str();
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    return {{"k", std::to_string(k)},
            {"max_len", std::to_string(max_len)},
            {"window", std::to_string(window)},
            {"attention_dim", std::to_string(attention_dim)},
            {"lambda", num(lambda)},
            {"lr", num(lr)},
            {"beta1", num(beta1)},
            {"beta2", num(beta2)},
            {"eps", num(eps)},
            {"rating_batch", std::to_string(rating_batch)},
            {"review_batch", std::to_string(review_batch)},
            {"max_epochs", std::to_string(max_epochs)},
            {"patience", std::to_string(patience)},
            {"seed", std::to_string(seed)},
            {"scale_logits", flag(scale_logits)},
            {"conv_relu", flag(conv_relu)},
            {"use_reviews", flag(use_reviews)},
            {"learn_uncertainty", flag(learn_uncertainty)}};
}

R3Model R3Model::initialize(std::size_t num_users, std::size_t num_items, Tensor word_embeddings,
                            const TrainConfig& config, double mean_rating) {
    config.validate();
    if (word_embeddings.rank() != 2) throw ShapeError("word embeddings must be a matrix");
    Rng rng(config.seed);
    R3Model m;
    m.rating = RatingModel::initialize(num_users, num_items, config.k, mean_rating, rng);
    RegularizerConfig rc;
    rc.k = config.k;
    rc.word_dim = word_embeddings.dim(1);
    rc.window = config.window;
    rc.attention_dim = config.attention_dim;
    rc.scale_logits = config.scale_logits;
    rc.conv_relu = config.conv_relu;
    m.regularizer = ReviewRegularizer::initialize(rc, rng);
    m.word_embeddings = Parameter("words.embeddings", std::move(word_embeddings), false);
    m.uncertainty.rating = Parameter("uncertainty.s_rating", Tensor::scalar(0.0), config.learn_uncertainty);
    m.uncertainty.review = Parameter("uncertainty.s_review", Tensor::scalar(0.0), config.learn_uncertainty);
    m.seen.users.assign(num_users, 0);
    m.seen.items.assign(num_items, 0);
    return m;
}

std::vector<Parameter*> R3Model::optimized() {
    auto& r = rating.params();
    auto& g = regularizer.params();
    return {&r.users,  &r.items,    &r.weights, &r.bias,  &g.conv_filters,      &g.conv_bias,
            &g.query,  &g.key,      &g.value,   &uncertainty.rating, &uncertainty.review};
}

std::vector<Parameter*> R3Model::l2_terms(bool with_regularizer) {
    auto& r = rating.params();
    auto& g = regularizer.params();
    std::vector<Parameter*> out{&r.users, &r.items, &r.weights, &r.bias};
    if (with_regularizer) out.insert(out.end(), {&g.conv_filters, &g.conv_bias, &g.query, &g.key, &g.value});
    return out;
}

std::vector<Parameter*> R3Model::all_parameters() {
    auto out = optimized();
    out.push_back(&word_embeddings);
    return out;
}

void R3Model::zero_grads() {
    // Word vectors are frozen and never receive gradient.
    for (auto* p : optimized()) p->zero_grad();
}

SeenIds seen_ids(std::span<const RatingTriple> train, std::size_t num_users, std::size_t num_items) {
    SeenIds s;
    s.users.assign(num_users, 0);
    s.items.assign(num_items, 0);
    for (const auto& t : train) {
        if (t.user >= num_users || t.item >= num_items) throw LookupError("seen_ids: triple id out of range");
        s.users[t.user] = 1;
        s.items[t.item] = 1;
    }
    return s;
}

namespace {

Var mean_squared_error(Tape& tape, std::span<const Var> preds, std::vector<double> targets) {
    Var p = tape.concat(preds);
    const std::size_t n = targets.size();
    Var t = tape.constant(Tensor(Shape{n}, std::move(targets)));
    return tape.mean(tape.square(tape.sub(p, t)));
}

}  // namespace

Var loss_rating(Tape& tape, const RatingModel::Vars& vars, std::span<const RatingTriple> batch) {
    if (batch.empty()) throw ContractError("loss_rating: empty batch");
    std::vector<Var> preds;
    std::vector<double> targets;
    preds.reserve(batch.size());
    targets.reserve(batch.size());
    for (const auto& t : batch) {
        preds.push_back(RatingModel::rec(tape, vars, t.user, t.item));
        targets.push_back(t.rating);
    }
    return mean_squared_error(tape, preds, std::move(targets));
}

Var loss_review(Tape& tape, const ReviewRegularizer& reg, const ReviewRegularizer::Vars& vars, Var item_table,
                Var embeddings, std::span<const ReviewEntry> batch) {
    if (batch.empty()) throw ContractError("loss_review: empty batch");
    std::vector<Var> preds;
    std::vector<double> targets;
    preds.reserve(batch.size());
    targets.reserve(batch.size());
    for (const auto& e : batch) {
        preds.push_back(reg.rec_r(tape, vars, item_table, embeddings, e));
        targets.push_back(e.rating);
    }
    return mean_squared_error(tape, preds, std::move(targets));
}

Var combined_loss(Tape& tape, Var rating_loss, std::optional<Var> review_loss, Var s_rating, Var s_review,
                  std::span<const Var> l2_terms, double lambda) {
    Var total = tape.mul(tape.exp(tape.scale(s_rating, -1.0)), rating_loss);
    if (review_loss) {
        total = tape.add(total, tape.mul(tape.exp(tape.scale(s_review, -1.0)), *review_loss));
        total = tape.add(total, tape.scale(tape.add(s_rating, s_review), 0.5));
    } else {
        total = tape.add(total, tape.scale(s_rating, 0.5));
    }
    if (lambda != 0.0 && !l2_terms.empty()) {
        Var l2 = tape.sum(tape.square(l2_terms[0]));
        for (std::size_t i = 1; i < l2_terms.size(); ++i) l2 = tape.add(l2, tape.sum(tape.square(l2_terms[i])));
        total = tape.add(total, tape.scale(l2, lambda));
    }
    return total;
}

JointLoss r3_loss(Tape& tape, R3Model& model, std::span<const RatingTriple> ratings,
                  std::span<const ReviewEntry> reviews, double lambda) {
    auto rv = model.rating.bind(tape);
    std::vector<Var> l2{rv.users, rv.items, rv.weights, rv.bias};
    JointLoss out;
    out.rating = loss_rating(tape, rv, ratings);
    if (!reviews.empty()) {
        auto gv = model.regularizer.bind(tape);
        Var words = tape.param(model.word_embeddings);
        out.review = loss_review(tape, model.regularizer, gv, rv.items, words, reviews);
        l2.insert(l2.end(), {gv.conv_filters, gv.conv_bias, gv.query, gv.key, gv.value});
    }
    Var s_a = tape.param(model.uncertainty.rating);
    Var s_b = tape.param(model.uncertainty.review);
    out.total = combined_loss(tape, out.rating, out.review, s_a, s_b, l2, lambda);
    return out;
}

Adam::Adam(AdamConfig config, std::span<Parameter* const> params) : config_(config) {
    for (const auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step(std::span<Parameter* const> params) {
    if (params.size() != m_.size()) {
        throw ContractError("adam: " + std::to_string(params.size()) + " parameters, state has " +
                            std::to_string(m_.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->grad.shape() != m_[i].shape()) {
            throw ContractError("adam: shape of " + params[i]->name + " is " + shape_str(params[i]->grad.shape()) +
                                ", state has " + shape_str(m_[i].shape()));
        }
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (!p.trainable) continue;
        auto theta = p.value.data();
        auto g = p.grad.values();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            theta[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

void Adam::restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ContractError("adam: restored state size mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape()) {
            throw ContractError("adam: restored moment shape mismatch at index " + std::to_string(i));
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

bool EarlyStopper::observe(std::size_t epoch, double metric) {
    if (best_epoch_ == 0 || metric < best_) {
        best_ = metric;
        best_epoch_ = epoch;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

namespace {

double mean_rating(std::span<const RatingTriple> triples) {
    double s = 0.0;
    for (const auto& t : triples) s += t.rating;
    return s / static_cast<double>(triples.size());
}

// Decorrelates the three generator streams drawn from one user seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

namespace {

TrainResult run_training(const DatasetSplits& splits, const std::vector<ReviewEntry>& reviews, R3Model model,
                         Adam adam, const TrainConfig& config, std::size_t first_epoch,
                         std::optional<double> prior_best) {
    const bool with_reviews = config.use_reviews && !reviews.empty();
    if (config.use_reviews && reviews.empty()) warn("train: review set is empty, training the rating branch only");
    if (splits.validation.empty()) warn("train: validation split is empty, early stopping on training RMSE");

    auto params = model.optimized();
    std::vector<std::size_t> order(splits.train.size());
    std::vector<RatingTriple> rating_batch;
    std::vector<ReviewEntry> review_batch;

    TrainResult result;
    EarlyStopper stopper(config.patience);
    std::vector<Tensor> best_values;
    if (prior_best) {
        stopper.observe(first_epoch - 1, *prior_best);
        for (const auto* p : params) best_values.push_back(p->value);
        result.optimizer = adam;
    }
    R3Predictor predictor(model.rating, model.seen);

    for (std::size_t epoch = first_epoch; epoch <= config.max_epochs; ++epoch) {
        Rng order_rng(stream_seed(config.seed, 2 * epoch));
        Rng review_rng(stream_seed(config.seed, 2 * epoch + 1));
        std::iota(order.begin(), order.end(), 0);
        shuffle(std::span<std::size_t>(order), order_rng);
        EpochLog log;
        log.epoch = epoch;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.rating_batch) {
            const std::size_t end = std::min(order.size(), start + config.rating_batch);
            rating_batch.clear();
            for (std::size_t i = start; i < end; ++i) rating_batch.push_back(splits.train[order[i]]);
            review_batch.clear();
            if (with_reviews) {
                for (std::size_t i = 0; i < config.review_batch; ++i) {
                    review_batch.push_back(reviews[uniform_index(review_rng, reviews.size())]);
                }
            }
            model.zero_grads();
            Tape tape;
            JointLoss loss = r3_loss(tape, model, rating_batch, review_batch, config.lambda);
            tape.backward(loss.total);
            adam.step(params);
            log.rating_loss += tape.value(loss.rating).item();
            if (loss.review) log.review_loss += tape.value(*loss.review).item();
            ++steps;
        }
        log.rating_loss /= static_cast<double>(steps);
        log.review_loss /= static_cast<double>(steps);
        log.rating_weight = std::exp(-model.uncertainty.rating.value.item());
        log.review_weight = std::exp(-model.uncertainty.review.value.item());
        log.train_rmse = evaluate(predictor, splits.train, "train").rmse;

        bool scored_validation = false;
        if (!splits.validation.empty()) {
            try {
                log.valid_rmse = evaluate(predictor, splits.validation, "validation").rmse;
                scored_validation = true;
            } catch (const ContractError&) {
                if (epoch == first_epoch) warn("train: every validation triple is cold, early stopping on training RMSE");
            }
        }
        if (!scored_validation) log.valid_rmse = log.train_rmse;

        log.best = stopper.observe(epoch, log.valid_rmse);
        if (log.best) {
            best_values.clear();
            for (const auto* p : params) best_values.push_back(p->value);
            result.optimizer = adam;
        }
        result.log.push_back(log);
        result.epochs_run = epoch;
        if (stopper.should_stop()) break;
    }

    if (!best_values.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    } else {
        result.optimizer = adam;  // nothing ran (resume past max_epochs)
    }
    model.zero_grads();
    result.best_epoch = stopper.best_epoch();
    result.best_valid_rmse = stopper.best();
    result.model = std::move(model);
    return result;
}

}  // namespace

TrainResult train(const DatasetSplits& splits, const std::vector<ReviewEntry>& reviews, Tensor word_embeddings,
                  const TrainConfig& config) {
    config.validate();
    if (splits.train.empty()) throw ContractError("train: empty training split");
    R3Model model = R3Model::initialize(splits.num_users(), splits.num_items(), std::move(word_embeddings), config,
                                        mean_rating(splits.train));
    model.seen = seen_ids(splits.train, splits.num_users(), splits.num_items());
    auto params = model.optimized();
    Adam adam(AdamConfig{config.lr, config.beta1, config.beta2, config.eps}, params);
    return run_training(splits, reviews, std::move(model), std::move(adam), config, 1, std::nullopt);
}

TrainResult resume_training(const DatasetSplits& splits, const std::vector<ReviewEntry>& reviews, R3Model model,
                            Adam optimizer, const TrainConfig& config, std::size_t epoch, double best_valid_rmse) {
    config.validate();
    if (splits.train.empty()) throw ContractError("train: empty training split");
    if (model.rating.num_users() != splits.num_users() || model.rating.num_items() != splits.num_items()) {
        throw ContractError("resume: checkpoint tables do not match the splits' id universe");
    }
    TrainResult r = run_training(splits, reviews, std::move(model), std::move(optimizer), config, epoch + 1,
                                 best_valid_rmse);
    if (r.epochs_run == 0) r.epochs_run = epoch;
    return r;
}

GradCheckInstance make_gradcheck_instance(const GradCheckShape& s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor words(Shape{s.vocab, s.word_dim});
    for (std::size_t i = s.word_dim; i < words.size(); ++i) words.data()[i] = standard_normal(rng);
    TrainConfig cfg;
    cfg.k = s.k;
    cfg.max_len = s.review_len;
    cfg.seed = seed;
    GradCheckInstance g;
    g.model = R3Model::initialize(s.users, s.items, std::move(words), cfg, 3.0);
    g.model.uncertainty.rating.value = Tensor::scalar(0.3);
    g.model.uncertainty.review.value = Tensor::scalar(-0.2);
    // Nonzero conv biases keep most pre-activations clear of the ReLU kink.
    for (auto& b : g.model.regularizer.params().conv_bias.value.data()) b = 0.1 + 0.2 * uniform_unit(rng);
    for (std::size_t i = 0; i < s.ratings; ++i) {
        RatingTriple t;
        t.user = static_cast<std::uint32_t>(uniform_index(rng, s.users));
        t.item = static_cast<std::uint32_t>(uniform_index(rng, s.items));
        t.rating = 1.0 + static_cast<double>(uniform_index(rng, 5));
        g.ratings.push_back(t);
    }
    for (std::size_t i = 0; i < s.reviews; ++i) {
        ReviewEntry e;
        e.item = static_cast<std::uint32_t>(uniform_index(rng, s.items));
        e.rating = 1.0 + static_cast<double>(uniform_index(rng, 5));
        const std::size_t n = 3 + uniform_index(rng, s.review_len - 2);
        e.tokens.assign(s.review_len, Vocab::kPad);
        e.mask.assign(s.review_len, 0);
        for (std::size_t t = 0; t < n; ++t) {
            e.tokens[t] = static_cast<std::uint32_t>(1 + uniform_index(rng, s.vocab - 1));
            e.mask[t] = 1;
        }
        g.reviews.push_back(std::move(e));
    }
    return g;
}

GradCheckReport check_r3_gradients(GradCheckInstance& g, const GradCheckOptions& options) {
    auto loss = [&](Tape& tape) { return r3_loss(tape, g.model, g.ratings, g.reviews, g.lambda).total; };
    std::vector<Parameter*> params;
    for (auto* p : g.model.optimized())
        if (p->trainable) params.push_back(p);
    return finite_diff_check(loss, params, options);
}

}  // namespace r3

namespace r3 {

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& m) {
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        auto it = m.find(key);
        if (it == m.end()) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, bool>) {
            field = detail::parse_bool(key, it->second);
        } else if constexpr (std::is_same_v<T, double>) {
            field = detail::parse_double(key, it->second);
        } else {
            field = static_cast<T>(detail::parse_size(key, it->second));
        }
    };
    get("k", c.k);
    get("max_len", c.max_len);
    get("window", c.window);
    get("attention_dim", c.attention_dim);
    get("lambda", c.lambda);
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("rating_batch", c.rating_batch);
    get("review_batch", c.review_batch);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("seed", c.seed);
    get("scale_logits", c.scale_logits);
    get("conv_relu", c.conv_relu);
    get("use_reviews", c.use_reviews);
    get("learn_uncertainty", c.learn_uncertainty);
    return c;
}

Checkpoint r3_checkpoint(R3Model& model, const Adam& optimizer, const TrainConfig& config, std::uint64_t epoch,
                         double best_valid_rmse, const std::map<std::string, std::string>& extra_config) {
    Checkpoint c;
    c.kind = "r3";
    c.config = extra_config;
    for (const auto& [k, v] : config.to_map()) c.config[k] = v;
    c.epoch = epoch;
    c.best_valid_rmse = best_valid_rmse;
    c.optimizer_steps = optimizer.steps();
    for (auto* p : model.all_parameters()) c.add(p->name, p->value);
    c.add("seen.users", detail::mask_tensor(model.seen.users));
    c.add("seen.items", detail::mask_tensor(model.seen.items));
    auto params = model.optimized();
    for (std::size_t i = 0; i < params.size() && i < optimizer.first_moments().size(); ++i) {
        c.add("adam.m/" + params[i]->name, optimizer.first_moments()[i]);
        c.add("adam.v/" + params[i]->name, optimizer.second_moments()[i]);
    }
    return c;
}

RestoredR3 restore_r3(const Checkpoint& c) {
    if (c.kind != "r3") throw CorruptionError("checkpoint holds a '" + c.kind + "' model, not r3");
    RestoredR3 out;
    out.config = TrainConfig::from_map(c.config);
    try {
        const Tensor& words = c.tensor("words.embeddings");
        const Tensor& users = c.tensor("rating.users");
        const Tensor& items = c.tensor("rating.items");
        out.model = R3Model::initialize(users.dim(0), items.dim(0), words, out.config, 0.0);
        for (auto* p : out.model.all_parameters()) {
            const Tensor& t = c.tensor(p->name);
            if (t.shape() != p->value.shape()) {
                throw CorruptionError("checkpoint: tensor '" + p->name + "' has shape " + shape_str(t.shape()) +
                                      ", model expects " + shape_str(p->value.shape()));
            }
            p->value = t;
        }
        out.model.seen.users = detail::tensor_mask(c.tensor("seen.users"));
        out.model.seen.items = detail::tensor_mask(c.tensor("seen.items"));
        if (out.model.seen.users.size() != users.dim(0) || out.model.seen.items.size() != items.dim(0)) {
            throw CorruptionError("checkpoint: seen-id masks do not match the embedding tables");
        }
        auto params = out.model.optimized();
        AdamConfig ac{out.config.lr, out.config.beta1, out.config.beta2, out.config.eps};
        out.optimizer = Adam(ac, params);
        if (c.has("adam.m/" + params[0]->name)) {
            std::vector<Tensor> m, v;
            for (auto* p : params) {
                m.push_back(c.tensor("adam.m/" + p->name));
                v.push_back(c.tensor("adam.v/" + p->name));
            }
            out.optimizer.restore(c.optimizer_steps, std::move(m), std::move(v));
        }
    } catch (const LookupError& e) {
        throw CorruptionError(std::string("checkpoint incomplete: ") + e.what());
    } catch (const ShapeError& e) {
        throw CorruptionError(std::string("checkpoint inconsistent: ") + e.what());
    } catch (const ContractError& e) {
        throw CorruptionError(std::string("checkpoint inconsistent: ") + e.what());
    }
    return out;
}

}  // namespace r3
