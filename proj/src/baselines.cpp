#include "r3/baselines.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "r3/errors.hpp"
#include "r3/evalbench.hpp"
#include "r3/log.hpp"
#include "parse_util.hpp"

namespace r3 {

double StatsModel::predict(std::uint32_t user, std::uint32_t item) const {
    double p = alpha;
    if (user < user_offset.size()) p += user_offset[user];
    if (item < item_offset.size()) p += item_offset[item];
    return p;
}

StatsModel fit_stats(std::span<const RatingTriple> train, std::size_t num_users, std::size_t num_items) {
    if (train.empty()) throw ContractError("fit_stats: empty training split");
    StatsModel m;
    for (const auto& t : train) {
        if (t.user >= num_users || t.item >= num_items) throw LookupError("fit_stats: triple id out of range");
        m.alpha += t.rating;
    }
    m.alpha /= static_cast<double>(train.size());

    std::vector<double> sum(num_users, 0.0);
    std::vector<std::size_t> count(num_users, 0);
    for (const auto& t : train) {
        sum[t.user] += t.rating - m.alpha;
        ++count[t.user];
    }
    m.user_offset.assign(num_users, 0.0);
    for (std::size_t u = 0; u < num_users; ++u)
        if (count[u]) m.user_offset[u] = sum[u] / static_cast<double>(count[u]);

    sum.assign(num_items, 0.0);
    count.assign(num_items, 0);
    for (const auto& t : train) {
        sum[t.item] += t.rating - m.alpha - m.user_offset[t.user];
        ++count[t.item];
    }
    m.item_offset.assign(num_items, 0.0);
    for (std::size_t i = 0; i < num_items; ++i)
        if (count[i]) m.item_offset[i] = sum[i] / static_cast<double>(count[i]);
    return m;
}

void StatsPredictor::predict_batch(std::span<const UserItem> pairs, std::span<double> out) const {
    if (out.size() != pairs.size()) throw ShapeError("stats predict_batch: output span size mismatch");
    for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = m_->predict(pairs[i].user, pairs[i].item);
}

Checkpoint stats_checkpoint(const StatsModel& m, const std::map<std::string, std::string>& config) {
    Checkpoint c;
    c.kind = "stats";
    c.config = config;
    c.add("stats.alpha", Tensor::scalar(m.alpha));
    c.add("stats.user_offset", Tensor::vector(m.user_offset));
    c.add("stats.item_offset", Tensor::vector(m.item_offset));
    return c;
}

StatsModel restore_stats(const Checkpoint& c) {
    if (c.kind != "stats") throw CorruptionError("checkpoint holds a '" + c.kind + "' model, not stats");
    try {
        StatsModel m;
        m.alpha = c.tensor("stats.alpha").item();
        m.user_offset = c.tensor("stats.user_offset").values();
        m.item_offset = c.tensor("stats.item_offset").values();
        return m;
    } catch (const LookupError& e) {
        throw CorruptionError(std::string("checkpoint incomplete: ") + e.what());
    } catch (const ContractError& e) {
        throw CorruptionError(std::string("checkpoint inconsistent: ") + e.what());
    }
}

void PMFConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("pmf config: " + what); };
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (batch == 0) fail("batch must be positive");
    if (max_epochs == 0) fail("max_epochs must be positive");
}

std::map<std::string, std::string> PMFConfig::to_map() const {
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(17);
        os << x;
        return os.str();
    };
    return {{"k", std::to_string(k)},
            {"lambda", num(lambda)},
            {"lr", num(lr)},
            {"rating_batch", std::to_string(batch)},
            {"max_epochs", std::to_string(max_epochs)},
            {"patience", std::to_string(patience)},
            {"seed", std::to_string(seed)}};
}

PMFConfig PMFConfig::from_map(const std::map<std::string, std::string>& m) {
    PMFConfig c;
    auto find = [&](const char* key) -> const std::string* {
        auto it = m.find(key);
        return it == m.end() ? nullptr : &it->second;
    };
    if (auto* v = find("k")) c.k = detail::parse_size("k", *v);
    if (auto* v = find("lambda")) c.lambda = detail::parse_double("lambda", *v);
    if (auto* v = find("lr")) c.lr = detail::parse_double("lr", *v);
    if (auto* v = find("rating_batch")) c.batch = detail::parse_size("rating_batch", *v);
    if (auto* v = find("max_epochs")) c.max_epochs = detail::parse_size("max_epochs", *v);
    if (auto* v = find("patience")) c.patience = detail::parse_size("patience", *v);
    if (auto* v = find("seed")) c.seed = detail::parse_size("seed", *v);
    return c;
}

PMFModel PMFModel::initialize(std::size_t num_users, std::size_t num_items, std::size_t k, double mean_rating,
                              Rng& rng) {
    PMFModel m;
    m.k = k;
    m.alpha = Parameter("pmf.alpha", Tensor::scalar(mean_rating));
    m.user_offset = Parameter("pmf.user_offset", Tensor(Shape{num_users}));
    m.item_offset = Parameter("pmf.item_offset", Tensor(Shape{num_items}));
    if (k > 0) {
        auto normal_table = [&](std::size_t rows) {
            Tensor t(Shape{rows, k});
            for (auto& x : t.data()) x = 0.1 * standard_normal(rng);
            return t;
        };
        m.users = Parameter("pmf.users", normal_table(num_users));
        m.items = Parameter("pmf.items", normal_table(num_items));
    }
    m.seen.users.assign(num_users, 0);
    m.seen.items.assign(num_items, 0);
    return m;
}

std::vector<Parameter*> PMFModel::parameters() {
    std::vector<Parameter*> out{&alpha, &user_offset, &item_offset};
    if (k > 0) {
        out.push_back(&users);
        out.push_back(&items);
    }
    return out;
}

double PMFModel::predict(std::uint32_t user, std::uint32_t item) const {
    double p = alpha.value.item() + user_offset.value[user] + item_offset.value[item];
    if (k > 0) {
        auto u = users.value.row(user);
        auto v = items.value.row(item);
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) dot += u[c] * v[c];
        p += dot;
    }
    return p;
}

void PMFPredictor::predict_batch(std::span<const UserItem> pairs, std::span<double> out) const {
    if (out.size() != pairs.size()) throw ShapeError("pmf predict_batch: output span size mismatch");
    const std::size_t nu = m_->num_users(), ni = m_->num_items();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].user >= nu || pairs[i].item >= ni) {
            throw LookupError("pmf predict_batch: invalid id at batch index " + std::to_string(i));
        }
        out[i] = m_->predict(pairs[i].user, pairs[i].item);
    }
}

double pmf_gradients(PMFModel& m, std::span<const RatingTriple> batch, double lambda) {
    if (batch.empty()) throw ContractError("pmf: empty batch");
    for (auto* p : m.parameters()) p->zero_grad();
    const double scale = 2.0 / static_cast<double>(batch.size());
    double mse = 0.0;
    auto& g_alpha = m.alpha.grad.data()[0];
    auto g_bu = m.user_offset.grad.data();
    auto g_bi = m.item_offset.grad.data();
    for (const auto& t : batch) {
        if (t.user >= m.num_users() || t.item >= m.num_items()) throw LookupError("pmf: triple id out of range");
        const double e = m.predict(t.user, t.item) - t.rating;
        mse += e * e;
        const double d = scale * e;
        g_alpha += d;
        g_bu[t.user] += d;
        g_bi[t.item] += d;
        if (m.k > 0) {
            auto u = m.users.value.row(t.user);
            auto v = m.items.value.row(t.item);
            double* gu = m.users.grad.data().data() + t.user * m.k;
            double* gv = m.items.grad.data().data() + t.item * m.k;
            for (std::size_t c = 0; c < m.k; ++c) {
                gu[c] += d * v[c];
                gv[c] += d * u[c];
            }
        }
    }
    if (lambda != 0.0 && m.k > 0) {
        for (Parameter* p : {&m.users, &m.items}) {
            auto g = p->grad.data();
            auto x = p->value.values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * lambda * x[i];
        }
    }
    return mse / static_cast<double>(batch.size());
}

PMFTrainResult train_pmf(const DatasetSplits& splits, const PMFConfig& config) {
    config.validate();
    if (splits.train.empty()) throw ContractError("train_pmf: empty training split");
    double mean = 0.0;
    for (const auto& t : splits.train) mean += t.rating;
    mean /= static_cast<double>(splits.train.size());

    Rng init_rng(config.seed);
    Rng order_rng(config.seed ^ 0xA5A5A5A5DEADBEEFULL);
    PMFModel model = PMFModel::initialize(splits.num_users(), splits.num_items(), config.k, mean, init_rng);
    model.seen = seen_ids(splits.train, splits.num_users(), splits.num_items());
    if (splits.validation.empty()) warn("train_pmf: validation split is empty, early stopping on training RMSE");

    auto params = model.parameters();
    Adam adam(AdamConfig{config.lr}, params);
    PMFPredictor predictor(model);
    std::vector<std::size_t> order(splits.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<RatingTriple> batch;

    PMFTrainResult result;
    EarlyStopper stopper(config.patience);
    std::vector<Tensor> best_values;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), order_rng);
        EpochLog log;
        log.epoch = epoch;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch); ++i) {
                batch.push_back(splits.train[order[i]]);
            }
            log.rating_loss += pmf_gradients(model, batch, config.lambda);
            adam.step(params);
            ++steps;
        }
        log.rating_loss /= static_cast<double>(steps);
        log.train_rmse = evaluate(predictor, splits.train, "train").rmse;
        log.valid_rmse = log.train_rmse;
        if (!splits.validation.empty()) {
            try {
                log.valid_rmse = evaluate(predictor, splits.validation, "validation").rmse;
            } catch (const ContractError&) {
                if (epoch == 1) warn("train_pmf: every validation triple is cold, early stopping on training RMSE");
            }
        }
        log.best = stopper.observe(epoch, log.valid_rmse);
        if (log.best) {
            best_values.clear();
            for (const auto* p : params) best_values.push_back(p->value);
            result.optimizer = adam;
        }
        result.log.push_back(log);
        if (stopper.should_stop()) break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = best_values[i];
        params[i]->zero_grad();
    }
    result.best_epoch = stopper.best_epoch();
    result.best_valid_rmse = stopper.best();
    result.model = std::move(model);
    return result;
}

Checkpoint pmf_checkpoint(PMFModel& m, const Adam& optimizer, const PMFConfig& config, std::uint64_t epoch,
                          double best_valid_rmse, const std::map<std::string, std::string>& extra_config) {
    Checkpoint c;
    c.kind = "pmf";
    c.config = extra_config;
    for (const auto& [k, v] : config.to_map()) c.config[k] = v;
    c.epoch = epoch;
    c.best_valid_rmse = best_valid_rmse;
    c.optimizer_steps = optimizer.steps();
    auto params = m.parameters();
    for (auto* p : params) c.add(p->name, p->value);
    c.add("seen.users", detail::mask_tensor(m.seen.users));
    c.add("seen.items", detail::mask_tensor(m.seen.items));
    for (std::size_t i = 0; i < params.size() && i < optimizer.first_moments().size(); ++i) {
        c.add("adam.m/" + params[i]->name, optimizer.first_moments()[i]);
        c.add("adam.v/" + params[i]->name, optimizer.second_moments()[i]);
    }
    return c;
}

RestoredPMF restore_pmf(const Checkpoint& c) {
    if (c.kind != "pmf") throw CorruptionError("checkpoint holds a '" + c.kind + "' model, not pmf");
    RestoredPMF out;
    out.config = PMFConfig::from_map(c.config);
    try {
        const std::size_t nu = c.tensor("pmf.user_offset").size(), ni = c.tensor("pmf.item_offset").size();
        Rng unused(0);
        out.model = PMFModel::initialize(nu, ni, out.config.k, 0.0, unused);
        auto params = out.model.parameters();
        for (auto* p : params) {
            const Tensor& t = c.tensor(p->name);
            if (t.shape() != p->value.shape()) {
                throw CorruptionError("checkpoint: tensor '" + p->name + "' has shape " + shape_str(t.shape()) +
                                      ", model expects " + shape_str(p->value.shape()));
            }
            p->value = t;
        }
        out.model.seen.users = detail::tensor_mask(c.tensor("seen.users"));
        out.model.seen.items = detail::tensor_mask(c.tensor("seen.items"));
        if (out.model.seen.users.size() != nu || out.model.seen.items.size() != ni) {
            throw CorruptionError("checkpoint: seen-id masks do not match the offset tables");
        }
        out.optimizer = Adam(AdamConfig{out.config.lr}, params);
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
    } catch (const ContractError& e) {
        throw CorruptionError(std::string("checkpoint inconsistent: ") + e.what());
    }
    return out;
}

}  // namespace r3
