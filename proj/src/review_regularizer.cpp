#include "r3/review_regularizer.hpp"

#include <cmath>
#include <string>

#include "r3/errors.hpp"

namespace r3 {

ReviewRegularizer::ReviewRegularizer(RegularizerConfig config, RegularizerParams params)
    : config_(config), params_(std::move(params)) {
    const std::size_t k = config_.k, d = config_.word_dim, w = config_.window, da = config_.d_att();
    if (w == 0 || w % 2 == 0) throw ConfigError("regularizer: window must be odd, got " + std::to_string(w));
    auto expect = [](const Parameter& p, const Shape& s) {
        if (p.value.shape() != s) {
            throw ShapeError("regularizer: " + p.name + " has shape " + shape_str(p.value.shape()) + ", expected " +
                             shape_str(s));
        }
    };
    expect(params_.conv_filters, {k, w, d});
    expect(params_.conv_bias, {k});
    expect(params_.query, {da, k});
    expect(params_.key, {da, k});
    expect(params_.value, {k, k});
}

ReviewRegularizer ReviewRegularizer::initialize(const RegularizerConfig& c, Rng& rng) {
    auto glorot = [&](Shape s, std::size_t fan_in, std::size_t fan_out) {
        Tensor t(std::move(s));
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& x : t.data()) x = limit * (2.0 * uniform_unit(rng) - 1.0);
        return t;
    };
    const std::size_t k = c.k, d = c.word_dim, w = c.window, da = c.d_att();
    RegularizerParams p;
    p.conv_filters = Parameter("review.conv_filters", glorot({k, w, d}, w * d, k));
    p.conv_bias = Parameter("review.conv_bias", Tensor(Shape{k}));
    p.query = Parameter("review.query", glorot({da, k}, k, da));
    p.key = Parameter("review.key", glorot({da, k}, k, da));
    p.value = Parameter("review.value", glorot({k, k}, k, k));
    return ReviewRegularizer(c, std::move(p));
}

ReviewRegularizer::Vars ReviewRegularizer::bind(Tape& tape) {
    return Vars{tape.param(params_.conv_filters), tape.param(params_.conv_bias), tape.param(params_.query),
                tape.param(params_.key), tape.param(params_.value)};
}

Var ReviewRegularizer::conv_text(Tape& tape, const Vars& vars, Var h) const {
    Var pre = tape.conv1d_same(h, vars.conv_filters, vars.conv_bias);
    return config_.conv_relu ? tape.relu(pre) : pre;
}

ReviewRegularizer::Attention ReviewRegularizer::attend(Tape& tape, const Vars& vars, Var item_vec, Var features,
                                                       std::span<const std::uint8_t> mask) const {
    Var q = tape.matvec(vars.query, item_vec);
    Var keys = tape.matmul(features, vars.key, true);
    Var values = tape.matmul(features, vars.value, true);
    Var logits = tape.matvec(keys, q);
    if (config_.scale_logits) logits = tape.scale(logits, 1.0 / std::sqrt(static_cast<double>(config_.d_att())));
    Var scores = tape.masked_softmax(logits, std::vector<std::uint8_t>(mask.begin(), mask.end()));
    return Attention{tape.matvec(values, scores, true), scores};
}

namespace {
std::vector<std::size_t> effective_ids(const ReviewEntry& e) {
    std::vector<std::size_t> ids(e.tokens.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = e.mask[i] ? e.tokens[i] : Vocab::kPad;
    return ids;
}
}  // namespace

Var ReviewRegularizer::review_matrix(Tape& tape, Var embeddings, const ReviewEntry& entry) {
    return tape.gather_rows(embeddings, effective_ids(entry));
}

void ReviewRegularizer::validate(const ReviewEntry& e, std::size_t num_items, std::size_t vocab_size) const {
    if (e.tokens.size() != e.mask.size()) throw ShapeError("review entry: tokens and mask lengths differ");
    if (e.tokens.size() < config_.window) {
        throw ShapeError("review entry: length " + std::to_string(e.tokens.size()) + " shorter than window " +
                         std::to_string(config_.window));
    }
    if (e.item >= num_items) {
        throw LookupError("review entry: item " + std::to_string(e.item) + " out of range for " +
                          std::to_string(num_items) + " items");
    }
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
        if (e.mask[i] && e.tokens[i] >= vocab_size) {
            throw LookupError("review entry: token " + std::to_string(e.tokens[i]) + " outside vocabulary");
        }
    }
}

Var ReviewRegularizer::rec_r(Tape& tape, const Vars& vars, Var item_table, Var embeddings,
                             const ReviewEntry& entry) const {
    validate(entry, tape.value(item_table).dim(0), tape.value(embeddings).dim(0));
    Var v = tape.gather_row(item_table, entry.item);
    Var m = conv_text(tape, vars, review_matrix(tape, embeddings, entry));
    return tape.dot(v, attend(tape, vars, v, m, entry.mask).z);
}

namespace {

struct Forward {
    Tensor v;
    Tensor scores;
    Tensor z;
};

Forward forward(const RegularizerConfig& c, const RegularizerParams& p, const Tensor& item_table,
                const Tensor& embeddings, const ReviewEntry& entry) {
    const std::size_t item = entry.item;
    Tensor v = kernels::gather_rows(item_table, std::span<const std::size_t>(&item, 1), true);
    const auto ids = effective_ids(entry);
    Tensor h = kernels::gather_rows(embeddings, ids, false);
    Tensor m = kernels::conv1d_same(h, p.conv_filters.value, p.conv_bias.value);
    if (c.conv_relu) m = kernels::relu(m);
    Tensor q = kernels::matvec(p.query.value, v);
    Tensor keys = kernels::matmul(m, p.key.value, true);
    Tensor values = kernels::matmul(m, p.value.value, true);
    Tensor logits = kernels::matvec(keys, q);
    if (c.scale_logits) logits = kernels::scale(logits, 1.0 / std::sqrt(static_cast<double>(c.d_att())));
    Tensor scores = kernels::masked_softmax(logits, entry.mask);
    Tensor z = kernels::matvec(values, scores, true);
    return Forward{std::move(v), std::move(scores), std::move(z)};
}

}  // namespace

double ReviewRegularizer::rec_r(const Tensor& item_table, const Tensor& embeddings, const ReviewEntry& entry) const {
    validate(entry, item_table.dim(0), embeddings.dim(0));
    auto f = forward(config_, params_, item_table, embeddings, entry);
    return kernels::dot(f.v, f.z).item();
}

Tensor ReviewRegularizer::attention_scores(const Tensor& item_table, const Tensor& embeddings,
                                           const ReviewEntry& entry) const {
    validate(entry, item_table.dim(0), embeddings.dim(0));
    return forward(config_, params_, item_table, embeddings, entry).scores;
}

}  // namespace r3
