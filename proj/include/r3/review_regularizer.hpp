#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "r3/random.hpp"
#include "r3/tape.hpp"
#include "r3/text_pipeline.hpp"

namespace r3 {

struct RegularizerConfig {
    std::size_t k = 8;            // filters, and width of v_j / z
    std::size_t word_dim = 300;   // D_R
    std::size_t window = 3;       // filter width w, odd
    std::size_t attention_dim = 0;  // d_att; 0 means K
    bool scale_logits = true;     // divide Q.K^T by sqrt(d_att)
    bool conv_relu = true;        // ReLU after the convolution, else identity

    std::size_t d_att() const { return attention_dim ? attention_dim : k; }
};

struct RegularizerParams {
    Parameter conv_filters;  // K x w x D_R
    Parameter conv_bias;     // K
    Parameter query;         // d_att x K
    Parameter key;           // d_att x K
    Parameter value;         // K x K
};

/// Training-only branch: rec_R(j, review) = <v_j, attend(v_j, conv(H))>.
///
/// H is built from the review's token ids with every masked position mapped
/// to the zero padding row, so the contents of padded slots never matter.
class ReviewRegularizer {
public:
    ReviewRegularizer() = default;
    ReviewRegularizer(RegularizerConfig config, RegularizerParams params);

    static ReviewRegularizer initialize(const RegularizerConfig& config, Rng& rng);

    const RegularizerConfig& config() const { return config_; }
    RegularizerParams& params() { return params_; }
    const RegularizerParams& params() const { return params_; }

    struct Vars {
        Var conv_filters, conv_bias, query, key, value;
    };
    Vars bind(Tape& tape);

    /// M = act(conv1d_same(H) + bias), L x K.
    Var conv_text(Tape& tape, const Vars& vars, Var h) const;

    struct Attention {
        Var z;       // K
        Var scores;  // L, zero at masked positions
    };
    Attention attend(Tape& tape, const Vars& vars, Var item_vec, Var features,
                     std::span<const std::uint8_t> mask) const;

    /// Padding-safe embedding lookup of a review: L x D_R.
    static Var review_matrix(Tape& tape, Var embeddings, const ReviewEntry& entry);

    /// Full branch on a tape. `item_table` is the shared item embedding table.
    Var rec_r(Tape& tape, const Vars& vars, Var item_table, Var embeddings, const ReviewEntry& entry) const;

    /// Forward-only evaluation through the same kernels, without a tape.
    double rec_r(const Tensor& item_table, const Tensor& embeddings, const ReviewEntry& entry) const;
    /// Attention distribution for an entry (forward only).
    Tensor attention_scores(const Tensor& item_table, const Tensor& embeddings, const ReviewEntry& entry) const;

private:
    void validate(const ReviewEntry& entry, std::size_t num_items, std::size_t vocab_size) const;

    RegularizerConfig config_;
    RegularizerParams params_;
};

}  // namespace r3
