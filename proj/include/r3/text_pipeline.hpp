#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "r3/data_ingest.hpp"
#include "r3/tensor.hpp"

namespace r3 {

inline constexpr std::size_t kDefaultMaxLen = 128;
inline constexpr std::size_t kMinReviewWords = 3;

/// Word -> row index. Index 0 is the padding entry and never a real word.
class Vocab {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr const char* kPadWord = "<pad>";

    Vocab();
    /// Adds `word` if absent; returns its index.
    std::uint32_t add(const std::string& word);
    std::optional<std::uint32_t> find(std::string_view word) const;
    std::uint32_t size() const { return static_cast<std::uint32_t>(words_.size()); }
    const std::string& word(std::uint32_t id) const { return words_.at(id); }
    const std::vector<std::string>& words() const { return words_; }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Fixed pretrained vectors: one row per vocab entry, row 0 all zeros.
struct WordVectors {
    Vocab vocab;
    Tensor matrix;  // |vocab| x dim
    std::size_t dim() const { return matrix.dim(1); }
};

enum class VectorFormat { Text, Binary };

/// word2vec .vec ("count dim" header, then "word v1 .. vdim") or .bin
/// (same header, then "word " + dim float32 little-endian per record).
/// Duplicate words: the last one wins, with a warning.
WordVectors load_word_vectors(const std::filesystem::path& path, VectorFormat format,
                              std::optional<std::size_t> expected_dim = std::nullopt);

/// Deterministic stand-in for pretrained vectors: each word hashes (with the
/// seed) to a unit-norm Gaussian direction. Row 0 stays zero.
Tensor pseudo_embedding_matrix(const Vocab& vocab, std::size_t dim, std::uint64_t seed);

/// Rows of `source` rearranged to follow `vocab`. Every vocab word must exist in source.
Tensor embedding_rows(const Vocab& vocab, const WordVectors& source);

/// Lowercases ASCII, splits on every run of ASCII non-alphanumerics. Bytes
/// >= 0x80 count as word characters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

struct EncodedReview {
    std::vector<std::uint32_t> tokens;  // length L, 0-padded on the right
    std::vector<std::uint8_t> mask;     // 1 where tokens != 0
};

/// Tokenize, drop out-of-vocabulary words, truncate to L, right-pad. Returns
/// nothing when fewer than three in-vocabulary words remain.
std::optional<EncodedReview> encode_review(std::string_view text, const Vocab& vocab, std::size_t max_len);

struct ReviewEntry {
    std::uint32_t item = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint8_t> mask;
    double rating = 0.0;

    std::size_t length() const { return tokens.size(); }
    friend bool operator==(const ReviewEntry&, const ReviewEntry&) = default;
};

/// One entry per training triple whose review encodes; validation and test
/// reviews are never used. Requires splits built in-process (texts present).
std::vector<ReviewEntry> build_review_set(const DatasetSplits& splits, const Vocab& vocab, std::size_t max_len);

/// Sorted words from training-split reviews; if `filter` is given only words
/// it contains are kept.
Vocab corpus_vocab(const DatasetSplits& splits, const Vocab* filter = nullptr);

void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

/// JSON lines: {"item": j, "tokens": [...], "rating": r}.
void save_review_set(const std::vector<ReviewEntry>& entries, const std::filesystem::path& path);
std::vector<ReviewEntry> load_review_set(const std::filesystem::path& path);

}  // namespace r3
