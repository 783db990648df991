#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace r3 {

/// 2013-01-01T00:00:00Z.
inline constexpr std::int64_t kDefaultDateCutoff = 1356998400;

struct RawReview {
    std::string reviewer_id;
    std::string item_id;
    double rating = 0.0;
    std::int64_t timestamp = 0;
    std::optional<std::string> review_text;

    friend bool operator==(const RawReview&, const RawReview&) = default;
};

struct RatingTriple {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    double rating = 0.0;
    std::int64_t timestamp = 0;
    /// Index into DatasetSplits::texts for triples built in-process; -1 after
    /// loading from disk. Not part of equality.
    std::int64_t source = -1;

    friend bool operator==(const RatingTriple& a, const RatingTriple& b) {
        return a.user == b.user && a.item == b.item && a.rating == b.rating && a.timestamp == b.timestamp;
    }
};

/// Raw string id <-> contiguous integer id. Ids are assigned in sorted order
/// of the raw strings so they do not depend on input order.
class IdMap {
public:
    IdMap() = default;
    explicit IdMap(std::vector<std::string> sorted_unique_names);

    std::uint32_t size() const { return static_cast<std::uint32_t>(names_.size()); }
    const std::string& name(std::uint32_t id) const { return names_.at(id); }
    std::optional<std::uint32_t> find(const std::string& raw) const;
    const std::vector<std::string>& names() const { return names_; }

    friend bool operator==(const IdMap& a, const IdMap& b) { return a.names_ == b.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Protocol parameters recorded alongside persisted splits.
struct SplitManifest {
    std::int64_t cutoff = kDefaultDateCutoff;
    std::size_t k = 5;
    double valid_fraction = 0.1;
    std::uint64_t seed = 0;
    std::size_t cold_item_guard_hits = 0;
    /// Extra key/values (text pipeline settings, source path, ...).
    std::map<std::string, std::string> extra;

    friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

struct DatasetStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t ratings = 0;
    double sparsity = 0.0;  // ratings / (users * items)
};

struct DatasetSplits {
    std::vector<RatingTriple> train;
    std::vector<RatingTriple> validation;
    std::vector<RatingTriple> test;
    IdMap user_map;
    IdMap item_map;
    SplitManifest manifest;
    /// Review text per source record; empty after load_splits.
    std::vector<std::optional<std::string>> texts;

    std::uint32_t num_users() const { return user_map.size(); }
    std::uint32_t num_items() const { return item_map.size(); }
    DatasetStats stats() const;

    friend bool operator==(const DatasetSplits& a, const DatasetSplits& b) {
        return a.train == b.train && a.validation == b.validation && a.test == b.test &&
               a.user_map == b.user_map && a.item_map == b.item_map && a.manifest == b.manifest;
    }
};

struct ParseResult {
    std::vector<RawReview> reviews;
    std::size_t lines = 0;  // non-blank lines seen
    std::size_t malformed = 0;
};

/// Parses Amazon-style JSON lines (reviewerID, asin, overall, unixReviewTime,
/// optional reviewText). Malformed lines are skipped and counted; more than
/// 10% malformed raises FormatError.
ParseResult parse_jsonl(std::istream& in);
ParseResult parse_jsonl(const std::filesystem::path& path);

/// Keeps records with timestamp strictly greater than `cutoff`.
std::vector<RawReview> filter_by_date(std::vector<RawReview> reviews, std::int64_t cutoff = kDefaultDateCutoff);

/// Iteratively drops users and items with fewer than k records until every
/// remaining user and item has at least k.
std::vector<RawReview> kcore_filter(std::vector<RawReview> reviews, std::size_t k = 5);

struct LeaveLastOut {
    std::vector<RatingTriple> train;
    std::vector<RatingTriple> test;
    std::size_t cold_item_guard_hits = 0;
};

/// Per user, the latest triple (ties: larger item id) goes to test unless
/// that would leave its item with no training triple, in which case it stays
/// in train. Users with fewer than two triples stay entirely in train.
LeaveLastOut split_leave_last_out(const std::vector<RatingTriple>& triples);

/// Moves floor(fraction * |train|) uniformly chosen triples to validation.
/// Both outputs keep the input's relative order.
std::pair<std::vector<RatingTriple>, std::vector<RatingTriple>> split_validation(
    const std::vector<RatingTriple>& train, double fraction, std::uint64_t seed);

struct PipelineOptions {
    std::int64_t cutoff = kDefaultDateCutoff;
    std::size_t k = 5;
    double valid_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Date filter, k-core, contiguous ids, leave-last-out, validation split.
DatasetSplits build_splits(std::vector<RawReview> reviews, const PipelineOptions& opts);

void persist_splits(const DatasetSplits& splits, const std::filesystem::path& dir);
DatasetSplits load_splits(const std::filesystem::path& dir);

}  // namespace r3
