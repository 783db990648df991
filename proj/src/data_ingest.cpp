#include "r3/data_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "r3/errors.hpp"
#include "r3/log.hpp"
#include "r3/random.hpp"
#include "r3/version.hpp"

namespace r3 {

using nlohmann::json;

IdMap::IdMap(std::vector<std::string> names) : names_(std::move(names)) {
    index_.reserve(names_.size());
    for (std::uint32_t i = 0; i < names_.size(); ++i) {
        if (!index_.emplace(names_[i], i).second) throw FormatError("duplicate id '" + names_[i] + "' in id map");
    }
}

std::optional<std::uint32_t> IdMap::find(const std::string& raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

DatasetStats DatasetSplits::stats() const {
    DatasetStats s;
    s.users = num_users();
    s.items = num_items();
    s.ratings = train.size() + validation.size() + test.size();
    if (s.users && s.items) {
        s.sparsity = static_cast<double>(s.ratings) / (static_cast<double>(s.users) * static_cast<double>(s.items));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::optional<RawReview> parse_line(const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    auto reviewer = j.find("reviewerID");
    auto asin = j.find("asin");
    auto overall = j.find("overall");
    auto ts = j.find("unixReviewTime");
    if (reviewer == j.end() || asin == j.end() || overall == j.end() || ts == j.end()) return std::nullopt;
    if (!reviewer->is_string() || !asin->is_string() || !overall->is_number() || !ts->is_number_integer()) {
        return std::nullopt;
    }
    RawReview r;
    r.reviewer_id = reviewer->get<std::string>();
    r.item_id = asin->get<std::string>();
    r.rating = overall->get<double>();
    r.timestamp = ts->get<std::int64_t>();
    if (!std::isfinite(r.rating) || r.rating < 1.0 || r.rating > 5.0 || r.timestamp < 0) return std::nullopt;
    if (r.reviewer_id.empty() || r.item_id.empty()) return std::nullopt;
    if (auto text = j.find("reviewText"); text != j.end()) {
        if (text->is_string()) {
            r.review_text = text->get<std::string>();
        } else if (!text->is_null()) {
            return std::nullopt;
        }
    }
    return r;
}

}  // namespace

ParseResult parse_jsonl(std::istream& in) {
    ParseResult out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++out.lines;
        if (auto r = parse_line(line)) {
            out.reviews.push_back(std::move(*r));
        } else {
            ++out.malformed;
        }
    }
    if (in.bad()) throw IoError("read failure while parsing review lines");
    if (out.lines > 0 && out.malformed * 10 > out.lines) {
        throw FormatError(std::to_string(out.malformed) + " of " + std::to_string(out.lines) +
                          " lines are malformed (more than 10%); is this an Amazon reviews JSON-lines file?");
    }
    return out;
}

ParseResult parse_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return parse_jsonl(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Filtering

std::vector<RawReview> filter_by_date(std::vector<RawReview> reviews, std::int64_t cutoff) {
    std::erase_if(reviews, [cutoff](const RawReview& r) { return r.timestamp <= cutoff; });
    return reviews;
}

std::vector<RawReview> kcore_filter(std::vector<RawReview> reviews, std::size_t k) {
    if (k == 0) throw ContractError("kcore_filter: k must be at least 1");
    while (true) {
        std::unordered_map<std::string, std::size_t> user_deg, item_deg;
        for (const auto& r : reviews) {
            ++user_deg[r.reviewer_id];
            ++item_deg[r.item_id];
        }
        const std::size_t before = reviews.size();
        std::erase_if(reviews, [&](const RawReview& r) {
            return user_deg[r.reviewer_id] < k || item_deg[r.item_id] < k;
        });
        if (reviews.size() == before) break;
    }
    if (reviews.empty()) warn("k-core filter (k=" + std::to_string(k) + ") removed every record");
    return reviews;
}

// ---------------------------------------------------------------------------
// Splitting

LeaveLastOut split_leave_last_out(const std::vector<RatingTriple>& triples) {
    std::uint32_t max_user = 0, max_item = 0;
    for (const auto& t : triples) {
        max_user = std::max(max_user, t.user + 1);
        max_item = std::max(max_item, t.item + 1);
    }
    std::vector<std::vector<std::size_t>> by_user(max_user);
    std::vector<std::size_t> item_train_count(max_item, 0);
    for (std::size_t i = 0; i < triples.size(); ++i) {
        by_user[triples[i].user].push_back(i);
        ++item_train_count[triples[i].item];
    }

    std::vector<bool> held_out(triples.size(), false);
    LeaveLastOut out;
    for (std::uint32_t u = 0; u < max_user; ++u) {
        const auto& idx = by_user[u];
        if (idx.size() < 2) continue;
        std::size_t last = idx.front();
        for (auto i : idx) {
            const auto& a = triples[i];
            const auto& b = triples[last];
            if (a.timestamp > b.timestamp || (a.timestamp == b.timestamp && a.item > b.item)) last = i;
        }
        const auto item = triples[last].item;
        if (item_train_count[item] < 2) {
            ++out.cold_item_guard_hits;
            warn("leave-last-out: user " + std::to_string(u) + " keeps its last triple (item " +
                 std::to_string(item) + ") in train; the item has no other training triple");
            continue;
        }
        --item_train_count[item];
        held_out[last] = true;
    }
    for (std::size_t i = 0; i < triples.size(); ++i) {
        (held_out[i] ? out.test : out.train).push_back(triples[i]);
    }
    return out;
}

std::pair<std::vector<RatingTriple>, std::vector<RatingTriple>> split_validation(
    const std::vector<RatingTriple>& train, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ContractError("split_validation: fraction must be in (0, 1), got " + std::to_string(fraction));
    }
    const auto n_valid = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(std::span<std::size_t>(order), rng);
    std::vector<bool> is_valid(train.size(), false);
    for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = true;

    std::pair<std::vector<RatingTriple>, std::vector<RatingTriple>> out;
    for (std::size_t i = 0; i < train.size(); ++i) (is_valid[i] ? out.second : out.first).push_back(train[i]);
    return out;
}

DatasetSplits build_splits(std::vector<RawReview> reviews, const PipelineOptions& opts) {
    reviews = filter_by_date(std::move(reviews), opts.cutoff);
    reviews = kcore_filter(std::move(reviews), opts.k);

    std::set<std::string> users, items;
    for (const auto& r : reviews) {
        users.insert(r.reviewer_id);
        items.insert(r.item_id);
    }
    DatasetSplits s;
    s.user_map = IdMap(std::vector<std::string>(users.begin(), users.end()));
    s.item_map = IdMap(std::vector<std::string>(items.begin(), items.end()));

    std::vector<RatingTriple> triples;
    triples.reserve(reviews.size());
    s.texts.reserve(reviews.size());
    for (std::size_t i = 0; i < reviews.size(); ++i) {
        auto& r = reviews[i];
        triples.push_back(RatingTriple{*s.user_map.find(r.reviewer_id), *s.item_map.find(r.item_id), r.rating,
                                       r.timestamp, static_cast<std::int64_t>(i)});
        s.texts.push_back(std::move(r.review_text));
    }

    auto llo = split_leave_last_out(triples);
    s.test = std::move(llo.test);
    if (llo.train.size() >= 2) {
        auto [tr, va] = split_validation(llo.train, opts.valid_fraction, opts.seed);
        s.train = std::move(tr);
        s.validation = std::move(va);
    } else {
        s.train = std::move(llo.train);
    }
    s.manifest.cutoff = opts.cutoff;
    s.manifest.k = opts.k;
    s.manifest.valid_fraction = opts.valid_fraction;
    s.manifest.seed = opts.seed;
    s.manifest.cold_item_guard_hits = llo.cold_item_guard_hits;
    return s;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_triples(const std::filesystem::path& path, const std::vector<RatingTriple>& triples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& t : triples) {
        json j{{"user", t.user}, {"item", t.item}, {"rating", t.rating}, {"timestamp", t.timestamp}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failure on " + path.string());
}

std::vector<RatingTriple> read_triples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<RatingTriple> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        try {
            if (j.is_discarded()) throw std::runtime_error("invalid JSON");
            out.push_back(RatingTriple{j.at("user").get<std::uint32_t>(), j.at("item").get<std::uint32_t>(),
                                       j.at("rating").get<double>(), j.at("timestamp").get<std::int64_t>(), -1});
        } catch (const std::exception& e) {
            throw CorruptionError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_ids(const std::filesystem::path& path, const IdMap& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::uint32_t i = 0; i < ids.size(); ++i) {
        const auto& name = ids.name(i);
        if (name.find_first_of("\t\n") != std::string::npos) {
            throw FormatError("raw id contains a tab or newline: '" + name + "'");
        }
        out << i << '\t' << name << '\n';
    }
}

IdMap read_ids(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || std::stoul(line.substr(0, tab)) != names.size()) {
            throw CorruptionError(path.string() + ": id column not contiguous at line " +
                                  std::to_string(names.size() + 1));
        }
        names.push_back(line.substr(tab + 1));
    }
    return IdMap(std::move(names));
}

}  // namespace

void persist_splits(const DatasetSplits& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_triples(dir / "train.jsonl", s.train);
    write_triples(dir / "valid.jsonl", s.validation);
    write_triples(dir / "test.jsonl", s.test);
    write_ids(dir / "users.tsv", s.user_map);
    write_ids(dir / "items.tsv", s.item_map);

    const auto st = s.stats();
    json m;
    m["tool"] = "r3";
    m["tool_version"] = kVersion;
    m["counts"] = {{"train", s.train.size()},   {"validation", s.validation.size()},
                   {"test", s.test.size()},     {"users", s.num_users()},
                   {"items", s.num_items()}};
    m["stats"] = {{"users", st.users}, {"items", st.items}, {"ratings", st.ratings}, {"sparsity", st.sparsity}};
    m["cutoff"] = s.manifest.cutoff;
    m["k"] = s.manifest.k;
    m["valid_fraction"] = s.manifest.valid_fraction;
    m["seed"] = s.manifest.seed;
    m["cold_item_guard_hits"] = s.manifest.cold_item_guard_hits;
    m["extra"] = s.manifest.extra;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << '\n';
}

DatasetSplits load_splits(const std::filesystem::path& dir) {
    const auto mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open " + mpath.string());
    json m = json::parse(in, nullptr, false);
    if (m.is_discarded()) throw CorruptionError(mpath.string() + ": invalid JSON");

    DatasetSplits s;
    s.train = read_triples(dir / "train.jsonl");
    s.validation = read_triples(dir / "valid.jsonl");
    s.test = read_triples(dir / "test.jsonl");
    s.user_map = read_ids(dir / "users.tsv");
    s.item_map = read_ids(dir / "items.tsv");

    try {
        const auto& c = m.at("counts");
        auto expect = [&](const char* key, std::size_t actual) {
            const auto want = c.at(key).get<std::size_t>();
            if (want != actual) {
                throw CorruptionError(mpath.string() + ": manifest says " + std::to_string(want) + " " + key +
                                      " but found " + std::to_string(actual));
            }
        };
        expect("train", s.train.size());
        expect("validation", s.validation.size());
        expect("test", s.test.size());
        expect("users", s.num_users());
        expect("items", s.num_items());
        s.manifest.cutoff = m.at("cutoff").get<std::int64_t>();
        s.manifest.k = m.at("k").get<std::size_t>();
        s.manifest.valid_fraction = m.at("valid_fraction").get<double>();
        s.manifest.seed = m.at("seed").get<std::uint64_t>();
        s.manifest.cold_item_guard_hits = m.at("cold_item_guard_hits").get<std::size_t>();
        s.manifest.extra = m.at("extra").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw CorruptionError(mpath.string() + ": " + e.what());
    }

    for (const auto* split : {&s.train, &s.validation, &s.test}) {
        for (const auto& t : *split) {
            if (t.user >= s.num_users() || t.item >= s.num_items()) {
                throw CorruptionError(dir.string() + ": triple references id outside the id maps");
            }
        }
    }
    return s;
}

}  // namespace r3
