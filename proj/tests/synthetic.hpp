#pragma once

// Synthetic datasets with known generating structure, shared by the unit
// tests and the acceptance suite.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "r3/data_ingest.hpp"
#include "r3/random.hpp"
#include "r3/text_pipeline.hpp"

namespace synth {

inline r3::IdMap names(const char* prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
        out.emplace_back(buf);
    }
    return r3::IdMap(std::move(out));
}

/// Moves roughly `fraction` of the triples to validation while every user and
/// item keeps at least one training triple.
inline void hold_out(std::vector<r3::RatingTriple> all, double fraction, r3::Rng& rng, std::size_t users,
                     std::size_t items, std::vector<r3::RatingTriple>& train, std::vector<r3::RatingTriple>& valid) {
    r3::shuffle(std::span<r3::RatingTriple>(all), rng);
    std::vector<std::size_t> user_count(users), item_count(items);
    for (const auto& t : all) {
        ++user_count[t.user];
        ++item_count[t.item];
    }
    const auto target = static_cast<std::size_t>(fraction * static_cast<double>(all.size()));
    for (const auto& t : all) {
        if (valid.size() < target && user_count[t.user] > 1 && item_count[t.item] > 1) {
            --user_count[t.user];
            --item_count[t.item];
            valid.push_back(t);
        } else {
            train.push_back(t);
        }
    }
}

struct Rank1Options {
    std::size_t users = 200;
    std::size_t items = 100;
    double density = 0.05;
    double noise = 0.0;
    double valid_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// r_ij = a_i * b_j (+ N(0, noise^2)), a, b ~ U(1, 2.2); ratings land in [1, 4.84].
inline r3::DatasetSplits rank1(const Rank1Options& o) {
    r3::Rng rng(o.seed);
    std::vector<double> a(o.users), b(o.items);
    for (auto& x : a) x = 1.0 + 1.2 * r3::uniform_unit(rng);
    for (auto& x : b) x = 1.0 + 1.2 * r3::uniform_unit(rng);

    std::vector<std::size_t> cells(o.users * o.items);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    r3::shuffle(std::span<std::size_t>(cells), rng);
    const auto n = static_cast<std::size_t>(o.density * static_cast<double>(cells.size()));
    std::vector<r3::RatingTriple> all;
    for (std::size_t c = 0; c < n; ++c) {
        r3::RatingTriple t;
        t.user = static_cast<std::uint32_t>(cells[c] / o.items);
        t.item = static_cast<std::uint32_t>(cells[c] % o.items);
        t.rating = a[t.user] * b[t.item] + o.noise * r3::standard_normal(rng);
        t.timestamp = static_cast<std::int64_t>(c);
        all.push_back(t);
    }
    r3::DatasetSplits s;
    s.user_map = names("u", o.users);
    s.item_map = names("i", o.items);
    hold_out(std::move(all), o.valid_fraction, rng, o.users, o.items, s.train, s.validation);
    return s;
}

struct PlantedOptions {
    std::size_t users = 150;
    std::size_t items = 60;
    std::size_t topics = 4;
    std::size_t rated_per_user = 8;
    std::size_t train_per_user = 3;
    std::size_t keywords_per_topic = 6;
    std::size_t generic_words = 12;
    std::size_t review_len = 12;
    std::size_t word_dim = 16;
    double keyword_rate = 0.7;
    double noise = 0.2;
    std::uint64_t seed = 0;
};

struct PlantedSet {
    r3::DatasetSplits splits;
    std::vector<r3::ReviewEntry> reviews;  // one per training triple
    r3::Tensor words;                      // row 0 is padding
    std::vector<std::size_t> item_topic;
};

/// Items carry one of `topics` latent topics; a user's rating is their
/// affinity for the item's topic plus noise. Each training triple comes with
/// a keyword bag drawn mostly from the item's topic words. Word vectors put
/// a topic's keywords near a shared centroid, like pretrained vectors would.
inline PlantedSet planted_topics(const PlantedOptions& o) {
    r3::Rng rng(o.seed);
    PlantedSet out;
    out.item_topic.resize(o.items);
    for (auto& t : out.item_topic) t = r3::uniform_index(rng, o.topics);
    std::vector<double> affinity(o.users * o.topics);
    for (auto& a : affinity) a = 1.0 + 4.0 * r3::uniform_unit(rng);

    const std::size_t keywords = o.topics * o.keywords_per_topic;
    const std::size_t vocab = 1 + keywords + o.generic_words;
    out.words = r3::Tensor(r3::Shape{vocab, o.word_dim});
    std::vector<double> centroids(o.topics * o.word_dim);
    for (auto& c : centroids) c = r3::standard_normal(rng);
    for (std::size_t w = 1; w < vocab; ++w) {
        const bool keyword = w <= keywords;
        const std::size_t topic = keyword ? (w - 1) / o.keywords_per_topic : 0;
        for (std::size_t d = 0; d < o.word_dim; ++d) {
            const double noise = r3::standard_normal(rng);
            out.words.data()[w * o.word_dim + d] = keyword ? centroids[topic * o.word_dim + d] + 0.3 * noise : noise;
        }
    }

    auto& s = out.splits;
    s.user_map = names("u", o.users);
    s.item_map = names("i", o.items);
    std::vector<std::size_t> order(o.items);
    for (std::size_t u = 0; u < o.users; ++u) {
        for (std::size_t i = 0; i < o.items; ++i) order[i] = i;
        r3::shuffle(std::span<std::size_t>(order), rng);
        for (std::size_t n = 0; n < o.rated_per_user; ++n) {
            r3::RatingTriple t;
            t.user = static_cast<std::uint32_t>(u);
            t.item = static_cast<std::uint32_t>(order[n]);
            t.rating = affinity[u * o.topics + out.item_topic[order[n]]] + o.noise * r3::standard_normal(rng);
            t.timestamp = static_cast<std::int64_t>(n);
            (n < o.train_per_user ? s.train : s.validation).push_back(t);
        }
    }
    for (const auto& t : s.train) {
        r3::ReviewEntry e;
        e.item = t.item;
        e.rating = t.rating;
        for (std::size_t p = 0; p < o.review_len; ++p) {
            std::uint32_t w;
            if (r3::uniform_unit(rng) < o.keyword_rate) {
                w = static_cast<std::uint32_t>(1 + out.item_topic[t.item] * o.keywords_per_topic +
                                               r3::uniform_index(rng, o.keywords_per_topic));
            } else {
                w = static_cast<std::uint32_t>(1 + keywords + r3::uniform_index(rng, o.generic_words));
            }
            e.tokens.push_back(w);
            e.mask.push_back(1);
        }
        out.reviews.push_back(std::move(e));
    }
    return out;
}

}  // namespace synth
