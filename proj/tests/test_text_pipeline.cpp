#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "r3/errors.hpp"
#include "r3/kernels.hpp"
#include "r3/text_pipeline.hpp"
#include "test_util.hpp"

using namespace r3;

namespace {

Vocab vocab_of(std::initializer_list<const char*> words) {
    Vocab v;
    for (auto w : words) v.add(w);
    return v;
}

void write_binary_vectors(const std::filesystem::path& p, const std::vector<std::pair<std::string, std::vector<float>>>& recs,
                          std::size_t dim) {
    std::ofstream out(p, std::ios::binary);
    out << recs.size() << ' ' << dim << '\n';
    for (const auto& [w, v] : recs) {
        out << w << ' ';
        for (float f : v) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int b = 0; b < 4; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
        out << '\n';
    }
}

}  // namespace

TEST_CASE("tokenize") {
    using V = std::vector<std::string>;
    CHECK(tokenize("Great game, GREAT fun!!") == V{"great", "game", "great", "fun"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("A+1") == V{"a", "1"});
    CHECK(tokenize("  café  ") == V{"café"});
}

TEST_CASE("load_word_vectors") {
    testutil::TempDir dir;
    SUBCASE("text format") {
        testutil::write_file(dir.path() / "v.vec", "1 3\ncat 0.1 0.2 0.3\n");
        auto wv = load_word_vectors(dir.path() / "v.vec", VectorFormat::Text);
        CHECK(wv.vocab.size() == 2);
        CHECK(wv.vocab.find("cat") == 1u);
        CHECK(wv.dim() == 3);
        CHECK(wv.matrix.row(0)[0] == 0.0);
        CHECK(wv.matrix.at(1, 0) == 0.1);
        CHECK(wv.matrix.at(1, 2) == 0.3);
    }
    SUBCASE("binary format matches text format") {
        write_binary_vectors(dir.path() / "v.bin", {{"cat", {0.1f, 0.2f, 0.3f}}}, 3);
        auto wv = load_word_vectors(dir.path() / "v.bin", VectorFormat::Binary);
        CHECK(wv.vocab.find("cat") == 1u);
        CHECK(wv.matrix.at(1, 0) == static_cast<double>(0.1f));
        CHECK(wv.matrix.at(1, 2) == static_cast<double>(0.3f));
        testutil::write_file(dir.path() / "v.vec", "1 3\ncat 0.1 0.2 0.3\n");
        auto tv = load_word_vectors(dir.path() / "v.vec", VectorFormat::Text);
        CHECK(tv.vocab == wv.vocab);
        for (std::size_t d = 0; d < 3; ++d) CHECK(static_cast<float>(tv.matrix.at(1, d)) == static_cast<float>(wv.matrix.at(1, d)));
    }
    SUBCASE("short line names the line") {
        std::string text = "2 300\nok";
        for (int i = 0; i < 300; ++i) text += " 0.5";
        text += "\nbad";
        for (int i = 0; i < 299; ++i) text += " 0.5";
        text += "\n";
        testutil::write_file(dir.path() / "v.vec", text);
        try {
            load_word_vectors(dir.path() / "v.vec", VectorFormat::Text);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find(":3:") != std::string::npos);
        }
    }
    SUBCASE("dimension mismatch with configuration") {
        testutil::write_file(dir.path() / "v.vec", "1 3\ncat 0.1 0.2 0.3\n");
        CHECK_THROWS_AS(load_word_vectors(dir.path() / "v.vec", VectorFormat::Text, 300), ConfigError);
    }
    SUBCASE("duplicate word: last wins with a warning") {
        testutil::CaptureWarnings cap;
        testutil::write_file(dir.path() / "v.vec", "2 2\ncat 1 1\ncat 2 3\n");
        auto wv = load_word_vectors(dir.path() / "v.vec", VectorFormat::Text);
        CHECK(wv.vocab.size() == 2);
        CHECK(wv.matrix.at(1, 1) == 3.0);
        CHECK(cap.count() == 1);
    }
    SUBCASE("truncated binary") {
        write_binary_vectors(dir.path() / "v.bin", {{"cat", {0.1f, 0.2f}}}, 3);
        CHECK_THROWS_AS(load_word_vectors(dir.path() / "v.bin", VectorFormat::Binary), FormatError);
    }
}

TEST_CASE("encode_review") {
    auto v = vocab_of({"a", "b", "c", "d", "e"});
    SUBCASE("padding arithmetic") {
        auto enc = encode_review("a b c d e", v, 8);
        REQUIRE(enc);
        CHECK(enc->tokens == std::vector<std::uint32_t>{1, 2, 3, 4, 5, 0, 0, 0});
        CHECK(enc->mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});
    }
    SUBCASE("three-word floor applies after dropping unknown words") {
        CHECK_FALSE(encode_review("a b", v, 8));
        CHECK_FALSE(encode_review("a zzz b qqq", v, 8));
        CHECK(encode_review("a zzz b qqq c", v, 8));
    }
    SUBCASE("truncation") {
        std::string text;
        for (int i = 0; i < 200; ++i) text += "abcde"[i % 5] + std::string(" ");
        auto enc = encode_review(text, v, 128);
        REQUIRE(enc);
        CHECK(enc->tokens.size() == 128);
        CHECK(std::count(enc->mask.begin(), enc->mask.end(), 1) == 128);
        CHECK(enc->tokens[127] == 1 + 127 % 5);
    }
    SUBCASE("idempotent and deterministic") {
        auto a = encode_review("E d c zz b", v, 6);
        auto b = encode_review("E d c zz b", v, 6);
        REQUIRE(a);
        CHECK(a->tokens == b->tokens);
        CHECK(a->mask == b->mask);
        // re-encoding the decoded words gives the same thing
        std::string decoded;
        for (auto t : a->tokens)
            if (t) decoded += v.word(t) + " ";
        auto c = encode_review(decoded, v, 6);
        CHECK(c->tokens == a->tokens);
    }
    CHECK_THROWS_AS(encode_review("a b c", v, 2), ContractError);
}

TEST_CASE("build_review_set") {
    auto v = vocab_of({"great", "fun", "game"});
    DatasetSplits s;
    s.user_map = IdMap({"u0", "u1"});
    s.item_map = IdMap({"i0", "i1"});
    s.texts = {std::string("great fun game"), std::string("great fun game great fun game"), std::string(""),
               std::nullopt};
    s.train = {{0, 1, 4.0, 1, 0}, {1, 0, 2.0, 2, 2}, {1, 1, 3.0, 3, 3}};
    s.test = {{0, 0, 5.0, 9, 1}};
    auto r = build_review_set(s, v, 8);
    REQUIRE(r.size() == 1);
    CHECK(r[0].item == 1);
    CHECK(r[0].rating == 4.0);
    CHECK(r.size() <= s.train.size());

    auto loaded = s;
    loaded.train[0].source = -1;
    CHECK_THROWS_AS(build_review_set(loaded, v, 8), ContractError);
}

TEST_CASE("review set invariants on a toy corpus") {
    auto raw = testutil::toy_corpus(500, 1);
    auto splits = build_splits(raw, PipelineOptions{});
    auto vocab = corpus_vocab(splits);
    auto entries = build_review_set(splits, vocab, 6);
    CHECK(!entries.empty());
    CHECK(entries.size() <= splits.train.size());
    for (const auto& e : entries) {
        const auto pop = std::count(e.mask.begin(), e.mask.end(), 1);
        CHECK(pop >= 3);
        CHECK(pop <= 6);
        for (std::size_t i = 0; i < e.length(); ++i) CHECK((e.tokens[i] == 0) == (e.mask[i] == 0));
    }
    testutil::TempDir dir;
    save_review_set(entries, dir.path() / "reviews.jsonl");
    CHECK(load_review_set(dir.path() / "reviews.jsonl") == entries);
    save_vocab(vocab, dir.path() / "vocab.txt");
    CHECK(load_vocab(dir.path() / "vocab.txt") == vocab);
}

TEST_CASE("embeddings") {
    auto v = vocab_of({"x", "y", "z"});
    auto m = pseudo_embedding_matrix(v, 5, 3);
    CHECK(m == pseudo_embedding_matrix(v, 5, 3));
    CHECK_FALSE(m == pseudo_embedding_matrix(v, 5, 4));
    for (std::uint32_t i = 0; i < v.size(); ++i) {
        double n = 0;
        for (double x : m.row(i)) n += x * x;
        CHECK(n == doctest::Approx(i == 0 ? 0.0 : 1.0));
    }
    // A fully padded review embeds to the zero matrix.
    std::vector<std::size_t> pads(4, 0);
    auto h = kernels::gather_rows(m, pads, false);
    for (double x : h.values()) CHECK(x == 0.0);

    WordVectors src{vocab_of({"z", "x", "y"}), Tensor::matrix({{0, 0}, {3, 3}, {1, 1}, {2, 2}})};
    auto rows = embedding_rows(v, src);
    CHECK(rows == Tensor::matrix({{0, 0}, {1, 1}, {2, 2}, {3, 3}}));
    CHECK_THROWS_AS(embedding_rows(vocab_of({"w"}), src), ConfigError);
}
