#include "r3/text_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "r3/errors.hpp"
#include "r3/log.hpp"
#include "r3/random.hpp"

namespace r3 {

using nlohmann::json;

Vocab::Vocab() {
    words_.push_back(kPadWord);
    index_.emplace(kPadWord, kPad);
}

std::uint32_t Vocab::add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, static_cast<std::uint32_t>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
}

std::optional<std::uint32_t> Vocab::find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end() || it->second == kPad) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Word vectors

namespace {

std::pair<std::size_t, std::size_t> parse_header(const std::string& line, const std::filesystem::path& path) {
    std::istringstream hs(line);
    long long count = -1, dim = -1;
    if (!(hs >> count >> dim) || count < 0 || dim <= 0) {
        throw FormatError(path.string() + ":1: expected header \"count dim\", got \"" + line + "\"");
    }
    return {static_cast<std::size_t>(count), static_cast<std::size_t>(dim)};
}

float read_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

struct VectorSink {
    Vocab vocab;
    std::vector<std::vector<double>> rows;  // rows[0] is padding
    std::size_t dim;

    explicit VectorSink(std::size_t d) : rows{std::vector<double>(d, 0.0)}, dim(d) {}

    void put(const std::string& word, std::vector<double> v) {
        if (word == Vocab::kPadWord) throw FormatError("word vectors contain the reserved padding word");
        if (auto existing = vocab.find(word)) {
            warn("duplicate word vector for '" + word + "'; keeping the last one");
            rows[*existing] = std::move(v);
            return;
        }
        vocab.add(word);
        rows.push_back(std::move(v));
    }

    WordVectors finish() && {
        std::vector<double> flat;
        flat.reserve(rows.size() * dim);
        for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        return WordVectors{std::move(vocab), Tensor(Shape{rows.size(), dim}, std::move(flat))};
    }
};

}  // namespace

WordVectors load_word_vectors(const std::filesystem::path& path, VectorFormat format,
                              std::optional<std::size_t> expected_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string header;
    std::getline(in, header);
    const auto [count, dim] = parse_header(header, path);
    if (expected_dim && *expected_dim != dim) {
        throw ConfigError(path.string() + ": vectors have dimension " + std::to_string(dim) + ", configured " +
                          std::to_string(*expected_dim));
    }
    VectorSink sink(dim);
    std::size_t records = 0;

    if (format == VectorFormat::Text) {
        std::string line;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(' ') == std::string::npos) continue;
            std::istringstream ls(line);
            std::string word;
            ls >> word;
            std::vector<double> v;
            v.reserve(dim);
            double x;
            while (ls >> x) v.push_back(x);
            if (!ls.eof() || v.size() != dim) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                                  " values for '" + word + "', got " + std::to_string(v.size()));
            }
            sink.put(word, std::move(v));
            ++records;
        }
    } else {
        std::vector<unsigned char> buf(dim * 4);
        for (std::size_t r = 0; r < count; ++r) {
            std::string word;
            int c;
            while ((c = in.get()) != EOF && (c == ' ' || c == '\n')) {
            }
            while (c != EOF && c != ' ') {
                word.push_back(static_cast<char>(c));
                c = in.get();
            }
            if (c == EOF || word.empty()) {
                throw FormatError(path.string() + ": truncated binary record " + std::to_string(r + 1));
            }
            if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
                throw FormatError(path.string() + ": truncated vector for '" + word + "' (record " +
                                  std::to_string(r + 1) + ")");
            }
            std::vector<double> v(dim);
            for (std::size_t d = 0; d < dim; ++d) v[d] = read_f32_le(buf.data() + 4 * d);
            sink.put(word, std::move(v));
            ++records;
        }
    }
    if (records != count) {
        throw FormatError(path.string() + ": header announces " + std::to_string(count) + " vectors, found " +
                          std::to_string(records));
    }
    return std::move(sink).finish();
}

Tensor pseudo_embedding_matrix(const Vocab& vocab, std::size_t dim, std::uint64_t seed) {
    Tensor m(Shape{vocab.size(), dim});
    for (std::uint32_t id = 1; id < vocab.size(); ++id) {
        // FNV-1a over the word bytes, mixed with the seed.
        std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
        for (unsigned char c : vocab.word(id)) {
            h ^= c;
            h *= 1099511628211ull;
        }
        Rng rng(h);
        auto row = m.row(id);
        double norm = 0.0;
        for (auto& x : row) {
            x = standard_normal(rng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : row) x /= norm;
    }
    return m;
}

Tensor embedding_rows(const Vocab& vocab, const WordVectors& source) {
    const std::size_t dim = source.dim();
    Tensor m(Shape{vocab.size(), dim});
    for (std::uint32_t id = 1; id < vocab.size(); ++id) {
        auto src = source.vocab.find(vocab.word(id));
        if (!src) throw ConfigError("word '" + vocab.word(id) + "' has no pretrained vector");
        auto from = source.matrix.row(*src);
        std::copy(from.begin(), from.end(), m.row(id).begin());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const bool word_char = c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
        if (word_char) {
            cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::optional<EncodedReview> encode_review(std::string_view text, const Vocab& vocab, std::size_t max_len) {
    if (max_len < kMinReviewWords) {
        throw ContractError("encode_review: max length must be at least " + std::to_string(kMinReviewWords));
    }
    EncodedReview enc;
    enc.tokens.reserve(max_len);
    for (const auto& w : tokenize(text)) {
        if (enc.tokens.size() == max_len) break;
        if (auto id = vocab.find(w)) enc.tokens.push_back(*id);
    }
    if (enc.tokens.size() < kMinReviewWords) return std::nullopt;
    enc.mask.assign(enc.tokens.size(), 1);
    enc.tokens.resize(max_len, Vocab::kPad);
    enc.mask.resize(max_len, 0);
    return enc;
}

std::vector<ReviewEntry> build_review_set(const DatasetSplits& splits, const Vocab& vocab, std::size_t max_len) {
    std::vector<ReviewEntry> out;
    for (const auto& t : splits.train) {
        if (t.source < 0 || static_cast<std::size_t>(t.source) >= splits.texts.size()) {
            throw ContractError("build_review_set: training triple has no review text reference (splits loaded "
                                "from disk carry no text)");
        }
        const auto& text = splits.texts[static_cast<std::size_t>(t.source)];
        if (!text) continue;
        if (auto enc = encode_review(*text, vocab, max_len)) {
            out.push_back(ReviewEntry{t.item, std::move(enc->tokens), std::move(enc->mask), t.rating});
        }
    }
    return out;
}

Vocab corpus_vocab(const DatasetSplits& splits, const Vocab* filter) {
    std::set<std::string> words;
    for (const auto& t : splits.train) {
        if (t.source < 0 || static_cast<std::size_t>(t.source) >= splits.texts.size()) continue;
        const auto& text = splits.texts[static_cast<std::size_t>(t.source)];
        if (!text) continue;
        for (auto& w : tokenize(*text)) {
            if (!filter || filter->find(w)) words.insert(std::move(w));
        }
    }
    Vocab v;
    for (const auto& w : words) v.add(w);
    return v;
}

// ---------------------------------------------------------------------------
// Persistence

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::uint32_t i = 1; i < vocab.size(); ++i) out << vocab.word(i) << '\n';
}

Vocab load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (v.find(line)) throw CorruptionError(path.string() + ": duplicate word '" + line + "'");
        v.add(line);
    }
    return v;
}

void save_review_set(const std::vector<ReviewEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& e : entries) {
        json j{{"item", e.item}, {"tokens", e.tokens}, {"rating", e.rating}};
        out << j.dump() << '\n';
    }
}

std::vector<ReviewEntry> load_review_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ReviewEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            ReviewEntry e;
            e.item = j.at("item").get<std::uint32_t>();
            e.tokens = j.at("tokens").get<std::vector<std::uint32_t>>();
            e.rating = j.at("rating").get<double>();
            e.mask.resize(e.tokens.size());
            std::size_t real = 0;
            for (std::size_t i = 0; i < e.tokens.size(); ++i) {
                e.mask[i] = e.tokens[i] != Vocab::kPad;
                real += e.mask[i];
            }
            if (real < kMinReviewWords) throw std::runtime_error("fewer than 3 real tokens");
            out.push_back(std::move(e));
        } catch (const std::exception& e) {
            throw CorruptionError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace r3
