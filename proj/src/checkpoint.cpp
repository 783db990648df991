#include "r3/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "r3/errors.hpp"

namespace r3 {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'R', '3', 'C', 'K', 'P', 'T', '\0', '\0'};
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_fingerprint(const std::map<std::string, std::string>& config) {
    std::string normalized;
    for (const auto& [k, v] : config) normalized += k + "=" + v + "\n";
    return fnv1a(normalized.data(), normalized.size());
}

std::uint64_t Checkpoint::fingerprint() const { return config_fingerprint(config); }

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw LookupError("checkpoint (" + kind + "): no tensor named '" + name + "'");
}

void Checkpoint::add(std::string name, Tensor t) {
    if (has(name)) throw ContractError("checkpoint: duplicate tensor '" + name + "'");
    tensors.emplace_back(std::move(name), std::move(t));
}

std::vector<std::string> Checkpoint::tensor_names() const {
    std::vector<std::string> out;
    for (const auto& [n, t] : tensors) out.push_back(n);
    return out;
}

namespace {

class Writer {
public:
    template <class T>
    void pod(T x) {
        buf_.append(reinterpret_cast<const char*>(&x), sizeof x);
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        buf_ += s;
    }
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& b, std::size_t end) : b_(b), end_(end) {}
    template <class T>
    T pod() {
        T x;
        take(&x, sizeof x);
        return x;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void take(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, b_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw CorruptionError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
    const std::string& b_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.pod(Checkpoint::kVersion);
    w.pod(c.fingerprint());
    w.str(c.kind);
    w.pod(c.epoch);
    w.pod(c.best_valid_rmse);
    w.pod(c.optimizer_steps);
    w.pod(static_cast<std::uint32_t>(c.config.size()));
    for (const auto& [k, v] : c.config) {
        w.str(k);
        w.str(v);
    }
    w.pod(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        w.str(name);
        w.pod(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d = 0; d < t.rank(); ++d) w.pod(static_cast<std::uint64_t>(t.dim(d)));
        w.raw(t.values().data(), t.size() * sizeof(double));
    }
    const std::uint64_t sum = fnv1a(w.buffer().data(), w.buffer().size());
    w.pod(sum);
    return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CorruptionError("checkpoint: bad magic");
    }
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (stored != fnv1a(bytes.data(), body)) throw CorruptionError("checkpoint: checksum mismatch");

    Reader r(bytes, body);
    char magic[sizeof kMagic];
    r.take(magic, sizeof magic);
    const auto version = r.pod<std::uint32_t>();
    if (version != Checkpoint::kVersion) {
        throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    const auto fingerprint = r.pod<std::uint64_t>();
    c.kind = r.str();
    c.epoch = r.pod<std::uint64_t>();
    c.best_valid_rmse = r.pod<double>();
    c.optimizer_steps = r.pod<std::uint64_t>();
    const auto n_config = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_config; ++i) {
        std::string k = r.str();
        c.config[k] = r.str();
    }
    if (c.fingerprint() != fingerprint) throw CorruptionError("checkpoint: config fingerprint mismatch");
    const auto n_tensors = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        Shape shape;
        std::size_t size = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
            if (shape.back() == 0 || size > (std::size_t{1} << 40) / shape.back()) {
                throw CorruptionError("checkpoint: implausible shape for tensor '" + name + "'");
            }
            size *= shape.back();
        }
        std::vector<double> data(size);
        r.take(data.data(), size * sizeof(double));
        c.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw CorruptionError("checkpoint: trailing bytes before checksum");
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(c);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace r3
