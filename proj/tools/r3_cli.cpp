// r3: preprocess, train, evaluate, bench, gradcheck, show-config.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "r3/baselines.hpp"
#include "r3/checkpoint.hpp"
#include "r3/data_ingest.hpp"
#include "r3/errors.hpp"
#include "r3/evalbench.hpp"
#include "r3/gradcheck.hpp"
#include "r3/text_pipeline.hpp"
#include "r3/training.hpp"
#include "r3/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitUsage = 2;

/// Raised for failed checks (gradcheck); maps to exit code 1.
struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration: flat key=value pairs. Defaults < config file < --set < flags.

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = [] {
        std::map<std::string, std::string> m{
            {"data", ""},
            {"vectors", ""},
            {"vectors_format", "text"},
            {"pseudo_embeddings", "0"},
            {"workdir", "r3-work"},
            {"model", "r3"},
            {"cutoff", std::to_string(r3::kDefaultDateCutoff)},
            {"kcore", "5"},
            {"valid_fraction", "0.1"},
            {"epochs", "50"},
            {"batches", "100"},
            {"batch_size", "1024"},
            {"warmup", "10"},
            {"threads", "1"},
            {"scaling", "false"},
            {"bench_k", "8,16"},
            {"bench_lens", "32,128,512"},
            {"bench_word_dim", "50"},
            {"gradcheck_k", "4"},
            {"gradcheck_len", "8"},
            {"gradcheck_dim", "6"},
            {"gradcheck_tol", "0.0001"},
            {"inject_fault", ""},
            {"resume", "false"},
        };
        for (auto& [k, v] : r3::TrainConfig{}.to_map()) {
            if (k == "max_epochs") continue;  // exposed as "epochs"
            m[k] = v;
        }
        return m;
    }();
    return d;
}

// Keys that shape the persisted splits and review store.
const std::vector<std::string> kDataKeys{"data",      "cutoff",  "kcore",          "valid_fraction",   "max_len",
                                         "vectors",   "vectors_format", "pseudo_embeddings", "split_seed"};

class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw r3::ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
        explicit_.insert(key);
    }
    void set_assignment(const std::string& kv, const std::string& origin) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw r3::ConfigError(origin + ": expected key=value, got '" + kv + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    void load_file(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw r3::IoError("cannot read config file " + path.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            set_assignment(line, path.string() + ":" + std::to_string(lineno));
        }
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }
    bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }
    std::size_t size(const std::string& key) const {
        try {
            std::size_t pos = 0;
            const auto& v = str(key);
            const auto x = std::stoull(v, &pos);
            if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
            return static_cast<std::size_t>(x);
        } catch (const std::exception&) {
            throw r3::ConfigError("config key '" + key + "': expected a non-negative integer, got '" + str(key) + "'");
        }
    }
    double number(const std::string& key) const {
        try {
            std::size_t pos = 0;
            const double x = std::stod(str(key), &pos);
            if (pos != str(key).size()) throw std::invalid_argument(str(key));
            return x;
        } catch (const std::exception&) {
            throw r3::ConfigError("config key '" + key + "': expected a number, got '" + str(key) + "'");
        }
    }
    bool flag(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw r3::ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
    }
    std::vector<std::size_t> size_list(const std::string& key) const {
        std::vector<std::size_t> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(std::stoull(item));
            } catch (const std::exception&) {
                throw r3::ConfigError("config key '" + key + "': bad list entry '" + item + "'");
            }
        }
        if (out.empty()) throw r3::ConfigError("config key '" + key + "': empty list");
        return out;
    }
    const std::map<std::string, std::string>& all() const { return values_; }
    void adopt(const std::string& key, const std::string& value) { values_[key] = value; }

    fs::path workdir() const { return fs::path(str("workdir")); }

    r3::TrainConfig train_config() const {
        auto m = values_;
        m["max_epochs"] = m["epochs"];
        auto c = r3::TrainConfig::from_map(m);
        c.validate();
        return c;
    }
    r3::PMFConfig pmf_config() const {
        auto m = values_;
        m["max_epochs"] = m["epochs"];
        auto c = r3::PMFConfig::from_map(m);
        c.validate();
        return c;
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> explicit_;
};

std::string hex(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

std::map<std::string, std::string> data_config(const RunConfig& c) {
    std::map<std::string, std::string> m;
    for (const auto& k : kDataKeys) m[k] = k == "split_seed" ? c.str("seed") : c.str(k);
    return m;
}

std::map<std::string, std::string> recorded_data_config(const std::map<std::string, std::string>& extra) {
    std::map<std::string, std::string> m;
    for (const auto& k : kDataKeys) {
        auto it = extra.find(k);
        if (it != extra.end()) m[k] = it->second;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Work directory helpers.

class WorkdirLock {
public:
    explicit WorkdirLock(const fs::path& dir) : path_(dir / ".r3.lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw r3::IoError("cannot create work dir " + dir.string() + ": " + ec.message());
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw r3::IoError("work dir " + dir.string() + " is locked by another run (" + path_.string() +
                              "); remove the file if no run is active");
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd_, pid.data(), pid.size()) < 0) { /* the lock still holds */ }
    }
    ~WorkdirLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw r3::IoError("cannot write " + path.string());
    out << text;
}

json run_manifest(const std::string& command, const RunConfig& c) {
    return json{{"tool", "r3"}, {"tool_version", r3::kVersion}, {"command", command}, {"config", c.all()}};
}

fs::path splits_dir(const RunConfig& c) { return c.workdir() / "splits"; }
fs::path checkpoint_path(const RunConfig& c) { return c.workdir() / (c.str("model") + ".ckpt"); }

void check_model_kind(const RunConfig& c) {
    const auto& m = c.str("model");
    if (m != "r3" && m != "pmf" && m != "stats") throw r3::ConfigError("model must be r3, pmf or stats, got '" + m + "'");
}

/// Loads persisted splits and reconciles data keys with what preprocess recorded.
r3::DatasetSplits load_workdir_splits(RunConfig& c) {
    const auto dir = splits_dir(c);
    if (!fs::exists(dir / "manifest.json")) {
        throw r3::IoError("no preprocessed splits in " + dir.string() + " (run 'r3 preprocess' first)");
    }
    auto splits = r3::load_splits(dir);
    const auto& recorded = splits.manifest.extra;
    std::vector<std::string> drift;
    for (const auto& key : kDataKeys) {
        auto it = recorded.find(key);
        if (it == recorded.end()) continue;
        const std::string own = key == "split_seed" ? c.str("seed") : c.str(key);
        const bool checked = key == "split_seed" ? false : c.is_explicit(key);
        if (checked && own != it->second) {
            drift.push_back(key + " (splits: '" + it->second + "', now: '" + own + "')");
        }
        if (key != "split_seed") c.adopt(key, it->second);
    }
    if (!drift.empty()) {
        std::string msg = "config fingerprint differs from the splits manifest; refusing to continue:";
        for (const auto& d : drift) msg += "\n  " + d;
        throw r3::ConfigError(msg);
    }
    auto fp = recorded.find("fingerprint");
    if (fp != recorded.end() && fp->second != hex(r3::config_fingerprint(recorded_data_config(recorded)))) {
        throw r3::CorruptionError("splits manifest fingerprint does not match its recorded settings");
    }
    return splits;
}

r3::Tensor word_embeddings(const RunConfig& c, const r3::Vocab& vocab) {
    const std::size_t pseudo = c.size("pseudo_embeddings");
    if (pseudo > 0) return r3::pseudo_embedding_matrix(vocab, pseudo, 0);
    if (c.str("vectors").empty()) {
        throw r3::ConfigError("no word vectors: pass --vectors PATH or --pseudo-embeddings DIM");
    }
    const auto format = c.str("vectors_format") == "binary" ? r3::VectorFormat::Binary : r3::VectorFormat::Text;
    return r3::embedding_rows(vocab, r3::load_word_vectors(c.str("vectors"), format));
}

std::string stats_table(const r3::DatasetStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%10s %10s %10s %12s\n%10zu %10zu %10zu %12.6g\n", "users", "items", "ratings",
                  "sparsity", s.users, s.items, s.ratings, s.sparsity);
    return buf;
}

// ---------------------------------------------------------------------------
// Commands.

int cmd_preprocess(RunConfig& c) {
    if (c.str("data").empty()) throw r3::ConfigError("preprocess needs --data PATH");
    if (!fs::exists(c.str("data"))) throw r3::IoError("input file not found: " + c.str("data"));
    WorkdirLock lock(c.workdir());

    const std::size_t pseudo = c.size("pseudo_embeddings");
    if (pseudo == 0 && c.str("vectors").empty()) {
        throw r3::ConfigError("preprocess needs --vectors PATH or --pseudo-embeddings DIM to build the vocabulary");
    }
    auto parsed = r3::parse_jsonl(fs::path(c.str("data")));
    std::cerr << "parsed " << parsed.reviews.size() << " records (" << parsed.malformed << " malformed of "
              << parsed.lines << " lines)\n";

    r3::PipelineOptions opts;
    opts.cutoff = std::stoll(c.str("cutoff"));
    opts.k = c.size("kcore");
    opts.valid_fraction = c.number("valid_fraction");
    opts.seed = c.size("seed");
    auto splits = r3::build_splits(std::move(parsed.reviews), opts);

    r3::Vocab vocab;
    if (pseudo > 0) {
        vocab = r3::corpus_vocab(splits);
    } else {
        const auto format = c.str("vectors_format") == "binary" ? r3::VectorFormat::Binary : r3::VectorFormat::Text;
        auto vectors = r3::load_word_vectors(c.str("vectors"), format);
        vocab = r3::corpus_vocab(splits, &vectors.vocab);
    }
    const std::size_t max_len = c.size("max_len");
    auto reviews = r3::build_review_set(splits, vocab, max_len);

    auto data = data_config(c);
    for (const auto& [k, v] : data) splits.manifest.extra[k] = v;
    splits.manifest.extra["fingerprint"] = hex(r3::config_fingerprint(data));
    splits.manifest.extra["vocab_size"] = std::to_string(vocab.size());
    splits.manifest.extra["review_entries"] = std::to_string(reviews.size());

    const auto dir = splits_dir(c);
    r3::persist_splits(splits, dir);
    r3::save_vocab(vocab, c.workdir() / "vocab.txt");
    r3::save_review_set(reviews, c.workdir() / "reviews.jsonl");

    const auto st = splits.stats();
    json stats{{"users", st.users}, {"items", st.items}, {"ratings", st.ratings}, {"sparsity", st.sparsity}};
    write_text(c.workdir() / "stats.json", stats.dump(2) + "\n");
    auto manifest = run_manifest("preprocess", c);
    manifest["outputs"] = {"splits/", "vocab.txt", "reviews.jsonl", "stats.json"};
    manifest["stats"] = stats;
    manifest["review_entries"] = reviews.size();
    manifest["vocab_size"] = vocab.size();
    write_text(c.workdir() / "preprocess_manifest.json", manifest.dump(2) + "\n");

    std::cerr << stats_table(st);
    std::cout << stats.dump() << "\n";
    return kExitOk;
}

void write_log(const fs::path& path, const std::vector<r3::EpochLog>& log) {
    std::ostringstream os;
    for (const auto& e : log) {
        os << json{{"epoch", e.epoch},
                   {"rating_loss", e.rating_loss},
                   {"review_loss", e.review_loss},
                   {"rating_weight", e.rating_weight},
                   {"review_weight", e.review_weight},
                   {"train_rmse", e.train_rmse},
                   {"valid_rmse", e.valid_rmse},
                   {"best", e.best}}
                  .dump()
           << "\n";
    }
    write_text(path, os.str());
}

int cmd_train(RunConfig& c) {
    check_model_kind(c);
    WorkdirLock lock(c.workdir());
    auto splits = load_workdir_splits(c);
    const auto model = c.str("model");
    const auto ckpt = checkpoint_path(c);
    std::map<std::string, std::string> extra{{"data_fingerprint", splits.manifest.extra["fingerprint"]}};
    json summary;

    if (model == "stats") {
        auto m = r3::fit_stats(splits.train, splits.num_users(), splits.num_items());
        r3::StatsPredictor p(m);
        double valid = 0.0;
        if (!splits.validation.empty()) valid = r3::evaluate(p, splits.validation, "validation").rmse;
        auto cp = r3::stats_checkpoint(m, extra);
        cp.best_valid_rmse = valid;
        r3::save_checkpoint(cp, ckpt);
        summary = {{"model", model}, {"valid_rmse", valid}};
    } else if (model == "pmf") {
        auto cfg = c.pmf_config();
        auto r = r3::train_pmf(splits, cfg);
        r3::save_checkpoint(r3::pmf_checkpoint(r.model, r.optimizer, cfg, r.best_epoch, r.best_valid_rmse, extra),
                            ckpt);
        write_log(c.workdir() / "pmf_train_log.jsonl", r.log);
        summary = {{"model", model}, {"best_epoch", r.best_epoch}, {"valid_rmse", r.best_valid_rmse}};
    } else {
        auto cfg = c.train_config();
        auto vocab = r3::load_vocab(c.workdir() / "vocab.txt");
        auto reviews = r3::load_review_set(c.workdir() / "reviews.jsonl");
        r3::TrainResult r;
        if (c.flag("resume") && fs::exists(ckpt)) {
            auto cp = r3::load_checkpoint(ckpt);
            auto it = cp.config.find("data_fingerprint");
            if (it == cp.config.end() || it->second != extra["data_fingerprint"]) {
                throw r3::ConfigError("checkpoint " + ckpt.string() + " was trained on different splits");
            }
            auto state = r3::restore_r3(cp);
            std::cerr << "resuming from epoch " << cp.epoch << " (validation rmse " << cp.best_valid_rmse << ")\n";
            r = r3::resume_training(splits, reviews, std::move(state.model), std::move(state.optimizer), cfg,
                                    cp.epoch, cp.best_valid_rmse);
        } else {
            r = r3::train(splits, reviews, word_embeddings(c, vocab), cfg);
        }
        r3::save_checkpoint(r3::r3_checkpoint(r.model, r.optimizer, cfg, r.best_epoch, r.best_valid_rmse, extra),
                            ckpt);
        write_log(c.workdir() / "r3_train_log.jsonl", r.log);
        for (const auto& e : r.log) {
            std::fprintf(stderr, "epoch %3zu  L_D %.4f  L_R %.4f  w_D %.3f  w_R %.3f  valid %.4f%s\n", e.epoch,
                         e.rating_loss, e.review_loss, e.rating_weight, e.review_weight, e.valid_rmse,
                         e.best ? "  *best" : "");
        }
        summary = {{"model", model}, {"best_epoch", r.best_epoch}, {"valid_rmse", r.best_valid_rmse}};
    }
    auto manifest = run_manifest("train", c);
    manifest["checkpoint"] = ckpt.filename().string();
    manifest["result"] = summary;
    write_text(c.workdir() / (model + "_train_manifest.json"), manifest.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

/// A loaded model of any kind behind the Predictor interface.
struct LoadedModel {
    std::optional<r3::RestoredR3> r3;
    std::optional<r3::RestoredPMF> pmf;
    std::optional<r3::StatsModel> stats;
    std::unique_ptr<r3::Predictor> predictor;
    std::size_t k = 0;
    std::size_t users = 0;
    std::size_t items = 0;
};

LoadedModel load_model(const RunConfig& c, unsigned threads = 1) {
    check_model_kind(c);
    const auto path = checkpoint_path(c);
    if (!fs::exists(path)) throw r3::IoError("checkpoint not found: " + path.string() + " (run 'r3 train' first)");
    auto cp = r3::load_checkpoint(path);
    LoadedModel m;
    if (cp.kind != c.str("model")) {
        throw r3::CorruptionError("checkpoint " + path.string() + " holds a '" + cp.kind + "' model");
    }
    if (cp.kind == "r3") {
        m.r3 = r3::restore_r3(cp);
        m.predictor = std::make_unique<r3::R3Predictor>(m.r3->model.rating, m.r3->model.seen, threads);
        m.k = m.r3->model.rating.k();
        m.users = m.r3->model.rating.num_users();
        m.items = m.r3->model.rating.num_items();
    } else if (cp.kind == "pmf") {
        m.pmf = r3::restore_pmf(cp);
        m.predictor = std::make_unique<r3::PMFPredictor>(m.pmf->model);
        m.k = m.pmf->model.k;
        m.users = m.pmf->model.num_users();
        m.items = m.pmf->model.num_items();
    } else {
        m.stats = r3::restore_stats(cp);
        m.predictor = std::make_unique<r3::StatsPredictor>(*m.stats);
        m.users = m.stats->user_offset.size();
        m.items = m.stats->item_offset.size();
    }
    return m;
}

int cmd_evaluate(RunConfig& c) {
    WorkdirLock lock(c.workdir());
    auto splits = load_workdir_splits(c);
    auto m = load_model(c);
    std::ostringstream lines;
    std::fprintf(stderr, "%-12s %10s %8s %8s\n", "split", "rmse", "scored", "skipped");
    for (auto [name, split] : {std::pair{"validation", &splits.validation}, std::pair{"test", &splits.test}}) {
        if (split->empty()) continue;
        auto r = r3::evaluate(*m.predictor, *split, name);
        auto j = json::parse(r.to_json());
        j["model"] = c.str("model");
        lines << j.dump() << "\n";
        std::fprintf(stderr, "%-12s %10.6f %8zu %8zu\n", name, r.rmse, r.scored, r.skipped);
    }
    write_text(c.workdir() / ("eval_" + c.str("model") + ".jsonl"), lines.str());
    auto manifest = run_manifest("evaluate", c);
    write_text(c.workdir() / ("eval_" + c.str("model") + "_manifest.json"), manifest.dump(2) + "\n");
    std::cout << lines.str();
    return kExitOk;
}

int cmd_bench(RunConfig& c) {
    r3::BenchOptions o;
    o.batch_size = c.size("batch_size");
    o.batches = c.size("batches");
    o.warmup = c.size("warmup");
    o.seed = c.size("seed");
    const auto threads = static_cast<unsigned>(c.size("threads"));
    std::vector<r3::LatencyReport> reports;
    WorkdirLock lock(c.workdir());
    if (c.flag("scaling")) {
        r3::ScalingOptions s;
        s.k_values = c.size_list("bench_k");
        s.review_lens = c.size_list("bench_lens");
        s.word_dim = c.size("bench_word_dim");
        s.rating = o;
        reports = r3::bench_scaling(s);
    } else {
        auto m = load_model(c, threads);
        auto r = r3::bench_latency(*m.predictor, m.users, m.items, m.k, o);
        r.threads = threads;
        reports.push_back(r);
    }
    std::ostringstream lines;
    for (const auto& r : reports) lines << r.to_json() << "\n";
    const std::string stem = c.flag("scaling") ? "bench_scaling" : "bench_" + c.str("model");
    write_text(c.workdir() / (stem + ".jsonl"), lines.str());
    write_text(c.workdir() / (stem + "_manifest.json"), run_manifest("bench", c).dump(2) + "\n");
    std::cerr << r3::format_table(reports);
    std::cout << lines.str();
    return kExitOk;
}

std::optional<r3::OpKind> parse_op(const std::string& name) {
    if (name.empty()) return std::nullopt;
    for (std::size_t i = 0; i < static_cast<std::size_t>(r3::OpKind::Count_); ++i) {
        const auto k = static_cast<r3::OpKind>(i);
        if (name == r3::op_name(k)) return k;
    }
    throw r3::ConfigError("unknown primitive '" + name + "' for --inject-fault");
}

int cmd_gradcheck(RunConfig& c) {
    WorkdirLock lock(c.workdir());
    r3::GradCheckShape shape;
    shape.k = c.size("gradcheck_k");
    shape.review_len = c.size("gradcheck_len");
    shape.word_dim = c.size("gradcheck_dim");
    auto instance = r3::make_gradcheck_instance(shape, c.size("seed"));
    r3::GradCheckOptions opts;
    opts.tol = c.number("gradcheck_tol");
    opts.max_coords = 0;
    opts.seed = c.size("seed");

    const auto fault = parse_op(c.str("inject_fault"));
    if (fault) r3::set_backward_fault(*fault, 2.0);
    r3::GradCheckReport report;
    try {
        report = r3::check_r3_gradients(instance, opts);
    } catch (...) {
        r3::set_backward_fault(std::nullopt);
        throw;
    }
    r3::set_backward_fault(std::nullopt);

    json params = json::array();
    for (const auto& p : report.params) {
        params.push_back({{"name", p.name}, {"max_rel_error", p.max_rel_error}, {"coords", p.coords_checked}});
        std::fprintf(stderr, "%-22s %12.3e %s\n", p.name.c_str(), p.max_rel_error,
                     p.max_rel_error <= report.tol ? "ok" : "FAIL");
    }
    json out{{"passed", report.passed()}, {"tol", report.tol}, {"max_rel_error", report.max_rel_error()},
             {"params", params}, {"inject_fault", c.str("inject_fault")}};
    write_text(c.workdir() / "gradcheck.json", out.dump(2) + "\n");
    std::cout << out.dump() << "\n";
    if (!report.passed()) throw CheckFailed("gradient check failed: max relative error " +
                                            std::to_string(report.max_rel_error()));
    return kExitOk;
}

int cmd_show_config(RunConfig& c) {
    for (const auto& [k, v] : c.all()) std::cout << k << "=" << v << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Command line.

struct FlagSpec {
    const char* flag;
    const char* key;
    const char* help;
};

const FlagSpec kFlags[] = {
    {"--data", "data", "raw JSON-lines reviews"},
    {"--vectors", "vectors", "word2vec-format vectors"},
    {"--vectors-format", "vectors_format", "text or binary"},
    {"--workdir", "workdir", "work directory"},
    {"--model", "model", "r3, pmf or stats"},
    {"--k", "k", "latent rank K"},
    {"--max-len", "max_len", "review length L"},
    {"--lambda", "lambda", "L2 weight"},
    {"--lr", "lr", "Adam learning rate"},
    {"--seed", "seed", "random seed"},
    {"--epochs", "epochs", "maximum epochs"},
    {"--patience", "patience", "early-stopping patience"},
    {"--pseudo-embeddings", "pseudo_embeddings", "use deterministic random word vectors of this dimension"},
    {"--batches", "batches", "timed benchmark batches"},
    {"--batch-size", "batch_size", "benchmark batch size"},
    {"--warmup", "warmup", "untimed warmup batches"},
    {"--threads", "threads", "benchmark threads"},
    {"--inject-fault", "inject_fault", "gradcheck: corrupt the backward rule of this primitive"},
};

int run(int argc, char** argv) {
    CLI::App app{"R3 rating prediction: preprocess, train, evaluate, benchmark"};
    app.set_version_flag("--version", std::string(r3::kVersion));
    app.require_subcommand(1);

    struct Sub {
        CLI::App* app;
        int (*fn)(RunConfig&);
    };
    std::vector<Sub> subs{
        {app.add_subcommand("preprocess", "filter, split and encode a raw review dump"), cmd_preprocess},
        {app.add_subcommand("train", "train r3, pmf or stats on preprocessed splits"), cmd_train},
        {app.add_subcommand("evaluate", "RMSE on validation and test splits"), cmd_evaluate},
        {app.add_subcommand("bench", "per-entry inference latency"), cmd_bench},
        {app.add_subcommand("gradcheck", "finite-difference check of the full R3 loss"), cmd_gradcheck},
        {app.add_subcommand("show-config", "print the effective configuration"), cmd_show_config},
    };

    std::string config_file;
    std::vector<std::string> assignments;
    std::map<std::string, std::string> flag_values;
    bool resume = false, scaling = false;
    for (auto& s : subs) {
        s.app->add_option("--config", config_file, "key=value config file");
        s.app->add_option("--set", assignments, "override any config key (key=value), repeatable");
        for (const auto& f : kFlags) s.app->add_option(f.flag, flag_values[f.key], f.help);
        if (s.fn == cmd_train) s.app->add_flag("--resume", resume, "continue from the existing checkpoint");
        if (s.fn == cmd_bench) s.app->add_flag("--scaling", scaling, "sweep K and L on random models");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    RunConfig config;
    if (!config_file.empty()) config.load_file(config_file);
    for (const auto& a : assignments) config.set_assignment(a, "--set");
    for (auto& s : subs) {
        if (!s.app->parsed()) continue;
        for (const auto& f : kFlags) {
            if (s.app->get_option(f.flag)->count() > 0) config.set(f.key, flag_values[f.key]);
        }
        if (resume) config.set("resume", "true");
        if (scaling) config.set("scaling", "true");
        return s.fn(config);
    }
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CheckFailed& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return kExitCheck;
    } catch (const r3::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const r3::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const r3::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const r3::CorruptionError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheck;
    }
}
