#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "r3/baselines.hpp"
#include "r3/checkpoint.hpp"
#include "r3/data_ingest.hpp"
#include "r3/errors.hpp"
#include "r3/evalbench.hpp"
#include "r3/kernels.hpp"
#include "r3/tape.hpp"
#include "r3/text_pipeline.hpp"
#include "r3/training.hpp"
#include "r3/version.hpp"

namespace py = pybind11;
using namespace r3;

namespace {

using Triple = std::tuple<std::uint32_t, std::uint32_t, double>;

std::vector<RatingTriple> to_triples(const std::vector<Triple>& in) {
    std::vector<RatingTriple> out;
    out.reserve(in.size());
    std::int64_t ts = 0;
    for (const auto& [u, i, r] : in) {
        RatingTriple t;
        t.user = u;
        t.item = i;
        t.rating = r;
        t.timestamp = ts++;
        out.push_back(t);
    }
    return out;
}

std::vector<Triple> from_triples(const std::vector<RatingTriple>& in) {
    std::vector<Triple> out;
    out.reserve(in.size());
    for (const auto& t : in) out.emplace_back(t.user, t.item, t.rating);
    return out;
}

const std::vector<RatingTriple>& split_of(const DatasetSplits& d, const std::string& name) {
    if (name == "train") return d.train;
    if (name == "validation") return d.validation;
    if (name == "test") return d.test;
    throw ConfigError("unknown split '" + name + "' (train, validation, test)");
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["split"] = r.split;
    d["rmse"] = r.rmse;
    d["scored"] = r.scored;
    d["skipped"] = r.skipped;
    d["cold_users"] = r.cold_users;
    d["cold_items"] = r.cold_items;
    d["predictions"] = r.predictions;
    return d;
}

py::dict latency_dict(const LatencyReport& r) {
    py::dict d;
    d["kind"] = r.kind;
    d["k"] = r.k;
    d["review_len"] = r.review_len ? py::cast(*r.review_len) : py::none();
    d["batch_size"] = r.batch_size;
    d["batches"] = r.batches;
    d["threads"] = r.threads;
    d["mean_us"] = r.mean_us;
    d["p50_us"] = r.p50_us;
    d["p99_us"] = r.p99_us;
    d["entries_per_second"] = r.entries_per_second;
    d["text_primitive_calls"] = r.text_primitive_calls;
    return d;
}

std::vector<py::dict> log_dicts(const std::vector<EpochLog>& log) {
    std::vector<py::dict> out;
    for (const auto& e : log) {
        py::dict d;
        d["epoch"] = e.epoch;
        d["rating_loss"] = e.rating_loss;
        d["review_loss"] = e.review_loss;
        d["rating_weight"] = e.rating_weight;
        d["review_weight"] = e.review_weight;
        d["train_rmse"] = e.train_rmse;
        d["valid_rmse"] = e.valid_rmse;
        d["best"] = e.best;
        out.push_back(std::move(d));
    }
    return out;
}

// Shared serving surface for the Python model classes.
template <class Self>
void add_serving(py::class_<Self, std::shared_ptr<Self>>& cls) {
    cls.def("predict", [](const Self& s, std::uint32_t u, std::uint32_t i) { return s.predictor()->predict(u, i); })
        .def("predict_batch",
             [](const Self& s, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
                 std::vector<UserItem> in;
                 for (auto [u, i] : pairs) in.push_back(UserItem{u, i});
                 std::vector<double> out(in.size());
                 s.predictor()->predict_batch(in, out);
                 return out;
             })
        .def("is_cold",
             [](const Self& s, std::uint32_t u, std::uint32_t i) {
                 return s.predictor()->cold(u, i) != ColdReason::None;
             })
        .def(
            "evaluate",
            [](const Self& s, const DatasetSplits& d, const std::string& split) {
                return report_dict(evaluate(*s.predictor(), split_of(d, split), split));
            },
            py::arg("dataset"), py::arg("split") = "validation");
}

struct PyStats {
    StatsModel model;
    std::unique_ptr<Predictor> predictor() const { return std::make_unique<StatsPredictor>(model); }
};

struct PyPMF {
    PMFModel model;
    Adam optimizer;
    PMFConfig config;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_valid_rmse = 0.0;
    std::unique_ptr<Predictor> predictor() const { return std::make_unique<PMFPredictor>(model); }
};

struct PyR3 {
    R3Model model;
    Adam optimizer;
    TrainConfig config;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_valid_rmse = 0.0;
    std::unique_ptr<Predictor> predictor() const { return std::make_unique<R3Predictor>(model.rating, model.seen); }
};

}  // namespace

PYBIND11_MODULE(_r3, m) {
    m.doc() = "R3 rating prediction: review-regularized neural collaborative filtering";
    m.attr("__version__") = kVersion;

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<LookupError>(m, "LookupError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
    py::register_exception<OracleInvalid>(m, "OracleInvalid", base.ptr());

    py::class_<DatasetSplits>(m, "Dataset")
        .def_static(
            "from_jsonl",
            [](const std::filesystem::path& path, std::int64_t cutoff, std::size_t kcore, double valid_fraction,
               std::uint64_t seed) {
                PipelineOptions o;
                o.cutoff = cutoff;
                o.k = kcore;
                o.valid_fraction = valid_fraction;
                o.seed = seed;
                return build_splits(parse_jsonl(path).reviews, o);
            },
            py::arg("path"), py::arg("cutoff") = kDefaultDateCutoff, py::arg("kcore") = 5,
            py::arg("valid_fraction") = 0.1, py::arg("seed") = 0)
        .def_static(
            "from_triples",
            [](const std::vector<Triple>& train, const std::vector<Triple>& validation,
               const std::vector<Triple>& test, std::size_t num_users, std::size_t num_items) {
                DatasetSplits d;
                std::vector<std::string> users, items;
                for (std::size_t i = 0; i < num_users; ++i) users.push_back("u" + std::to_string(i));
                for (std::size_t i = 0; i < num_items; ++i) items.push_back("i" + std::to_string(i));
                std::sort(users.begin(), users.end());
                std::sort(items.begin(), items.end());
                d.user_map = IdMap(users);
                d.item_map = IdMap(items);
                d.train = to_triples(train);
                d.validation = to_triples(validation);
                d.test = to_triples(test);
                for (auto* part : {&d.train, &d.validation, &d.test})
                    for (const auto& t : *part)
                        if (t.user >= num_users || t.item >= num_items) throw ContractError("triple id out of range");
                return d;
            },
            py::arg("train"), py::arg("validation") = std::vector<Triple>{}, py::arg("test") = std::vector<Triple>{},
            py::arg("num_users"), py::arg("num_items"))
        .def_static("load", &load_splits, py::arg("directory"))
        .def("save", [](const DatasetSplits& d, const std::filesystem::path& dir) { persist_splits(d, dir); })
        .def_property_readonly("num_users", &DatasetSplits::num_users)
        .def_property_readonly("num_items", &DatasetSplits::num_items)
        .def_property_readonly("train", [](const DatasetSplits& d) { return from_triples(d.train); })
        .def_property_readonly("validation", [](const DatasetSplits& d) { return from_triples(d.validation); })
        .def_property_readonly("test", [](const DatasetSplits& d) { return from_triples(d.test); })
        .def_property_readonly("has_text", [](const DatasetSplits& d) { return !d.texts.empty(); })
        .def("stats", [](const DatasetSplits& d) {
            const auto s = d.stats();
            py::dict out;
            out["users"] = s.users;
            out["items"] = s.items;
            out["ratings"] = s.ratings;
            out["sparsity"] = s.sparsity;
            return out;
        });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("k", &TrainConfig::k)
        .def_readwrite("max_len", &TrainConfig::max_len)
        .def_readwrite("window", &TrainConfig::window)
        .def_readwrite("attention_dim", &TrainConfig::attention_dim)
        .def_readwrite("lambda_", &TrainConfig::lambda)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("rating_batch", &TrainConfig::rating_batch)
        .def_readwrite("review_batch", &TrainConfig::review_batch)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("use_reviews", &TrainConfig::use_reviews)
        .def_readwrite("learn_uncertainty", &TrainConfig::learn_uncertainty)
        .def("validate", &TrainConfig::validate)
        .def("to_dict", &TrainConfig::to_map);

    py::class_<PMFConfig>(m, "PMFConfig")
        .def(py::init<>())
        .def_readwrite("k", &PMFConfig::k)
        .def_readwrite("lambda_", &PMFConfig::lambda)
        .def_readwrite("lr", &PMFConfig::lr)
        .def_readwrite("batch", &PMFConfig::batch)
        .def_readwrite("max_epochs", &PMFConfig::max_epochs)
        .def_readwrite("patience", &PMFConfig::patience)
        .def_readwrite("seed", &PMFConfig::seed)
        .def("to_dict", &PMFConfig::to_map);

    py::class_<PyStats, std::shared_ptr<PyStats>> stats(m, "StatsModel");
    stats.def_property_readonly("alpha", [](const PyStats& s) { return s.model.alpha; })
        .def_property_readonly("user_offset", [](const PyStats& s) { return s.model.user_offset; })
        .def_property_readonly("item_offset", [](const PyStats& s) { return s.model.item_offset; })
        .def("save", [](const PyStats& s, const std::filesystem::path& p) {
            save_checkpoint(stats_checkpoint(s.model), p);
        });
    add_serving(stats);

    py::class_<PyPMF, std::shared_ptr<PyPMF>> pmf(m, "PMFModel");
    pmf.def_property_readonly("log", [](const PyPMF& s) { return log_dicts(s.log); })
        .def_readonly("best_epoch", &PyPMF::best_epoch)
        .def_readonly("best_valid_rmse", &PyPMF::best_valid_rmse)
        .def("save", [](PyPMF& s, const std::filesystem::path& p) {
            save_checkpoint(pmf_checkpoint(s.model, s.optimizer, s.config, s.best_epoch, s.best_valid_rmse), p);
        });
    add_serving(pmf);

    py::class_<PyR3, std::shared_ptr<PyR3>> r3m(m, "R3Model");
    r3m.def_property_readonly("log", [](const PyR3& s) { return log_dicts(s.log); })
        .def_readonly("best_epoch", &PyR3::best_epoch)
        .def_readonly("best_valid_rmse", &PyR3::best_valid_rmse)
        .def_property_readonly("config", [](const PyR3& s) { return s.config; })
        .def_property_readonly("k", [](const PyR3& s) { return s.model.rating.k(); })
        .def("save", [](PyR3& s, const std::filesystem::path& p) {
            save_checkpoint(r3_checkpoint(s.model, s.optimizer, s.config, s.best_epoch, s.best_valid_rmse), p);
        });
    add_serving(r3m);

    m.def(
        "fit_stats",
        [](const DatasetSplits& d) {
            return std::make_shared<PyStats>(PyStats{fit_stats(d.train, d.num_users(), d.num_items())});
        },
        py::arg("dataset"));

    m.def(
        "train_pmf",
        [](const DatasetSplits& d, const PMFConfig& cfg) {
            PMFTrainResult r;
            {
                py::gil_scoped_release release;
                r = train_pmf(d, cfg);
            }
            return std::make_shared<PyPMF>(
                PyPMF{std::move(r.model), std::move(r.optimizer), cfg, std::move(r.log), r.best_epoch,
                      r.best_valid_rmse});
        },
        py::arg("dataset"), py::arg("config") = PMFConfig{});

    m.def(
        "train_r3",
        [](const DatasetSplits& d, const TrainConfig& cfg, std::size_t pseudo_embeddings,
           std::optional<std::filesystem::path> vectors) {
            Vocab vocab;
            Tensor words;
            if (vectors) {
                auto wv = load_word_vectors(*vectors, vectors->extension() == ".bin" ? VectorFormat::Binary
                                                                                    : VectorFormat::Text);
                vocab = d.texts.empty() ? Vocab{} : corpus_vocab(d, &wv.vocab);
                words = embedding_rows(vocab, wv);
            } else {
                if (!d.texts.empty()) vocab = corpus_vocab(d);
                words = pseudo_embedding_matrix(vocab, pseudo_embeddings, 0);
            }
            std::vector<ReviewEntry> reviews;
            if (!d.texts.empty() && cfg.use_reviews) reviews = build_review_set(d, vocab, cfg.max_len);
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(d, reviews, std::move(words), cfg);
            }
            return std::make_shared<PyR3>(PyR3{std::move(r.model), std::move(r.optimizer), cfg, std::move(r.log),
                                               r.best_epoch, r.best_valid_rmse});
        },
        py::arg("dataset"), py::arg("config") = TrainConfig{}, py::arg("pseudo_embeddings") = 16,
        py::arg("vectors") = py::none(),
        "Train R3. Review text comes from datasets built with Dataset.from_jsonl; word vectors are loaded from "
        "`vectors` (word2vec .vec/.bin) or, without it, generated with dimension `pseudo_embeddings`.");

    m.def(
        "load_model",
        [](const std::filesystem::path& path) -> py::object {
            auto c = load_checkpoint(path);
            if (c.kind == "stats") return py::cast(std::make_shared<PyStats>(PyStats{restore_stats(c)}));
            if (c.kind == "pmf") {
                auto r = restore_pmf(c);
                return py::cast(std::make_shared<PyPMF>(
                    PyPMF{std::move(r.model), std::move(r.optimizer), r.config, {}, c.epoch, c.best_valid_rmse}));
            }
            auto r = restore_r3(c);
            return py::cast(std::make_shared<PyR3>(
                PyR3{std::move(r.model), std::move(r.optimizer), r.config, {}, c.epoch, c.best_valid_rmse}));
        },
        py::arg("path"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed, double tol, std::optional<std::string> fault) {
            auto inst = make_gradcheck_instance(GradCheckShape{}, seed);
            GradCheckOptions o;
            o.tol = tol;
            o.max_coords = 0;
            o.seed = seed;
            std::optional<BackwardFaultScope> scope;
            if (fault) {
                bool found = false;
                for (std::size_t i = 0; i < static_cast<std::size_t>(OpKind::Count_); ++i) {
                    if (op_name(static_cast<OpKind>(i)) == *fault) {
                        scope.emplace(static_cast<OpKind>(i), 2.0);
                        found = true;
                    }
                }
                if (!found) throw ConfigError("unknown primitive '" + *fault + "'");
            }
            auto report = check_r3_gradients(inst, o);
            py::dict out;
            out["passed"] = report.passed();
            out["max_rel_error"] = report.max_rel_error();
            py::dict per;
            for (const auto& p : report.params) per[py::str(p.name)] = p.max_rel_error;
            out["params"] = per;
            return out;
        },
        py::arg("seed") = 0, py::arg("tol") = 1e-4, py::arg("inject_fault") = py::none(),
        "Finite-difference check of the full R3 loss on a small synthetic instance.");

    m.def(
        "bench_scaling",
        [](std::vector<std::size_t> k_values, std::vector<std::size_t> review_lens, std::size_t batch_size,
           std::size_t batches, std::size_t rounds) {
            ScalingOptions s;
            s.k_values = std::move(k_values);
            s.review_lens = std::move(review_lens);
            s.rating.batch_size = batch_size;
            s.rating.batches = batches;
            s.rounds = rounds;
            std::vector<LatencyReport> reports;
            {
                py::gil_scoped_release release;
                reports = bench_scaling(s);
            }
            std::vector<py::dict> out;
            for (const auto& r : reports) out.push_back(latency_dict(r));
            return out;
        },
        py::arg("k_values") = std::vector<std::size_t>{8},
        py::arg("review_lens") = std::vector<std::size_t>{32, 128, 512}, py::arg("batch_size") = 1024,
        py::arg("batches") = 100, py::arg("rounds") = 1);

    m.def(
        "rmse", [](const std::vector<double>& p, const std::vector<double>& t) { return rmse(p, t); },
        py::arg("predictions"), py::arg("targets"));
}
