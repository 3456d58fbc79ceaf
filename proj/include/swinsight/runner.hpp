#pragma once

// Experiment orchestration behind the command-line tool: fixture generation,
// training runs, evaluation, the train-set x test-set matrix, t-SNE of
// extracted features, and the consolidated summary.

#include <algorithm>
#include <cmath>
#include <cstdint>
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

#include "checkpoint.hpp"
#include "config.hpp"
#include "datapipe.hpp"
#include "metrics.hpp"
#include "svg.hpp"
#include "swin.hpp"
#include "training.hpp"
#include "tsne.hpp"

namespace swinsight {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr std::size_t kEvalBatchSize = 64;

namespace detail {

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Datasets and training sets

/// Loads one configured dataset, tags every sample with the configured id,
/// and assigns stratified splits. The result depends only on this dataset's
/// manifest, the ratios, and the seed.
inline DatasetManifest load_dataset(const ExperimentConfig& cfg, const std::string& id) {
    DatasetManifest m = load_manifest(cfg.manifest_of(id));
    for (auto& s : m.samples) s.dataset = id;
    return build_splits(m, cfg.split_ratios, cfg.train.seed);
}

/// Union of per-dataset manifests, subsampled to an exact class balance in
/// every split. Splitting happens per dataset first so that each dataset's
/// test split is the same one its standalone run sees.
inline DatasetManifest balanced_union(const std::vector<DatasetManifest>& parts, std::size_t per_class,
                                      const SplitRatios& ratios, std::uint64_t seed) {
    const DatasetManifest all = merge_manifests(parts);
    const auto quotas = split_sizes(per_class, ratios);
    DatasetManifest out;
    out.quarantine = all.quarantine;
    for (int s = 0; s < 3; ++s) {
        const Split split = static_cast<Split>(s);
        const DatasetManifest sub = all.subset(split);
        const std::size_t target = per_class > 0 ? quotas[s]
                                                 : std::min(sub.count(Label::Real), sub.count(Label::Cgi));
        const DatasetManifest kept = balance_classes(sub, target, mix_seed(seed, 0xba1a0ce0ULL + static_cast<std::uint64_t>(s)));
        out.samples.insert(out.samples.end(), kept.samples.begin(), kept.samples.end());
    }
    return out;
}

/// Training sets of a matrix run: each dataset alone, then the balanced union
/// of all of them when there are at least two.
inline std::vector<std::vector<std::string>> matrix_training_sets(const ExperimentConfig& cfg) {
    std::vector<std::vector<std::string>> sets;
    for (const auto& id : cfg.dataset_ids()) sets.push_back({id});
    if (cfg.datasets.size() >= 2) sets.push_back(cfg.dataset_ids());
    return sets;
}

struct TrainingSet {
    std::string name;
    DatasetManifest manifest;
};

inline TrainingSet make_training_set(const ExperimentConfig& cfg, const std::map<std::string, DatasetManifest>& datasets,
                                     const std::vector<std::string>& ids) {
    TrainingSet ts;
    ts.name = train_set_name(ids);
    if (ids.size() == 1) {
        ts.manifest = datasets.at(ids[0]);
    } else {
        std::vector<DatasetManifest> parts;
        for (const auto& id : ids) parts.push_back(datasets.at(id));
        ts.manifest = balanced_union(parts, cfg.per_class, cfg.split_ratios, cfg.train.seed);
    }
    return ts;
}

// ---------------------------------------------------------------------------
// CSV writers

inline std::string trace_csv(const TrainTrace& trace) {
    std::string s = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
        const auto& r = trace.epochs[e];
        s += std::to_string(e + 1) + "," + format_full(r.train_loss) + "," + format_full(r.train_accuracy) + "," +
             format_full(r.val_loss) + "," + format_full(r.val_accuracy) + "\n";
    }
    return s;
}

inline constexpr const char* kReportHeader = "train_set,test_set,accuracy,precision,recall,f1,auc";

struct ReportRow {
    std::string train_set, test_set;
    EvalReport report;
};

inline std::string report_line(const ReportRow& r, bool rounded) {
    auto f = [rounded](double v) { return rounded ? format_rounded(v) : format_full(v); };
    return r.train_set + "," + r.test_set + "," + f(r.report.accuracy) + "," + f(r.report.precision) + "," +
           f(r.report.recall) + "," + f(r.report.f1) + "," + f(r.report.auc);
}

inline void write_reports(const fs::path& dir, const std::vector<ReportRow>& rows) {
    std::string full = std::string(kReportHeader) + "\n", rounded = full;
    for (const auto& r : rows) {
        full += report_line(r, false) + "\n";
        rounded += report_line(r, true) + "\n";
    }
    detail::write_text(dir / "report.csv", full);
    detail::write_text(dir / "report_rounded.csv", rounded);
}

inline std::string roc_points_csv(const RocCurve& roc) {
    std::string s = "fpr,tpr,threshold\n";
    for (const auto& p : roc.points) s += format_full(p.fpr) + "," + format_full(p.tpr) + "," + format_full(p.threshold) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Training

template <typename T>
struct TrainOutcome {
    Checkpoint<T> checkpoint;
    std::vector<QuarantineEntry> quarantine;
};

/// Trains on the train split of `ts.manifest`, validating on its val split
/// after every epoch. Writes checkpoint.swck, trace.csv, curves.svg,
/// quarantine.csv and manifest.csv into `out`.
template <typename T>
TrainOutcome<T> run_training(const ExperimentConfig& cfg, const TrainingSet& ts, const fs::path& out,
                             std::ostream* log = nullptr) {
    detail::ensure_dir(out);
    write_manifest(ts.manifest, out / "manifest.csv", true);
    SampleStore store(cfg.model.image_size);
    const PreparedSplit train = prepare_split(ts.manifest, Split::Train, store);
    std::optional<PreparedSplit> val;
    if (ts.manifest.count({}, {}, Split::Val) > 0) val = prepare_split(ts.manifest, Split::Val, store);

    TrainOutcome<T> result;
    result.quarantine = ts.manifest.quarantine;
    result.quarantine.insert(result.quarantine.end(), train.quarantined.begin(), train.quarantined.end());
    if (val) result.quarantine.insert(result.quarantine.end(), val->quarantined.begin(), val->quarantined.end());
    write_quarantine_report(result.quarantine, out / "quarantine.csv");

    SwinModel<T> model(cfg.model, cfg.train.seed);
    AdamState<T> adam;
    Rng dropout_rng(mix_seed(cfg.train.seed, 0xd50d50ULL));
    TrainTrace trace;
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        BatchIterator<T> batches(train, cfg.train.batch_size, cfg.train.seed + epoch);
        const EpochStats stats = train_epoch(model, batches, adam, cfg.train, &dropout_rng);
        EpochRecord rec{stats.loss, stats.accuracy, std::nan(""), std::nan("")};
        if (val) {
            BatchIterator<T> vb(*val, kEvalBatchSize);
            const EvalResult ev = evaluate(model, vb);
            rec.val_loss = ev.loss;
            rec.val_accuracy = ev.accuracy;
        }
        trace.epochs.push_back(rec);
        if (log) {
            *log << ts.name << " epoch " << epoch + 1 << "/" << cfg.train.epochs << "  loss " << format_rounded(rec.train_loss, 4)
                 << "  acc " << format_rounded(rec.train_accuracy, 4) << "  val_loss " << format_rounded(rec.val_loss, 4)
                 << "  val_acc " << format_rounded(rec.val_accuracy, 4) << "\n"
                 << std::flush;
        }
    }

    Checkpoint<T>& ck = result.checkpoint;
    ck.config = cfg.model;
    ck.parameters = model.parameters();
    ck.adam = adam;
    ck.trace = trace;
    ck.seed = cfg.train.seed;
    ck.train_set = ts.name;
    save_checkpoint(out / "checkpoint.swck", ck);
    detail::write_text(out / "trace.csv", trace_csv(trace));
    detail::write_text(out / "curves.svg", render_training_curves(trace, "training on " + ts.name));
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

inline void check_class_map(const std::string& class_map) {
    if (class_map != default_class_map()) {
        std::string shown = class_map;
        std::replace(shown.begin(), shown.end(), '\n', ' ');
        throw DataError("checkpoint class map '" + shown + "' does not match manifest labels (0=real 1=cgi)");
    }
}

inline std::string test_set_name(const DatasetManifest& m) { return train_set_name(m.dataset_ids()); }

template <typename T>
struct EvalOutcome {
    ReportRow row;
    EvalResult result;
    PreparedSplit data;
};

/// Scores one split once and writes report.csv, report_rounded.csv,
/// roc_points.csv, roc.svg, scores.csv and quarantine.csv into `out`.
template <typename T>
EvalOutcome<T> run_evaluation(const SwinModel<T>& model, const std::string& train_set, const DatasetManifest& manifest,
                              Split split, const fs::path& out) {
    detail::ensure_dir(out);
    EvalOutcome<T> o;
    SampleStore store(model.config().image_size);
    o.data = prepare_split(manifest, split, store);
    write_quarantine_report(o.data.quarantined, out / "quarantine.csv");
    BatchIterator<T> batches(o.data, kEvalBatchSize);
    o.result = evaluate(model, batches);

    const auto scores = o.result.cgi_scores();
    o.row.train_set = train_set;
    o.row.test_set = test_set_name(manifest.subset(split));
    o.row.report = report_row(scores, o.result.labels);
    write_reports(out, {o.row});
    detail::write_text(out / "roc_points.csv", roc_points_csv(o.row.report.roc));
    detail::write_text(out / "roc.svg", render_roc(o.row.report.roc, "ROC: " + train_set + " on " + o.row.test_set));

    std::string s = "sample_index,path,label,dataset,score\n";
    for (std::size_t i = 0; i < o.result.size(); ++i) {
        const std::size_t idx = o.data.sample_indices[o.result.indices[i]];
        const Sample& smp = manifest.samples[idx];
        s += std::to_string(idx) + "," + detail::csv_safe(fs::absolute(smp.file).generic_string()) + "," + to_string(smp.label) + "," + smp.dataset + "," +
             format_full(scores[i]) + "\n";
    }
    detail::write_text(out / "scores.csv", s);
    return o;
}

// ---------------------------------------------------------------------------
// t-SNE

struct FeatureSet {
    Tensor<double> features;  // [n, d]
    std::vector<std::size_t> sample_indices;
    std::vector<int> labels;
    std::vector<std::string> datasets;
};

template <typename T>
FeatureSet extract_split_features(const SwinModel<T>& model, const DatasetManifest& manifest, Split split) {
    SampleStore store(model.config().image_size);
    const PreparedSplit data = prepare_split(manifest, split, store);
    FeatureSet fs;
    std::vector<double> rows;
    std::size_t dim = 0;
    BatchIterator<T> batches(data, kEvalBatchSize);
    while (auto b = batches.next()) {
        const Tensor<T> f = model.extract_features(b->images);
        dim = f.dim(1);
        rows.insert(rows.end(), f.data().begin(), f.data().end());
        for (std::size_t i = 0; i < b->size(); ++i) {
            const std::size_t idx = data.sample_indices[b->indices[i]];
            fs.sample_indices.push_back(idx);
            fs.labels.push_back(b->labels[i]);
            fs.datasets.push_back(manifest.samples[idx].dataset);
        }
    }
    fs.features = Tensor<double>({fs.labels.size(), dim}, std::move(rows));
    return fs;
}

/// Feature file: header `label,dataset,<feature columns...>`, one sample per
/// row, label real or cgi.
inline FeatureSet load_feature_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read features '" + path.string() + "'");
    std::string line;
    std::size_t line_no = 0, dim = 0;
    bool header = false;
    FeatureSet fs;
    std::vector<double> rows;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto f = detail::split_csv_line(t);
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        if (!header) {
            if (f.size() < 3 || f[0] != "label" || f[1] != "dataset") throw DataError(where + "header must start with label,dataset");
            dim = f.size() - 2;
            header = true;
            continue;
        }
        if (f.size() != dim + 2) throw DataError(where + "expected " + std::to_string(dim + 2) + " fields");
        const auto label = parse_label(f[0]);
        if (!label) throw DataError(where + "unknown label '" + f[0] + "'");
        for (std::size_t k = 0; k < dim; ++k) {
            try {
                std::size_t pos = 0;
                rows.push_back(std::stod(f[k + 2], &pos));
                if (pos != f[k + 2].size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw DataError(where + "bad number '" + f[k + 2] + "'");
            }
        }
        fs.sample_indices.push_back(fs.labels.size());
        fs.labels.push_back(static_cast<int>(*label));
        fs.datasets.push_back(f[1]);
    }
    if (!header || fs.labels.empty()) throw DataError(path.string() + ": no feature rows");
    fs.features = Tensor<double>({fs.labels.size(), dim}, std::move(rows));
    return fs;
}

/// Writes embedding.csv and tsne.svg into `out`.
inline Embedding run_feature_tsne(const FeatureSet& fs, const TsneOptions& opt, const fs::path& out,
                                  const std::string& title = "t-SNE of extracted features") {
    const std::size_t n = fs.labels.size();
    if (n < 4) throw DataError("t-SNE needs at least 4 samples, got " + std::to_string(n));
    detail::ensure_dir(out);
    const Embedding emb = run_tsne(fs.features, opt);
    std::string csv = "sample_index,x,y,label,dataset\n";
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < n; ++i) {
        csv += std::to_string(fs.sample_indices[i]) + "," + format_full(emb.y[2 * i]) + "," + format_full(emb.y[2 * i + 1]) + "," +
               kClassNames[fs.labels[i]] + "," + fs.datasets[i] + "\n";
        pts.emplace_back(emb.y[2 * i], emb.y[2 * i + 1]);
    }
    detail::write_text(out / "embedding.csv", csv);
    detail::write_text(out / "tsne.svg", render_scatter(pts, fs.labels, title));
    return emb;
}

// ---------------------------------------------------------------------------
// Commands

struct FixtureOptions {
    fs::path out;
    std::size_t n = 0;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    std::string dataset = "FX";
};

inline fs::path cmd_fixture(const FixtureOptions& o) {
    if (o.n == 0) throw ConfigError("--n must be at least 1");
    if (o.size == 0) throw ConfigError("--size must be at least 1");
    make_synthetic_fixture(o.out, o.n, o.size, o.seed, o.dataset);
    return o.out / "manifest.csv";
}

namespace detail {

inline void write_run_inputs(const ExperimentConfig& cfg, const std::map<std::string, DatasetManifest>& datasets,
                             const fs::path& out) {
    ensure_dir(out / "manifests");
    write_text(out / "config.snapshot", cfg.source_text);
    for (const auto& [id, m] : datasets) write_manifest(m, out / "manifests" / (id + ".csv"), true);
}

inline std::map<std::string, DatasetManifest> load_all_datasets(const ExperimentConfig& cfg) {
    std::map<std::string, DatasetManifest> out;
    for (const auto& id : cfg.dataset_ids()) out.emplace(id, load_dataset(cfg, id));
    return out;
}

}  // namespace detail

/// Trains one model on `train_on` (default: all datasets, balanced union when
/// more than one). Everything that can fail on inputs is checked before the
/// first step.
inline void cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    const auto datasets = detail::load_all_datasets(cfg);
    const auto ids = cfg.train_on.empty() ? cfg.dataset_ids() : cfg.train_on;
    const TrainingSet ts = make_training_set(cfg, datasets, ids);
    detail::write_run_inputs(cfg, datasets, cfg.output_dir);
    if (cfg.precision == Precision::F32) run_training<float>(cfg, ts, cfg.output_dir, log);
    else run_training<double>(cfg, ts, cfg.output_dir, log);
}

struct EvalOptions {
    fs::path checkpoint;
    fs::path manifest;
    Split split = Split::Test;
    fs::path out;
};

namespace detail {

template <typename T>
ReportRow eval_with(const EvalOptions& o) {
    const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
    check_class_map(ck.class_map);
    const DatasetManifest m = load_manifest(o.manifest);
    const SwinModel<T> model(ck.config, ck.parameters);
    return run_evaluation(model, ck.train_set, m, o.split, o.out).row;
}

}  // namespace detail

inline ReportRow cmd_eval(const EvalOptions& o) {
    return checkpoint_precision(o.checkpoint) == Precision::F32 ? detail::eval_with<float>(o) : detail::eval_with<double>(o);
}

struct TsneCommandOptions {
    std::optional<fs::path> checkpoint, manifest, features;
    Split split = Split::Test;
    fs::path out;
    TsneOptions tsne;
};

inline Embedding cmd_tsne(const TsneCommandOptions& o) {
    FeatureSet fs;
    std::string title = "t-SNE of extracted features";
    if (o.features) {
        fs = load_feature_csv(*o.features);
    } else {
        if (!o.checkpoint || !o.manifest) throw ConfigError("tsne needs --features, or --checkpoint with --manifest");
        const DatasetManifest m = load_manifest(*o.manifest);
        auto extract = [&](auto tag) {
            using T = decltype(tag);
            const Checkpoint<T> ck = load_checkpoint<T>(*o.checkpoint);
            check_class_map(ck.class_map);
            title += " (" + ck.train_set + ")";
            return extract_split_features(SwinModel<T>(ck.config, ck.parameters), m, o.split);
        };
        fs = checkpoint_precision(*o.checkpoint) == Precision::F32 ? extract(float{}) : extract(double{});
    }
    return run_feature_tsne(fs, o.tsne, o.out, title);
}

struct MatrixCell {
    std::string train_set, test_set;
    std::optional<EvalReport> report;
    std::string status = "ok";
};

inline std::string matrix_csv(const std::vector<MatrixCell>& cells) {
    std::string s = std::string(kReportHeader) + ",status\n";
    for (const auto& c : cells) {
        if (c.report) s += report_line({c.train_set, c.test_set, *c.report}, false) + ",ok\n";
        else s += c.train_set + "," + c.test_set + ",,,,,," + detail::csv_safe(c.status) + "\n";
    }
    return s;
}

inline std::string cell_dir_name(const std::string& prefix, const std::string& name) { return prefix + "_" + name; }

namespace detail {

template <typename T>
void run_matrix_row(const ExperimentConfig& cfg, const std::map<std::string, DatasetManifest>& datasets,
                    const std::vector<std::string>& ids, std::vector<MatrixCell>& cells, const TsneOptions& tsne,
                    std::ostream* log) {
    const std::string name = train_set_name(ids);
    const fs::path dir = cfg.output_dir / cell_dir_name("train", name);
    std::optional<SwinModel<T>> model;
    std::string failure;
    try {
        const TrainingSet ts = make_training_set(cfg, datasets, ids);
        auto outcome = run_training<T>(cfg, ts, dir, log);
        model.emplace(outcome.checkpoint.config, std::move(outcome.checkpoint.parameters));
    } catch (const Error& e) {
        failure = std::string("error: training failed: ") + e.what();
    }
    for (const auto& test_id : cfg.dataset_ids()) {
        MatrixCell cell{name, test_id, std::nullopt, "ok"};
        if (!model) {
            cell.status = failure;
        } else {
            try {
                const fs::path edir = dir / cell_dir_name("eval", test_id);
                const auto& m = datasets.at(test_id);
                cell.report = run_evaluation(*model, name, m, Split::Test, edir).row.report;
                run_feature_tsne(extract_split_features(*model, m, Split::Test), tsne, edir,
                                 "t-SNE: " + name + " features on " + test_id);
            } catch (const Error& e) {
                cell.status = std::string("error: ") + e.what();
            }
        }
        if (log) *log << "cell " << name << " -> " << test_id << ": " << (cell.report ? "ok" : cell.status) << "\n";
        cells.push_back(std::move(cell));
    }
}

}  // namespace detail

inline void cmd_report(const fs::path& run_dir, std::ostream* log = nullptr);

/// Trains every training set and evaluates each on every dataset's test split.
/// A failing cell is recorded and the run continues.
inline std::vector<MatrixCell> cmd_matrix(const ExperimentConfig& cfg, std::ostream* log = nullptr,
                                          const TsneOptions& tsne = {}) {
    const auto datasets = detail::load_all_datasets(cfg);
    detail::write_run_inputs(cfg, datasets, cfg.output_dir);
    std::vector<MatrixCell> cells;
    for (const auto& ids : matrix_training_sets(cfg)) {
        if (cfg.precision == Precision::F32) detail::run_matrix_row<float>(cfg, datasets, ids, cells, tsne, log);
        else detail::run_matrix_row<double>(cfg, datasets, ids, cells, tsne, log);
    }
    detail::write_text(cfg.output_dir / "matrix.csv", matrix_csv(cells));
    std::vector<ReportRow> rows;
    for (const auto& c : cells) {
        if (c.report) rows.push_back({c.train_set, c.test_set, *c.report});
    }
    write_reports(cfg.output_dir, rows);
    cmd_report(cfg.output_dir, nullptr);
    return cells;
}

// ---------------------------------------------------------------------------
// Summary

namespace detail {

struct SummaryRow {
    std::string train_set, test_set;
    std::vector<std::string> values;  // accuracy precision recall f1 auc, already rounded
};

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(read_text(path));
    std::string line;
    while (std::getline(is, line)) {
        if (!trim(line).empty()) rows.push_back(split_csv_line(trim(line)));
    }
    return rows;
}

inline std::vector<SummaryRow> read_report(const fs::path& path) {
    std::vector<SummaryRow> out;
    const auto rows = read_csv_rows(path);
    if (rows.empty() || rows[0].size() < 7 || rows[0][0] != "train_set") throw DataError(path.string() + ": not a report file");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() < 7) throw DataError(path.string() + ": short row " + std::to_string(i));
        SummaryRow r{rows[i][0], rows[i][1], {}};
        for (int k = 2; k < 7; ++k) r.values.push_back(format_rounded(std::stod(rows[i][k])));
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

/// Builds summary.md from whatever results the run directory holds. Missing
/// artifacts are listed; the summary is still written.
inline void cmd_report(const fs::path& run_dir, std::ostream* log) {
    if (!fs::is_directory(run_dir)) throw DataError("run directory '" + run_dir.string() + "' does not exist");
    std::vector<detail::SummaryRow> rows;
    std::vector<std::string> missing;
    std::vector<std::string> train_sets, test_sets;
    auto note = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    auto expect = [&](const fs::path& rel) {
        if (!fs::exists(run_dir / rel)) missing.push_back(rel.generic_string());
    };

    if (fs::exists(run_dir / "matrix.csv")) {
        const auto cells = detail::read_csv_rows(run_dir / "matrix.csv");
        for (std::size_t i = 1; i < cells.size(); ++i) {
            if (cells[i].size() < 2) continue;
            const std::string& tr = cells[i][0];
            const std::string& te = cells[i][1];
            note(train_sets, tr);
            note(test_sets, te);
            const fs::path tdir = cell_dir_name("train", tr);
            const fs::path edir = tdir / cell_dir_name("eval", te);
            if (i == 1 || cells[i - 1][0] != tr) {
                for (const char* f : {"checkpoint.swck", "trace.csv", "curves.svg"}) expect(tdir / f);
            }
            for (const char* f : {"report_rounded.csv", "roc_points.csv", "roc.svg", "embedding.csv", "tsne.svg"}) expect(edir / f);
            if (fs::exists(run_dir / edir / "report.csv")) {
                for (auto& r : detail::read_report(run_dir / edir / "report.csv")) rows.push_back(std::move(r));
            } else {
                const std::string status = cells[i].size() > 7 ? cells[i][7] : "";
                missing.push_back((edir / "report.csv").generic_string() + (status.empty() || status == "ok" ? "" : " (" + status + ")"));
            }
        }
    } else {
        std::vector<fs::path> reports;
        for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
            if (e.is_regular_file() && e.path().filename() == "report.csv") reports.push_back(e.path());
        }
        std::sort(reports.begin(), reports.end());
        for (const auto& p : reports) {
            for (auto& r : detail::read_report(p)) {
                note(train_sets, r.train_set);
                note(test_sets, r.test_set);
                rows.push_back(std::move(r));
            }
        }
        if (reports.empty()) missing.push_back("report.csv (or matrix.csv)");
        if (fs::exists(run_dir / "checkpoint.swck") || fs::exists(run_dir / "trace.csv")) {
            for (const char* f : {"checkpoint.swck", "trace.csv", "curves.svg"}) expect(f);
        }
    }

    std::string md = "# Results\n\nswinsight " + std::string(kToolVersion) + "\n\n";
    md += "| Train set | Test set | Accuracy | Precision | Recall | F1-score | AUC |\n";
    md += "|---|---|---|---|---|---|---|\n";
    for (const auto& tr : train_sets) {
        for (const auto& r : rows) {
            if (r.train_set != tr) continue;
            md += "| " + r.train_set + " | " + r.test_set;
            for (const auto& v : r.values) md += " | " + v;
            md += " |\n";
        }
    }
    if (!rows.empty() && test_sets.size() > 1) {
        md += "\nAccuracy by train set (rows) and test set (columns):\n\n| |";
        for (const auto& te : test_sets) md += " " + te + " |";
        md += "\n|---|";
        for (std::size_t k = 0; k < test_sets.size(); ++k) md += "---|";
        md += "\n";
        for (const auto& tr : train_sets) {
            md += "| " + tr + " |";
            for (const auto& te : test_sets) {
                std::string v = "n/a";
                for (const auto& r : rows) {
                    if (r.train_set == tr && r.test_set == te) v = r.values[0];
                }
                md += " " + v + " |";
            }
            md += "\n";
        }
    }
    if (!missing.empty()) {
        md += "\n## Missing artifacts\n\n";
        for (const auto& m : missing) md += "- " + m + "\n";
    }
    detail::write_text(run_dir / "summary.md", md);
    if (log) *log << "wrote " << (run_dir / "summary.md").string() << (missing.empty() ? "" : " (partial)") << "\n";
}

}  // namespace swinsight
