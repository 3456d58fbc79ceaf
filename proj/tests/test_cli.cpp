#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

using namespace swinsight;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

// A model small enough that a two-epoch run takes well under a second.
const char* kTinyModel =
    "[model]\n"
    "preset = swin-micro\n"
    "image_size = 8\n"
    "embed_dim = 8\n"
    "depths = 1,1\n"
    "num_heads = 2,2\n"
    "window_size = 2\n";

std::string config_text(const std::vector<std::pair<std::string, fs::path>>& datasets, const fs::path& out,
                        const std::string& train_extra = "", const std::string& data_extra = "") {
    std::string s = kTinyModel;
    s += "\n[train]\nlearning_rate = 0.001\nbatch_size = 8\nepochs = 2\nseed = 5\nprecision = f64\n" + train_extra;
    s += "\n[data]\nsplit_ratios = 4,1,1\n" + data_extra;
    s += "\n[datasets]\n";
    for (const auto& [id, p] : datasets) s += id + " = " + p.string() + "\n";
    s += "\n[output]\ndir = " + out.string() + "\n";
    return s;
}

ExperimentConfig write_config(const fs::path& file, const std::string& text) {
    std::ofstream(file, std::ios::trunc) << text;
    return load_experiment_config(file);
}

fs::path fixture(const fs::path& dir, std::size_t n, std::uint64_t seed, const std::string& id = "FX") {
    FixtureOptions o;
    o.out = dir;
    o.n = n;
    o.size = 8;
    o.seed = seed;
    o.dataset = id;
    return cmd_fixture(o);
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TsneOptions quick_tsne() {
    TsneOptions t;
    t.iterations = 300;
    return t;
}

}  // namespace

TEST(Config, ParsesAndNormalizes) {
    const auto cfg = parse_experiment_config(config_text({{"A", "a.csv"}, {"B", "b.csv"}}, "out"), "t.cfg");
    EXPECT_EQ(cfg.model.image_size, 8u);
    EXPECT_EQ(cfg.model.depths, (std::vector<std::size_t>{1, 1}));
    EXPECT_EQ(cfg.model.patch_size, 2u);  // from the preset
    EXPECT_EQ(cfg.train.epochs, 2u);
    EXPECT_EQ(cfg.precision, Precision::F64);
    EXPECT_NEAR(cfg.split_ratios[0], 4.0 / 6.0, 1e-15);
    EXPECT_NEAR(cfg.split_ratios[2], 1.0 / 6.0, 1e-15);
    EXPECT_EQ(cfg.dataset_ids(), (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(cfg.output_dir, fs::path("out"));
    EXPECT_EQ(train_set_name(cfg.dataset_ids()), "A+B");

    const auto commented = parse_experiment_config(
        "# header\n[train]   # section\nepochs = 3  # trailing\nseed = 7\t# tab\n; old style\n[datasets]\nA = dir/a#1.csv\n", "c.cfg");
    EXPECT_EQ(commented.train.epochs, 3u);
    EXPECT_EQ(commented.train.seed, 7u);
    EXPECT_EQ(commented.manifest_of("A"), fs::path("dir/a#1.csv"));
}

TEST(Config, RejectsBadInput) {
    const std::string base = config_text({{"A", "a.csv"}}, "out");
    auto fails = [](const std::string& text, const std::string& needle) {
        try {
            parse_experiment_config(text, "t.cfg");
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
            return;
        }
        ADD_FAILURE() << "accepted: " << needle;
    };
    fails(base + "[train]\nlearning_rat = 0.1\n", "t.cfg:25: unknown key");
    fails("[train]\nlearning_rat = 0.1\n", "learning_rat");
    fails(base + "[extras]\n", "unknown section");
    fails("[model]\nwindow = 4\n[datasets]\nA = a.csv\n", "window");
    fails("[train]\nepochs = 1\nepochs = 2\n[datasets]\nA = a.csv\n", "duplicate key");
    fails("[train]\nepochs = ten\n[datasets]\nA = a.csv\n", "epochs");
    fails("[train]\nepochs = 0\n[datasets]\nA = a.csv\n", "epochs");
    fails("[model]\npreset = swin-t-like\nimage_size = 100\n[datasets]\nA = a.csv\n", "not divisible");
    fails("[data]\ntrain_on = Z\n[datasets]\nA = a.csv\n", "unknown dataset");
    fails("[train]\nseed = 1\n", "no datasets");
    fails("[datasets]\nA,B = x.csv\n", "dataset id");

    TempDir dir("cfg");
    std::ofstream(dir / "c.cfg") << base;
    EXPECT_THROW(load_experiment_config(dir / "c.cfg"), ConfigError);  // a.csv does not exist
    EXPECT_THROW(load_experiment_config(dir / "absent.cfg"), ConfigError);
}

TEST(Fixture, WritesImagesAndIsReproducible) {
    TempDir a("cli_fx_a"), b("cli_fx_b");
    FixtureOptions o;
    o.out = a.path();
    o.n = 50;
    o.size = 32;
    o.seed = 7;
    EXPECT_EQ(cmd_fixture(o), a.path() / "manifest.csv");
    std::size_t pngs = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path())) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 100u);
    EXPECT_EQ(count_lines(slurp(a / "manifest.csv")), 101u);
    o.out = b.path();
    cmd_fixture(o);
    EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
    EXPECT_EQ(slurp(a / "cgi/cgi_00049.png"), slurp(b / "cgi/cgi_00049.png"));
    o.n = 0;
    EXPECT_THROW(cmd_fixture(o), ConfigError);
}

TEST(Train, ArtifactsAndDeterminism) {
    TempDir dir("cli_train");
    const auto manifest = fixture(dir / "fx", 12, 1);
    const std::string text = config_text({{"FX", manifest}}, dir / "run1");
    const auto cfg = write_config(dir / "c.cfg", text);
    cmd_train(cfg);
    for (const char* f : {"checkpoint.swck", "trace.csv", "curves.svg", "quarantine.csv", "manifest.csv", "config.snapshot",
                          "manifests/FX.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "run1" / f)) << f;
    }
    const auto trace = slurp(dir / "run1" / "trace.csv");
    EXPECT_EQ(trace.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0), 0u);
    EXPECT_EQ(count_lines(trace), 3u);
    EXPECT_EQ(slurp(dir / "run1" / "config.snapshot"), text);
    EXPECT_NE(slurp(dir / "run1" / "curves.svg").find("<svg"), std::string::npos);

    // The snapshot re-runs to the same result.
    auto again = load_experiment_config(dir / "run1" / "config.snapshot");
    again.output_dir = dir / "run2";
    cmd_train(again);
    EXPECT_EQ(slurp(dir / "run2" / "trace.csv"), trace);
    EXPECT_EQ(slurp(dir / "run2" / "checkpoint.swck"), slurp(dir / "run1" / "checkpoint.swck"));
}

TEST(Train, ZeroLearningRateGivesFlatTrace) {
    TempDir dir("cli_train_lr0");
    const auto manifest = fixture(dir / "fx", 12, 2);
    auto cfg = write_config(dir / "c.cfg", config_text({{"FX", manifest}}, dir / "run"));
    cfg.train.learning_rate = 0.0;
    cfg.train.epochs = 3;
    cmd_train(cfg);
    const auto ck = load_checkpoint<double>(dir / "run" / "checkpoint.swck");
    ASSERT_EQ(ck.trace.epochs.size(), 3u);
    for (const auto& e : ck.trace.epochs) {
        EXPECT_NEAR(e.train_loss, ck.trace.epochs[0].train_loss, 1e-12);
        EXPECT_EQ(e.val_loss, ck.trace.epochs[0].val_loss);
    }
    EXPECT_EQ(ck.parameters, SwinModel<double>(cfg.model, cfg.train.seed).parameters());
}

TEST(Train, InputErrorsBeforeTraining) {
    TempDir dir("cli_train_err");
    const auto manifest = fixture(dir / "fx", 2, 3);  // strata of 2 cannot be split
    const auto cfg = write_config(dir / "c.cfg", config_text({{"FX", manifest}}, dir / "run"));
    EXPECT_THROW(cmd_train(cfg), DataError);
    EXPECT_FALSE(fs::exists(dir / "run" / "checkpoint.swck"));
}

TEST(Eval, ReportRocAndRepeatability) {
    TempDir dir("cli_eval");
    const auto manifest = fixture(dir / "fx", 12, 4);
    cmd_train(write_config(dir / "c.cfg", config_text({{"FX", manifest}}, dir / "run")));
    EvalOptions o{dir / "run" / "checkpoint.swck", dir / "run" / "manifests" / "FX.csv", Split::Test, dir / "e1"};
    const auto row = cmd_eval(o);
    EXPECT_EQ(row.train_set, "FX");
    EXPECT_EQ(row.test_set, "FX");
    const auto report = slurp(dir / "e1" / "report.csv");
    EXPECT_EQ(report.rfind(std::string(kReportHeader) + "\n", 0), 0u);
    EXPECT_EQ(count_lines(report), 2u);
    std::istringstream lines(slurp(dir / "e1" / "report_rounded.csv"));
    std::string header, line;
    std::getline(lines, header);
    std::getline(lines, line);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    EXPECT_EQ(line, report_line(row, true));
    for (const char* f : {"roc_points.csv", "roc.svg", "scores.csv", "quarantine.csv"}) EXPECT_TRUE(fs::exists(dir / "e1" / f)) << f;
    // 2 real + 2 cgi test samples per the 4:1:1 split of 12.
    EXPECT_EQ(count_lines(slurp(dir / "e1" / "scores.csv")), 5u);

    o.out = dir / "e2";
    cmd_eval(o);
    for (const char* f : {"report.csv", "report_rounded.csv", "roc_points.csv", "roc.svg", "scores.csv"}) {
        EXPECT_EQ(slurp(dir / "e1" / f), slurp(dir / "e2" / f)) << f;
    }
}

TEST(Eval, PerfectSeparationGivesUnitAuc) {
    // Black images are real, white images are CGI. A head aligned with the
    // feature difference separates them perfectly.
    TempDir dir("cli_eval_perfect");
    DatasetManifest m;
    fs::create_directories(dir / "img");
    for (int i = 0; i < 6; ++i) {
        for (int c = 0; c < 2; ++c) {
            const std::string name = "img/" + std::string(kClassNames[c]) + std::to_string(i) + ".png";
            write_png(dir / name, RgbImage{8, 8, std::vector<std::uint8_t>(192, c == 0 ? 5 * i : 255 - 5 * i)});
            Sample s;
            s.path = name;
            s.file = fs::absolute(dir / name);
            s.label = static_cast<Label>(c);
            s.dataset = "BW";
            s.split = Split::Test;
            m.samples.push_back(s);
        }
    }
    write_manifest(m, dir / "m.csv");

    auto cfg = testing_support::tiny_config();
    SwinModel<double> model(cfg, 9);
    const auto data = prepare_split(m, Split::Test, 8);
    const std::size_t stride = data.sample_stride();
    Tensor<double> pair({2, 3, 8, 8});
    std::copy_n(data.pixels.begin(), stride, pair.data().begin());           // real0
    std::copy_n(data.pixels.begin() + stride, stride, pair.data().begin() + stride);  // cgi0
    const auto f = model.extract_features(pair);
    const std::size_t d = f.dim(1);
    auto& w = model.parameters().at("head.weight");
    auto& b = model.parameters().at("head.bias");
    double mid = 0;
    for (std::size_t k = 0; k < d; ++k) {
        w.at({k, 0}) = 0;
        w.at({k, 1}) = f.at({1, k}) - f.at({0, k});
        mid += w.at({k, 1}) * (f.at({1, k}) + f.at({0, k})) / 2;
    }
    b[0] = 0;
    b[1] = -mid;
    Checkpoint<double> ck;
    ck.config = cfg;
    ck.parameters = model.parameters();
    ck.train_set = "BW";
    save_checkpoint(dir / "bw.swck", ck);

    const auto row = cmd_eval({dir / "bw.swck", dir / "m.csv", Split::Test, dir / "eval"});
    EXPECT_EQ(row.report.auc, 1.0);
    EXPECT_EQ(row.report.accuracy, 1.0);
    EXPECT_NE(slurp(dir / "eval" / "report_rounded.csv").find("BW,BW,1.00,1.00,1.00,1.00,1.00"), std::string::npos);

    ck.class_map = "0=cgi\n1=real\n";
    save_checkpoint(dir / "swapped.swck", ck);
    EXPECT_THROW(cmd_eval({dir / "swapped.swck", dir / "m.csv", Split::Test, dir / "eval2"}), DataError);
}

TEST(Matrix, TwoDatasetsSixCellsAndBookkeeping) {
    TempDir dir("cli_matrix");
    const auto a = fixture(dir / "A", 12, 10, "A");
    const auto b = fixture(dir / "B", 15, 11, "B");
    const auto cfg = write_config(dir / "c.cfg", config_text({{"A", a}, {"B", b}}, dir / "run"));
    const auto cells = cmd_matrix(cfg, nullptr, quick_tsne());
    ASSERT_EQ(cells.size(), 6u);
    const std::vector<std::pair<std::string, std::string>> expect = {{"A", "A"},   {"A", "B"},   {"B", "A"},
                                                                     {"B", "B"},   {"A+B", "A"}, {"A+B", "B"}};
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(cells[i].train_set, expect[i].first);
        EXPECT_EQ(cells[i].test_set, expect[i].second);
        EXPECT_TRUE(cells[i].report.has_value()) << cells[i].status;
    }
    EXPECT_EQ(count_lines(slurp(dir / "run" / "matrix.csv")), 7u);
    EXPECT_EQ(count_lines(slurp(dir / "run" / "report_rounded.csv")), 7u);
    for (const char* sub : {"train_A", "train_B", "train_A+B"}) {
        EXPECT_TRUE(fs::exists(dir / "run" / sub / "checkpoint.swck")) << sub;
        EXPECT_TRUE(fs::exists(dir / "run" / sub / "eval_A" / "embedding.csv")) << sub;
        EXPECT_TRUE(fs::exists(dir / "run" / sub / "eval_B" / "tsne.svg")) << sub;
    }

    // The union is exactly balanced in every split.
    const auto union_m = load_manifest(dir / "run" / "train_A+B" / "manifest.csv");
    for (auto s : {Split::Train, Split::Val, Split::Test}) {
        EXPECT_EQ(union_m.count(Label::Real, {}, s), union_m.count(Label::Cgi, {}, s)) << to_string(s);
    }

    const auto summary = slurp(dir / "run" / "summary.md");
    EXPECT_NE(summary.find("| A+B | B |"), std::string::npos);
    EXPECT_EQ(summary.find("Missing artifacts"), std::string::npos) << summary;
    cmd_report(dir / "run");
    EXPECT_EQ(slurp(dir / "run" / "summary.md"), summary);
}

TEST(Matrix, SingleDatasetAndFailingCell) {
    TempDir dir("cli_matrix_err");
    const auto a = fixture(dir / "A", 12, 12, "A");
    const auto cfg1 = write_config(dir / "one.cfg", config_text({{"A", a}}, dir / "one"));
    EXPECT_EQ(cmd_matrix(cfg1, nullptr, quick_tsne()).size(), 1u);

    // Dataset B's images are all unreadable: its own row fails, the run goes on.
    const auto b = fixture(dir / "B", 12, 13, "B");
    for (const auto& e : fs::recursive_directory_iterator(dir / "B")) {
        if (e.path().extension() == ".png") std::ofstream(e.path(), std::ios::trunc) << "broken";
    }
    const auto cfg2 = write_config(dir / "two.cfg", config_text({{"A", a}, {"B", b}}, dir / "two"));
    const auto cells = cmd_matrix(cfg2, nullptr, quick_tsne());
    ASSERT_EQ(cells.size(), 6u);
    EXPECT_TRUE(cells[0].report.has_value());  // A on A
    EXPECT_FALSE(cells[1].report.has_value());  // A on B: nothing to score
    EXPECT_FALSE(cells[2].report.has_value());  // B could not train
    EXPECT_NE(cells[2].status.find("error"), std::string::npos);
    const auto matrix = slurp(dir / "two" / "matrix.csv");
    EXPECT_NE(matrix.find("B,A,,,,,,error"), std::string::npos) << matrix;
    const auto summary = slurp(dir / "two" / "summary.md");
    EXPECT_NE(summary.find("| A | A |"), std::string::npos);
    EXPECT_NE(summary.find("Missing artifacts"), std::string::npos);
}

TEST(Tsne, FeatureFileTwoClusters) {
    TempDir dir("cli_tsne");
    Rng rng(14);
    std::string csv = "label,dataset";
    for (int k = 0; k < 10; ++k) csv += ",f" + std::to_string(k);
    csv += "\n";
    for (int i = 0; i < 20; ++i) {
        const int c = i < 10 ? 0 : 1;
        csv += std::string(kClassNames[c]) + ",SYN";
        for (int k = 0; k < 10; ++k) csv += "," + format_full(rng.normal() + 5.0 * c);
        csv += "\n";
    }
    std::ofstream(dir / "f.csv") << csv;
    TsneCommandOptions o;
    o.features = dir / "f.csv";
    o.out = dir / "t1";
    o.tsne.seed = 2;
    const auto emb = cmd_tsne(o);
    std::vector<int> labels(20);
    for (int i = 0; i < 20; ++i) labels[i] = i < 10 ? 0 : 1;
    EXPECT_GT(cluster_separation(emb.y, labels), 3.0);

    const auto out = slurp(dir / "t1" / "embedding.csv");
    EXPECT_EQ(out.rfind("sample_index,x,y,label,dataset\n", 0), 0u);
    EXPECT_EQ(count_lines(out), 21u);
    const auto svg = slurp(dir / "t1" / "tsne.svg");
    EXPECT_NE(svg.find(">real<"), std::string::npos);
    EXPECT_NE(svg.find(">cgi<"), std::string::npos);
    EXPECT_NE(svg.find("#5b2a86"), std::string::npos);
    EXPECT_NE(svg.find("#f2c714"), std::string::npos);

    o.out = dir / "t2";
    cmd_tsne(o);
    EXPECT_EQ(slurp(dir / "t2" / "embedding.csv"), out);

    std::ofstream(dir / "small.csv") << "label,dataset,f\nreal,S,1\ncgi,S,2\nreal,S,3\n";
    o.features = dir / "small.csv";
    EXPECT_THROW(cmd_tsne(o), DataError);
    o.features.reset();
    EXPECT_THROW(cmd_tsne(o), ConfigError);
}

TEST(Tsne, FromCheckpoint) {
    TempDir dir("cli_tsne_ck");
    const auto manifest = fixture(dir / "fx", 24, 15);
    cmd_train(write_config(dir / "c.cfg", config_text({{"FX", manifest}}, dir / "run")));
    TsneCommandOptions o;
    o.checkpoint = dir / "run" / "checkpoint.swck";
    o.manifest = dir / "run" / "manifests" / "FX.csv";
    o.out = dir / "t";
    o.tsne = quick_tsne();
    cmd_tsne(o);
    EXPECT_EQ(count_lines(slurp(dir / "t" / "embedding.csv")), 1u + 8u);  // 4 + 4 test samples
}

TEST(Report, PartialRunListsMissing) {
    TempDir dir("cli_report");
    const auto manifest = fixture(dir / "fx", 12, 16);
    cmd_train(write_config(dir / "c.cfg", config_text({{"FX", manifest}}, dir / "run")));
    cmd_report(dir / "run");
    auto summary = slurp(dir / "run" / "summary.md");
    EXPECT_NE(summary.find("Missing artifacts"), std::string::npos);
    EXPECT_NE(summary.find("report.csv"), std::string::npos);

    cmd_eval({dir / "run" / "checkpoint.swck", dir / "run" / "manifests" / "FX.csv", Split::Test, dir / "run"});
    cmd_report(dir / "run");
    summary = slurp(dir / "run" / "summary.md");
    EXPECT_EQ(summary.find("Missing artifacts"), std::string::npos) << summary;
    EXPECT_NE(summary.find("| FX | FX |"), std::string::npos);
    EXPECT_THROW(cmd_report(dir / "nope"), DataError);
}

#ifdef SWINSIGHT_CLI_PATH
namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SWINSIGHT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Binary, ExitCodes) {
    TempDir dir("cli_bin");
    const std::string d = dir.path().string();
    EXPECT_EQ(run_cli("--version"), 0);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("fixture --out " + d + "/fx --n 0"), 1);
    EXPECT_EQ(run_cli("fixture --out " + d + "/fx --n 12 --size 8 --seed 3"), 0);
    EXPECT_EQ(run_cli("train --config " + d + "/missing.cfg"), 1);

    std::ofstream(dir / "c.cfg") << config_text({{"FX", dir / "fx" / "manifest.csv"}}, dir / "run");
    EXPECT_EQ(run_cli("train --config " + d + "/c.cfg"), 0);
    EXPECT_EQ(run_cli("eval --checkpoint " + d + "/run/checkpoint.swck --manifest " + d + "/run/manifests/FX.csv"), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "report.csv"));
    EXPECT_EQ(run_cli("report --run " + d + "/run"), 0);

    std::ofstream(dir / "bad.csv") << "path,label,dataset,split\nx.png,alien,FX,test\n";
    EXPECT_EQ(run_cli("eval --checkpoint " + d + "/run/checkpoint.swck --manifest " + d + "/bad.csv"), 2);
    std::ofstream(dir / "junk.swck") << "JUNKJUNKJUNKJUNK";
    EXPECT_EQ(run_cli("eval --checkpoint " + d + "/junk.swck --manifest " + d + "/run/manifests/FX.csv"), 2);

    std::string csv = "label,dataset,a,b\n";
    for (int i = 0; i < 12; ++i) csv += std::string(i % 2 ? "cgi" : "real") + ",S," + std::to_string(i) + "," + std::to_string(i * i % 7) + "\n";
    std::ofstream(dir / "f.csv") << csv;
    EXPECT_EQ(run_cli("tsne --features " + d + "/f.csv --out " + d + "/t --iterations 50"), 0);
    EXPECT_EQ(run_cli("tsne --features " + d + "/f.csv --out " + d + "/t --iterations 50 --learning-rate 1e305"), 3);
}
#endif
