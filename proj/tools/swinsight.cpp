// swinsight: command-line driver.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include <swinsight/swinsight.hpp>

namespace {

using namespace swinsight;

int run(int argc, char** argv) {
    CLI::App app{"Swin-transformer CGI vs real image classifier"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    FixtureOptions fx;
    auto* fixture = app.add_subcommand("fixture", "write a synthetic PNG dataset and its manifest");
    fixture->add_option("--out", fx.out, "output directory")->required();
    fixture->add_option("--n", fx.n, "images per class")->required();
    fixture->add_option("--size", fx.size, "image side in pixels");
    fixture->add_option("--seed", fx.seed, "generator seed");
    fixture->add_option("--dataset", fx.dataset, "dataset id written into the manifest");

    std::string train_config, train_out;
    auto* train = app.add_subcommand("train", "train one model from a config file");
    train->add_option("--config", train_config, "experiment config")->required();
    train->add_option("--out", train_out, "override [output] dir");

    EvalOptions ev;
    std::string eval_split = "test";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split of a manifest");
    eval->add_option("--checkpoint", ev.checkpoint)->required();
    eval->add_option("--manifest", ev.manifest)->required();
    eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", ev.out, "output directory (default: the checkpoint's directory)");

    std::string matrix_config, matrix_out;
    auto* matrix = app.add_subcommand("matrix", "train every training set and evaluate on every test split");
    matrix->add_option("--config", matrix_config, "experiment config")->required();
    matrix->add_option("--out", matrix_out, "override [output] dir");

    TsneCommandOptions ts;
    std::string tsne_checkpoint, tsne_manifest, tsne_features, tsne_split = "test";
    auto* tsne = app.add_subcommand("tsne", "2-D t-SNE embedding of extracted features");
    tsne->add_option("--checkpoint", tsne_checkpoint);
    tsne->add_option("--manifest", tsne_manifest);
    tsne->add_option("--features", tsne_features, "CSV with header label,dataset,<features...>");
    tsne->add_option("--split", tsne_split)->check(CLI::IsMember({"train", "val", "test"}));
    tsne->add_option("--out", ts.out)->required();
    tsne->add_option("--perplexity", ts.tsne.perplexity);
    tsne->add_option("--iterations", ts.tsne.iterations);
    tsne->add_option("--learning-rate", ts.tsne.learning_rate);
    tsne->add_option("--seed", ts.tsne.seed);

    std::string report_run;
    auto* report = app.add_subcommand("report", "write summary.md for a run directory");
    report->add_option("--run", report_run)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*fixture) {
        std::cout << cmd_fixture(fx).string() << "\n";
    } else if (*train) {
        auto cfg = load_experiment_config(train_config);
        if (!train_out.empty()) cfg.output_dir = train_out;
        cmd_train(cfg, &std::cerr);
        std::cout << (cfg.output_dir / "checkpoint.swck").string() << "\n";
    } else if (*eval) {
        ev.split = *parse_split(eval_split);
        if (ev.out.empty()) ev.out = ev.checkpoint.parent_path().empty() ? "." : ev.checkpoint.parent_path();
        const auto row = cmd_eval(ev);
        std::cout << kReportHeader << "\n" << report_line(row, true) << "\n";
    } else if (*matrix) {
        auto cfg = load_experiment_config(matrix_config);
        if (!matrix_out.empty()) cfg.output_dir = matrix_out;
        const auto cells = cmd_matrix(cfg, &std::cerr);
        std::cout << matrix_csv(cells);
    } else if (*tsne) {
        if (!tsne_checkpoint.empty()) ts.checkpoint = tsne_checkpoint;
        if (!tsne_manifest.empty()) ts.manifest = tsne_manifest;
        if (!tsne_features.empty()) ts.features = tsne_features;
        ts.split = *parse_split(tsne_split);
        const auto emb = cmd_tsne(ts);
        std::cout << (ts.out / "embedding.csv").string() << "  final KL " << format_rounded(emb.cost_trace.back(), 4) << "\n";
    } else if (*report) {
        cmd_report(report_run, &std::cout);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const swinsight::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const swinsight::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const swinsight::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const swinsight::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
