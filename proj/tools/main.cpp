#include <CLI11.hpp>

#include <iostream>

#include "dbd/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"defocus blur detection with depth distillation"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::simple);

    // train
    auto* train = app.add_subcommand("train", "train a model from a run config");
    std::string train_config, train_data, train_out;
    std::uint64_t train_seed = 0;
    double train_gamma = -1.0;
    bool train_resume = false;
    train->add_option("--config", train_config, "run config file")->required();
    train->add_option("--data", train_data, "override data_root");
    train->add_option("--out", train_out, "directory for checkpoint and log");
    train->add_option("--seed", train_seed, "override seed");
    train->add_option("--gamma", train_gamma, "override depth loss weight");
    train->add_flag("--resume", train_resume, "resume from existing checkpoint");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or prediction dir");
    std::string eval_ckpt, eval_data, eval_split, eval_out = "report.json", eval_pred;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file");
    eval->add_option("--pred", eval_pred, "directory of predicted maps (instead of --ckpt)");
    eval->add_option("--data", eval_data, "dataset root (or gt dir with --pred)")->required();
    eval->add_option("--split", eval_split, "dataset split subdirectory");
    eval->add_option("--out", eval_out, "output report JSON path");

    // infer
    auto* infer = app.add_subcommand("infer", "run a checkpoint on one image");
    std::string infer_ckpt, infer_image, infer_out = ".";
    infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
    infer->add_option("--image", infer_image, "input image")->required();
    infer->add_option("--out", infer_out, "output directory");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    int synth_n = 16, synth_size = 96;
    std::uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--n", synth_n, "number of scenes");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--size", synth_size, "canvas size (square)");

    // rf-table
    auto* rf = app.add_subcommand("rf-table", "print branch receptive fields");
    std::string rf_block = "srfb";
    rf->add_option("--block", rf_block, "srfb | sk | rfb");

    // plot-pr
    auto* plot = app.add_subcommand("plot-pr", "render PR curves from reports");
    std::vector<std::string> plot_reports;
    std::string plot_out = "pr_curves.png";
    plot->add_option("--reports", plot_reports, "MetricReport JSON files")->required();
    plot->add_option("--out", plot_out, "output image path");

    // gamma-sweep
    auto* sweep = app.add_subcommand("gamma-sweep", "train and evaluate a gamma grid");
    std::string sweep_config, sweep_out = "gamma_sweep", sweep_eval_data, sweep_eval_split;
    std::vector<double> sweep_gammas;
    sweep->add_option("--config", sweep_config, "base run config")->required();
    sweep->add_option("--out", sweep_out, "output directory");
    sweep->add_option("--gamma", sweep_gammas, "gamma values (default 0.01 0.05 0.1 1 5)");
    sweep->add_option("--eval-data", sweep_eval_data, "evaluation dataset root");
    sweep->add_option("--eval-split", sweep_eval_split, "evaluation split");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            dbd::cli::TrainOverrides ov;
            if (!train_data.empty()) ov.data_root = train_data;
            if (!train_out.empty()) ov.out_dir = train_out;
            if (train->count("--seed")) ov.seed = train_seed;
            if (train_gamma >= 0.0) ov.gamma = train_gamma;
            ov.resume = train_resume;
            dbd::cli::cmd_train(train_config, ov);
        } else if (*eval) {
            if (!eval_pred.empty())
                dbd::cli::cmd_eval_dirs(eval_pred, eval_data, eval_out);
            else if (!eval_ckpt.empty())
                dbd::cli::cmd_eval(eval_ckpt, eval_data, eval_split, eval_out);
            else
                throw std::invalid_argument("eval: need --ckpt or --pred");
        } else if (*infer) {
            dbd::cli::cmd_infer(infer_ckpt, infer_image, infer_out);
        } else if (*synth) {
            dbd::cli::cmd_synth(synth_out, synth_n, synth_seed, synth_size);
        } else if (*rf) {
            std::cout << dbd::cli::rf_table(rf_block);
        } else if (*plot) {
            std::vector<std::filesystem::path> paths(plot_reports.begin(),
                                                     plot_reports.end());
            dbd::cli::cmd_plot_pr(paths, plot_out);
        } else if (*sweep) {
            dbd::cli::cmd_gamma_sweep(sweep_config, sweep_out, sweep_gammas,
                                      sweep_eval_data, sweep_eval_split);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
