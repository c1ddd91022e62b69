#include "dbd/cli.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dbd/engine.hpp"
#include "dbd/image_io.hpp"

namespace dbd::cli {

namespace fs = std::filesystem;

namespace {
bool verbose() {
    const char* v = std::getenv("DBD_LOG");
    return v && std::string(v) != "quiet";
}
}  // namespace

void cmd_train(const fs::path& config_path, const TrainOverrides& ov) {
    engine::TrainConfig cfg = engine::TrainConfig::load(config_path);
    if (ov.data_root) cfg.data_root = *ov.data_root;
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.gamma) cfg.loss.gamma = *ov.gamma;
    if (ov.out_dir) {
        fs::create_directories(*ov.out_dir);
        cfg.checkpoint_path = (fs::path(*ov.out_dir) / "checkpoint.dbd").string();
        cfg.log_path = (fs::path(*ov.out_dir) / "train_log.jsonl").string();
    }
    const engine::FitResult res = engine::fit(cfg, ov.resume);
    if (verbose())
        std::cerr << "trained " << res.iterations << " iterations, final loss "
                  << res.last_loss.total << ", checkpoint " << res.checkpoint_path << "\n";
    std::cout << res.checkpoint_path << "\n";
}

void cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::string& split,
              const fs::path& out_json) {
    const engine::EvalResult res = engine::run_eval(checkpoint, data, split);
    metrics::write_report(out_json, res.report);
    fs::path csv = out_json;
    csv.replace_extension(".csv");
    metrics::write_pr_csv(csv, res.report);
    nlohmann::json j;
    j["f_beta"] = res.report.f_beta;
    j["mae"] = res.report.mae;
    j["n_images"] = res.report.n_images;
    j["seconds_per_image"] = res.seconds_per_image;
    j["fps"] = res.fps;
    std::cout << j.dump() << "\n";
}

void cmd_eval_dirs(const fs::path& pred_dir, const fs::path& gt_dir,
                   const fs::path& out_json) {
    const metrics::MetricReport rep = metrics::evaluate_dirs(pred_dir, gt_dir);
    metrics::write_report(out_json, rep);
    fs::path csv = out_json;
    csv.replace_extension(".csv");
    metrics::write_pr_csv(csv, rep);
    nlohmann::json j;
    j["f_beta"] = rep.f_beta;
    j["mae"] = rep.mae;
    j["n_images"] = rep.n_images;
    std::cout << j.dump() << "\n";
}

void cmd_infer(const fs::path& checkpoint, const fs::path& image_path,
               const fs::path& out_dir) {
    const net::Checkpoint ckpt = net::load_checkpoint(checkpoint);
    const net::ModelConfig mc = net::ModelConfig::from_text(ckpt.config_text);
    net::DefocusNet model(mc, 0);
    restore(model.params(), ckpt.params);

    Tensor image = io::read_rgb8(image_path);
    const int orig_h = image.h(), orig_w = image.w();

    data::DefocusSample sample;
    sample.id = image_path.stem().string();
    sample.image = std::move(image);
    sample.mask = Tensor(1, 1, orig_h, orig_w);
    data::PreprocessOptions opts;
    opts.height = mc.input_height;
    opts.width = mc.input_width;
    std::mt19937_64 rng(0);
    const data::DefocusSample prep = data::preprocess(sample, opts, rng);

    const net::SideOutputs out = model.infer(prep.image);
    fs::create_directories(out_dir);
    const Tensor defocus = data::resize_bilinear_map(out.defocus_final, orig_h, orig_w);
    io::write_gray8(out_dir / (sample.id + "_defocus.png"), defocus);
    if (!out.depth_final.empty()) {
        const Tensor depth = data::resize_bilinear_map(out.depth_final, orig_h, orig_w);
        io::write_pfm(out_dir / (sample.id + "_depth.pfm"), depth);
    }
}

void cmd_synth(const fs::path& out_dir, int n, std::uint64_t seed, int size) {
    if (n < 1) throw std::invalid_argument("synth: --n must be positive");
    std::vector<data::DefocusSample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        data::SceneSpec spec =
            data::random_scene_spec(engine::splitmix64(seed ^ (i + 1)), size, size);
        data::DefocusSample s = data::generate_scene(spec);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%04d", i);
        s.id = buf;
        samples.push_back(std::move(s));
    }
    data::write_dataset(samples, out_dir);
    if (verbose())
        std::cerr << "wrote " << n << " scenes to " << out_dir << "\n";
}

std::string rf_table(const std::string& block_kind) {
    blocks::SrfbConfig cfg;
    if (block_kind == "srfb")
        cfg = blocks::srfb_config(32);
    else if (block_kind == "sk")
        cfg = blocks::sk_config(32);
    else if (block_kind == "rfb")
        cfg = blocks::rfb_config(32);
    else
        throw std::invalid_argument("rf-table: unknown block '" + block_kind +
                                    "' (expected srfb, sk or rfb)");
    std::ostringstream os;
    os << "block: " << block_kind << "\n";
    os << "branch  stages                 rf\n";
    int max_rf = 0;
    for (size_t i = 0; i < cfg.branches.size(); ++i) {
        const int rf = blocks::receptive_field(cfg.branches[i]);
        max_rf = std::max(max_rf, rf);
        std::string desc = cfg.branches[i].describe();
        desc.resize(std::max<size_t>(desc.size(), 22), ' ');
        os << i << "       " << desc << " " << rf << "\n";
    }
    os << "max rf: " << max_rf << "\n";
    return os.str();
}

void cmd_plot_pr(const std::vector<fs::path>& report_paths, const fs::path& out_image) {
    if (report_paths.empty()) throw std::invalid_argument("plot-pr: no reports given");
    const int size = 720, margin = 70;
    const int plot = size - 2 * margin;
    cv::Mat canvas(size, size, CV_8UC3, cv::Scalar(255, 255, 255));

    auto to_px = [&](double recall, double precision) {
        return cv::Point(margin + static_cast<int>(recall * plot),
                         size - margin - static_cast<int>(precision * plot));
    };

    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        cv::line(canvas, to_px(v, 0), to_px(v, 1), cv::Scalar(230, 230, 230), 1);
        cv::line(canvas, to_px(0, v), to_px(1, v), cv::Scalar(230, 230, 230), 1);
        char label[16];
        std::snprintf(label, sizeof(label), "%.1f", v);
        cv::putText(canvas, label, to_px(v, 0) + cv::Point(-12, 20),
                    cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(60, 60, 60), 1);
        cv::putText(canvas, label, to_px(0, v) + cv::Point(-40, 5),
                    cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(60, 60, 60), 1);
    }
    cv::rectangle(canvas, to_px(0, 1), to_px(1, 0), cv::Scalar(0, 0, 0), 1);
    cv::putText(canvas, "recall", cv::Point(size / 2 - 25, size - 20),
                cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1);
    cv::putText(canvas, "precision", cv::Point(12, size / 2), cv::FONT_HERSHEY_SIMPLEX,
                0.5, cv::Scalar(0, 0, 0), 1);

    const std::vector<cv::Scalar> palette = {
        {180, 60, 30}, {30, 120, 200}, {40, 160, 60}, {140, 40, 160},
        {20, 90, 140}, {90, 90, 90},
    };

    fs::create_directories(out_image.parent_path().empty() ? "." : out_image.parent_path());
    for (size_t r = 0; r < report_paths.size(); ++r) {
        const metrics::MetricReport rep = metrics::read_report(report_paths[r]);
        const cv::Scalar color = palette[r % palette.size()];
        std::vector<cv::Point> pts;
        for (int t = 0; t < 256; ++t)
            pts.push_back(to_px(rep.recall_curve[t], rep.precision_curve[t]));
        cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
        const std::string name = report_paths[r].stem().string();
        cv::putText(canvas, name, cv::Point(margin + 10, margin + 20 + 18 * static_cast<int>(r)),
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1);
        // One CSV per curve next to the plot; rows mirror the drawn points.
        fs::path csv = out_image.parent_path() / (name + "_pr.csv");
        metrics::write_pr_csv(csv, rep);
    }
    if (!cv::imwrite(out_image.string(), canvas))
        throw std::runtime_error("plot-pr: cannot write " + out_image.string());
}

void cmd_gamma_sweep(const fs::path& config_path, const fs::path& out_dir,
                     std::vector<double> gammas, const std::string& eval_data,
                     const std::string& eval_split) {
    if (gammas.empty()) gammas = {0.01, 0.05, 0.1, 1.0, 5.0};
    engine::TrainConfig base = engine::TrainConfig::load(config_path);
    fs::create_directories(out_dir);

    nlohmann::json manifest = nlohmann::json::array();
    for (double g : gammas) {
        engine::TrainConfig cfg = base;
        cfg.loss.gamma = g;
        std::ostringstream tag;
        tag << "gamma_" << g;
        cfg.checkpoint_path = (out_dir / (tag.str() + ".dbd")).string();
        cfg.log_path = (out_dir / (tag.str() + ".jsonl")).string();
        if (verbose()) std::cerr << "gamma sweep: training " << tag.str() << "\n";
        engine::fit(cfg);
        const engine::EvalResult res =
            eval_data.empty()
                ? engine::run_eval(cfg.checkpoint_path, cfg.data_root, cfg.split)
                : engine::run_eval(cfg.checkpoint_path, eval_data, eval_split);
        metrics::write_report(out_dir / (tag.str() + "_report.json"), res.report);
        nlohmann::json j;
        j["gamma"] = g;
        j["f_beta"] = res.report.f_beta;
        j["mae"] = res.report.mae;
        j["checkpoint"] = cfg.checkpoint_path;
        j["log"] = cfg.log_path;
        manifest.push_back(j);
    }
    std::ofstream os(out_dir / "sweep.json");
    os << manifest.dump(2) << "\n";
    std::cout << manifest.dump() << "\n";
}

}  // namespace dbd::cli
