#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dbd/cli.hpp"
#include "dbd/engine.hpp"
#include "dbd/image_io.hpp"

using namespace dbd;
namespace fs = std::filesystem;

namespace {
fs::path fresh_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("dbd_cli_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
}

// A minimal trained checkpoint shared by infer/eval cases.
fs::path make_checkpoint(const fs::path& dir) {
    std::vector<data::DefocusSample> scenes;
    for (int i = 0; i < 2; ++i) {
        data::DefocusSample s = data::generate_scene(data::random_scene_spec(7 + i, 32, 32));
        s.id = "t" + std::to_string(i);
        scenes.push_back(std::move(s));
    }
    data::write_dataset(scenes, dir / "data");

    engine::TrainConfig cfg;
    cfg.model = net::tiny_model_config(32);
    cfg.model.decoder_channels = {8, 8, 8, 8, 8};
    cfg.batch_size = 2;
    cfg.max_iterations = 2;
    cfg.augment = false;
    cfg.data_root = (dir / "data").string();
    cfg.checkpoint_path = (dir / "ckpt.dbd").string();
    cfg.log_path = (dir / "log.jsonl").string();
    engine::fit(cfg);
    return cfg.checkpoint_path;
}
}  // namespace

TEST_CASE("rf-table: srfb rows {1,7,21,43}, sk max 11, stable output") {
    const std::string srfb = cli::rf_table("srfb");
    CHECK(srfb.find("identity") != std::string::npos);
    CHECK(srfb.find(" 1\n") != std::string::npos);
    CHECK(srfb.find(" 7\n") != std::string::npos);
    CHECK(srfb.find(" 21\n") != std::string::npos);
    CHECK(srfb.find(" 43\n") != std::string::npos);
    CHECK(srfb.find("max rf: 43") != std::string::npos);

    const std::string sk = cli::rf_table("sk");
    CHECK(sk.find("max rf: 11") != std::string::npos);

    const std::string rfb = cli::rf_table("rfb");
    CHECK(rfb.find("max rf: 43") != std::string::npos);

    CHECK(cli::rf_table("srfb") == srfb);  // no hidden state
    CHECK_THROWS_AS(cli::rf_table("unknown"), std::invalid_argument);
}

TEST_CASE("synth is byte-identical for a fixed seed") {
    const fs::path a = fresh_dir("synth_a");
    const fs::path b = fresh_dir("synth_b");
    cli::cmd_synth(a, 4, 123, 48);
    cli::cmd_synth(b, 4, 123, 48);

    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a);
        CHECK(slurp(e.path()) == slurp(b / rel));
        ++files;
    }
    CHECK(files == 12);  // image + gt + depth for 4 scenes

    const fs::path c = fresh_dir("synth_c");
    cli::cmd_synth(c, 1, 124, 48);
    CHECK(slurp(c / "image" / "scene_0000.png") != slurp(a / "image" / "scene_0000.png"));
}

TEST_CASE("infer: restores resolution, quantizes within 1/255, deterministic") {
    const fs::path dir = fresh_dir("infer");
    const fs::path ckpt = make_checkpoint(dir);

    // non-square input catches height/width mixups
    data::DefocusSample scene = data::generate_scene(data::random_scene_spec(99, 48, 64));
    const fs::path img_path = dir / "photo.png";
    io::write_rgb8(img_path, scene.image);

    const fs::path out = dir / "out";
    cli::cmd_infer(ckpt, img_path, out);
    CHECK(fs::exists(out / "photo_defocus.png"));
    CHECK(fs::exists(out / "photo_depth.pfm"));

    const Tensor defocus = io::read_gray8(out / "photo_defocus.png");
    CHECK(defocus.h() == 48);
    CHECK(defocus.w() == 64);
    const Tensor depth = io::read_pfm(out / "photo_depth.pfm");
    CHECK(depth.h() == 48);
    CHECK(depth.w() == 64);

    // quantization bound: rebuild the raw prediction and compare
    const net::Checkpoint c = net::load_checkpoint(ckpt);
    net::DefocusNet model(net::ModelConfig::from_text(c.config_text), 0);
    restore(model.params(), c.params);
    data::DefocusSample in;
    in.id = "photo";
    in.image = io::read_rgb8(img_path);
    in.mask = Tensor(1, 1, 48, 64);
    data::PreprocessOptions opts;
    opts.height = opts.width = 32;
    std::mt19937_64 rng(0);
    const Tensor raw = data::resize_bilinear_map(
        model.infer(data::preprocess(in, opts, rng).image).defocus_final, 48, 64);
    CHECK(max_abs_diff(defocus, raw) <= 0.5 / 255.0 + 1e-12);

    const fs::path out2 = dir / "out2";
    cli::cmd_infer(ckpt, img_path, out2);
    CHECK(slurp(out / "photo_defocus.png") == slurp(out2 / "photo_defocus.png"));
    CHECK(slurp(out / "photo_depth.pfm") == slurp(out2 / "photo_depth.pfm"));

    CHECK_THROWS(cli::cmd_infer(ckpt, dir / "no_such.png", out));
}

TEST_CASE("eval: checkpoint and prediction-directory paths both produce reports") {
    const fs::path dir = fresh_dir("eval");
    const fs::path ckpt = make_checkpoint(dir);

    const fs::path report = dir / "report.json";
    cli::cmd_eval(ckpt, dir / "data", "", report);
    REQUIRE(fs::exists(report));
    const metrics::MetricReport rep = metrics::read_report(report);
    CHECK(rep.n_images == 2);
    CHECK(fs::exists(dir / "report.csv"));

    // gt evaluated against itself through the directory path
    const fs::path report2 = dir / "self.json";
    cli::cmd_eval_dirs(dir / "data" / "gt", dir / "data" / "gt", report2);
    const metrics::MetricReport self = metrics::read_report(report2);
    CHECK(self.f_beta == doctest::Approx(1.0));
    CHECK(self.mae == doctest::Approx(0.0));
}

TEST_CASE("plot-pr renders curves and the CSV mirrors the report") {
    const fs::path dir = fresh_dir("plot");
    const fs::path ckpt = make_checkpoint(dir);
    const fs::path report = dir / "run.json";
    cli::cmd_eval(ckpt, dir / "data", "", report);

    const fs::path img = dir / "pr.png";
    cli::cmd_plot_pr({report}, img);
    REQUIRE(fs::exists(img));
    const Tensor canvas = io::read_rgb8(img);
    CHECK(canvas.h() == 720);
    CHECK(canvas.w() == 720);

    const fs::path csv = dir / "run_pr.csv";
    REQUIRE(fs::exists(csv));
    const metrics::MetricReport rep = metrics::read_report(report);
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);  // header
    for (int t = 0; t < 256; ++t) {
        REQUIRE(std::getline(is, line));
        const auto c1 = line.find(','), c2 = line.rfind(',');
        CHECK(std::stoi(line.substr(0, c1)) == t);
        CHECK(std::stod(line.substr(c1 + 1, c2 - c1 - 1)) ==
              doctest::Approx(rep.precision_curve[t]).epsilon(1e-9));
        CHECK(std::stod(line.substr(c2 + 1)) ==
              doctest::Approx(rep.recall_curve[t]).epsilon(1e-9));
    }

    CHECK_THROWS(cli::cmd_plot_pr({dir / "nonexistent.json"}, img));
}

TEST_CASE("gamma-sweep trains a grid and writes the manifest") {
    const fs::path dir = fresh_dir("sweep");
    std::vector<data::DefocusSample> scenes;
    for (int i = 0; i < 2; ++i) {
        data::DefocusSample s = data::generate_scene(data::random_scene_spec(55 + i, 32, 32));
        s.id = "g" + std::to_string(i);
        scenes.push_back(std::move(s));
    }
    data::write_dataset(scenes, dir / "data");

    engine::TrainConfig cfg;
    cfg.model = net::tiny_model_config(32);
    cfg.model.decoder_channels = {8, 8, 8, 8, 8};
    cfg.batch_size = 2;
    cfg.max_iterations = 2;
    cfg.augment = false;
    cfg.data_root = (dir / "data").string();
    cfg.save(dir / "base.cfg");

    cli::cmd_gamma_sweep(dir / "base.cfg", dir / "out", {0.05, 0.5});
    REQUIRE(fs::exists(dir / "out" / "sweep.json"));
    CHECK(fs::exists(dir / "out" / "gamma_0.05.dbd"));
    CHECK(fs::exists(dir / "out" / "gamma_0.5.dbd"));
    CHECK(fs::exists(dir / "out" / "gamma_0.05_report.json"));
    const std::string manifest = slurp(dir / "out" / "sweep.json");
    CHECK(manifest.find("\"gamma\"") != std::string::npos);
    CHECK(manifest.find("\"f_beta\"") != std::string::npos);
}
