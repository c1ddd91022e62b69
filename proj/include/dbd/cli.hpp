#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dbd::cli {

struct TrainOverrides {
    std::optional<std::string> data_root;
    std::optional<std::string> out_dir;  // redirects checkpoint/log into this dir
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    bool resume = false;
};

// All commands throw on failure; the binary turns that into a single-line error.
void cmd_train(const std::filesystem::path& config_path, const TrainOverrides& ov);

void cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
              const std::string& split, const std::filesystem::path& out_json);
void cmd_eval_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                   const std::filesystem::path& out_json);

void cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
               const std::filesystem::path& out_dir);

void cmd_synth(const std::filesystem::path& out_dir, int n, std::uint64_t seed, int size);

std::string rf_table(const std::string& block_kind);  // srfb | sk | rfb

void cmd_plot_pr(const std::vector<std::filesystem::path>& report_paths,
                 const std::filesystem::path& out_image);

void cmd_gamma_sweep(const std::filesystem::path& config_path,
                     const std::filesystem::path& out_dir, std::vector<double> gammas,
                     const std::string& eval_data = "", const std::string& eval_split = "");

}  // namespace dbd::cli
