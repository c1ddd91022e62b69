#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "dbd/data.hpp"
#include "dbd/distill.hpp"
#include "dbd/losses.hpp"
#include "dbd/metrics.hpp"
#include "dbd/network.hpp"

namespace dbd::engine {

struct TrainConfig {
    double lr = 0.005;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 6;
    int max_iterations = 1000;
    std::uint64_t seed = 1;
    bool augment = true;
    losses::LossWeights loss;
    net::ModelConfig model;  // carries input size and ablation flags
    distill::TeacherSource teacher;
    std::string data_root;
    std::string split;
    std::string checkpoint_path = "checkpoint.dbd";
    std::string log_path = "train_log.jsonl";
    int checkpoint_every = 200;
    std::string backbone_weights;  // optional parameter archive

    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct Batch {
    Tensor images;  // (B,3,H,W), standardized
    Tensor masks;   // (B,1,H,W), binary
    Tensor depths;  // (B,1,H,W); empty when the depth head is disabled
    std::vector<std::string> ids;
};

Batch make_batch(const std::vector<data::DefocusSample>& samples,
                 const std::vector<size_t>& indices, bool with_depth);

// Owns the model, momentum buffers and the deterministic batch schedule.
// Batches are re-derivable from (seed, iteration), so resuming from a
// checkpoint continues bit-identically.
class Trainer {
public:
    explicit Trainer(TrainConfig config);
    Trainer(TrainConfig config, const net::Checkpoint& resume_from);

    // One optimization step on the given batch (forward, loss, backward, SGD).
    losses::LossBreakdown train_step(const Batch& batch);
    // One step on the next scheduled batch.
    losses::LossBreakdown step();

    Batch next_batch();  // deterministic per (seed, iteration)

    std::uint64_t iteration() const { return iteration_; }
    net::DefocusNet& model() { return *model_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<data::DefocusSample>& samples() const { return samples_; }

    net::Checkpoint make_checkpoint() const;
    void save_checkpoint(const std::filesystem::path& path) const;

    // Inference-mode metrics over the (unaugmented) training samples.
    metrics::MetricReport evaluate_train_set() const;

private:
    void prepare_samples();

    TrainConfig config_;
    std::unique_ptr<net::DefocusNet> model_;
    std::map<std::string, Tensor> momentum_;
    std::uint64_t iteration_ = 0;
    std::vector<data::DefocusSample> samples_;  // raw, with teacher depth attached
};

struct FitResult {
    std::uint64_t iterations = 0;
    losses::LossBreakdown last_loss;
    std::string checkpoint_path;
    std::string log_path;
};

// Full training run: seeded batches, JSON-lines log, periodic + final
// checkpoints. `resume` continues from an existing checkpoint at
// config.checkpoint_path when present.
FitResult fit(const TrainConfig& config, bool resume = false);

struct EvalResult {
    metrics::MetricReport report;
    double seconds_per_image = 0.0;
    double fps = 0.0;
};

EvalResult run_eval(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& data_root, const std::string& split = "");

// Shared by run_eval and the acceptance experiments: inference over samples
// (preprocessed to the model's input size) paired with their masks.
EvalResult evaluate_model(const net::DefocusNet& model,
                          const std::vector<data::DefocusSample>& samples);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dbd::engine
