#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbd/blocks.hpp"

namespace dbd::net {

// Five feature taps with fixed channel/stride contracts. Named pretrained
// architectures get their published stage shapes; "tiny" is a scratch CNN
// sized so the whole test suite runs on CPU without any downloads.
struct BackboneSpec {
    std::string name = "tiny";
    std::array<int, 5> stage_channels = {8, 16, 32, 64, 128};
    std::array<int, 5> stage_strides = {2, 4, 8, 16, 32};
    int convs_per_stage = 1;

    void validate() const;
    int max_stride() const { return stage_strides[4]; }
};

BackboneSpec tiny_backbone();
BackboneSpec resnext101_backbone();  // channels {64,256,512,1024,2048}
BackboneSpec vgg19_backbone();       // channels {64,128,256,512,512}, strides {1,..,16}
BackboneSpec backbone_by_name(const std::string& name);

struct ModelConfig {
    BackboneSpec backbone = tiny_backbone();
    std::array<int, 5> decoder_channels = {256, 128, 64, 32, 32};
    int srfb_reduction_ratio = 4;
    int srfb_min_attention_dim = 16;
    int input_height = 320;
    int input_width = 320;
    bool use_depth_head = true;
    bool use_srfb = true;
    bool use_rfb = false;  // concat-merge pyramid instead of selective
    bool use_sab = true;

    void validate() const;
    std::string to_text() const;  // canonical key-value block
    static ModelConfig from_text(const std::string& text);
};

// Small preset used by tests and desk-scale experiments.
ModelConfig tiny_model_config(int input_size = 96);

// Inference-facing outputs (plain tensors).
struct SideOutputs {
    std::vector<Tensor> defocus_sides;  // native decoder resolutions, sigmoid
    std::vector<Tensor> depth_sides;    // native resolutions, linear
    Tensor defocus_final;               // input resolution, sigmoid
    Tensor depth_final;                 // input resolution, linear
};

// Training-facing outputs (graph variables; *_full are upsampled to input
// resolution, which is where the losses are applied).
struct ForwardResult {
    std::vector<ad::Variable> defocus_sides;
    std::vector<ad::Variable> depth_sides;
    std::vector<ad::Variable> defocus_sides_full;
    std::vector<ad::Variable> depth_sides_full;
    ad::Variable defocus_final;
    ad::Variable depth_final;
    std::vector<Tensor> srfb_probs;     // per level, when diagnostics requested
    std::vector<Tensor> sab_attention;  // per level, when diagnostics requested

    SideOutputs to_outputs() const;
};

class DefocusNet {
public:
    DefocusNet(ModelConfig config, std::uint64_t init_seed);

    // Five taps, coarsest last; input dims must divide the largest stride.
    std::vector<ad::Variable> encode(const ad::Variable& image) const;

    ForwardResult forward(const ad::Variable& image, bool diagnostics = false) const;
    SideOutputs infer(const Tensor& image) const;  // gradient-free forward

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const ModelConfig& config() const { return config_; }

private:
    struct Level {
        blocks::ConvBlock up;     // after 2x upsample (levels 1..4)
        blocks::ConvBlock merge;  // after skip concat (or the level-0 entry conv)
        std::optional<blocks::PyramidBlock> pyramid;
        std::optional<blocks::ConvBlock> plain;  // FCN baseline context
        ad::Variable defocus_head_w, defocus_head_b;
        ad::Variable depth_head_w, depth_head_b;
        std::optional<blocks::SabBlock> sab;
    };

    struct LevelOut {
        ad::Variable features;
        ad::Variable defocus_side;
        ad::Variable depth_side;
    };
    LevelOut decode_level(int level, const ad::Variable& prev, const ad::Variable& skip,
                          std::vector<Tensor>* probs, std::vector<Tensor>* atts) const;

    ModelConfig config_;
    ParamStore params_;
    std::vector<std::vector<blocks::ConvBlock>> encoder_stages_;
    std::vector<int> stage_pools_;
    std::vector<Level> levels_;
    ad::Variable defocus_fuse_w_, defocus_fuse_b_;
    ad::Variable depth_fuse_w_, depth_fuse_b_;
};

// Loads matching tensors from a project-format archive (see ParamStore). A
// missing file or partial match degrades to the current (random) init with a
// warning on stderr; it is never an error.
void load_backbone_weights(DefocusNet& model, const std::filesystem::path& archive);

// Single-file binary checkpoint: model config text + named parameter arrays,
// plus optional training continuation state. Writes are atomic (tmp + rename).
struct Checkpoint {
    std::string config_text;
    std::map<std::string, Tensor> params;

    bool has_train_state = false;
    std::map<std::string, Tensor> momentum;
    std::uint64_t iteration = 0;
    std::string rng_state;
    double best_metric = 0.0;
    std::string train_config_text;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dbd::net
