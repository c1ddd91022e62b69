#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dbd/autodiff.hpp"
#include "dbd/params.hpp"

namespace dbd::blocks {

struct ConvStage {
    int kernel = 3;
    int dilation = 1;
};

// One branch of a reception-field pyramid: an ordered stack of stride-1
// dilated convolutions, or the identity pass-through.
struct BranchSpec {
    std::vector<ConvStage> stages;
    bool identity = false;

    void validate() const;
    std::string describe() const;  // e.g. "1x1 d1 -> 7x7 d7"
};

// Input extent influencing one output position: 1 + sum (k-1)*d over stages.
int receptive_field(const BranchSpec& spec);

struct SrfbConfig {
    std::vector<BranchSpec> branches;
    int channels = 0;
    int reduction_ratio = 4;
    int min_attention_dim = 16;

    void validate(bool require_identity) const;
    int attention_dim() const;
};

// Identity plus 1x1 -> kxk(dilation=k) branches for k in {3,5,7}: fields {1,7,21,43}.
SrfbConfig srfb_config(int channels, int reduction_ratio = 4, int min_attention_dim = 16);
// Baseline pair 3x3(d1) and 3x3(d1)->3x3(d4): fields {3,11}. No identity branch.
SrfbConfig sk_config(int channels, int reduction_ratio = 4, int min_attention_dim = 16);
// Same pyramid as srfb_config; merged by concatenation + 1x1 instead of attention.
SrfbConfig rfb_config(int channels);

// conv + group norm + relu (norm/act optional for heads)
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(ParamStore& params, const std::string& prefix, int in_ch, int out_ch,
              int kernel, int dilation, std::mt19937_64& rng, bool norm_act = true);
    ad::Variable forward(const ad::Variable& x) const;
    int out_channels() const { return out_ch_; }

private:
    ad::Variable weight_, bias_, gamma_, beta_;
    int dilation_ = 1;
    int out_ch_ = 0;
    int norm_groups_ = 1;
    bool norm_act_ = true;
};

struct SrfbDiagnostics {
    // Selection probabilities, (B, n_branches*C, 1, 1), branch-major layout.
    Tensor branch_probs;
};

enum class MergeMode { selective, concat };

// Reception-field pyramid block. `selective` merges branches with a per-channel
// softmax over branch weights derived from the pooled sum (SRFB, and the SK
// baseline via sk_config); `concat` stacks branches and fuses with a 1x1 conv.
class PyramidBlock {
public:
    PyramidBlock() = default;
    PyramidBlock(ParamStore& params, const std::string& prefix, SrfbConfig config,
                 MergeMode mode, std::mt19937_64& rng);

    ad::Variable forward(const ad::Variable& x, SrfbDiagnostics* diag = nullptr) const;

    const SrfbConfig& config() const { return config_; }

private:
    SrfbConfig config_;
    MergeMode mode_ = MergeMode::selective;
    std::vector<std::vector<ConvBlock>> branch_stages_;  // empty list = identity
    ad::Variable fc1_w_, fc1_b_, fc2_w_, fc2_b_;         // selective merge
    ConvBlock fuse_;                                     // concat merge
};

// Spatial attention from a level's own side outputs: two conv blocks + sigmoid,
// multiplied back onto the features.
class SabBlock {
public:
    SabBlock() = default;
    SabBlock(ParamStore& params, const std::string& prefix, int side_channels,
             std::mt19937_64& rng, int hidden_channels = 8);

    ad::Variable attention(const std::vector<ad::Variable>& side_maps) const;
    ad::Variable forward(const ad::Variable& features,
                         const std::vector<ad::Variable>& side_maps,
                         Tensor* attention_out = nullptr) const;

private:
    ConvBlock conv1_;
    ad::Variable conv2_w_, conv2_b_;
};

}  // namespace dbd::blocks
