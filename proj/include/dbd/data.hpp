#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dbd/scene.hpp"
#include "dbd/tensor.hpp"

namespace dbd::data {

struct DefocusSample {
    Tensor image;                 // (1,3,H,W); [0,1] when loaded, standardized after preprocess
    Tensor mask;                  // (1,1,H,W); 1 = in-focus
    std::optional<Tensor> depth;  // (1,1,H,W), normalized teacher depth
    std::string id;
};

// Directory layout: <root>[/<split>]/image/*.png|jpg, gt/*.png, depth/*.pfm
// (depth optional). Samples come back in lexicographic stem order; every image
// must have a ground-truth mask.
std::vector<DefocusSample> load_dataset(const std::filesystem::path& root,
                                        const std::string& split = "");

// Writes samples back out in the same layout (used by the synthetic generator).
void write_dataset(const std::vector<DefocusSample>& samples,
                   const std::filesystem::path& root);

struct PreprocessOptions {
    int height = 320;
    int width = 320;
    bool augment = false;
    // Channel statistics of the common pretrained backbones.
    std::array<double, 3> mean = {0.485, 0.456, 0.406};
    std::array<double, 3> stddev = {0.229, 0.224, 0.225};
};

// Bilinear image/depth resize, nearest mask resize, per-channel image
// standardization, optional horizontal flip (p = 0.5, consistent across
// image/mask/depth). Depth is re-standardized after resizing.
DefocusSample preprocess(const DefocusSample& sample, const PreprocessOptions& opts,
                         std::mt19937_64& rng);

// Renders the scene: blurred background, sharp foreground, mask = foreground,
// depth from the analytic teacher (normalized). Bit-reproducible per SceneSpec.
DefocusSample generate_scene(const SceneSpec& spec);

// Draws a plausible random scene around the given canvas; deterministic per seed.
SceneSpec random_scene_spec(std::uint64_t seed, int height = 96, int width = 96);

// Resampling helpers shared with evaluation code.
Tensor resize_bilinear_map(const Tensor& src, int out_h, int out_w);
Tensor resize_nearest_map(const Tensor& src, int out_h, int out_w);

}  // namespace dbd::data
