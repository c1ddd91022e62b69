#pragma once

#include <string>

#include "dbd/scene.hpp"
#include "dbd/tensor.hpp"

namespace dbd::distill {

// Per-pixel relative depth. The teacher predicts ordinal structure only, so
// maps are standardized (zero mean, unit std) before being used as targets.
struct DepthMap {
    Tensor values;  // (1,1,H,W), finite
    bool normalized = false;
};

// Zero mean, unit standard deviation; a constant map normalizes to all zeros.
DepthMap normalize(const DepthMap& d);

enum class TeacherKind { precomputed_dir, synthetic };

struct TeacherSource {
    TeacherKind kind = TeacherKind::synthetic;
    std::string dir;  // precomputed_dir: one <sample_id>.pfm per image
};

// Depth target for one sample, resized to (out_h, out_w) and normalized.
// Precomputed sources resolve <dir>/<sample_id>.pfm (missing file is an error
// naming that path); the synthetic source is an analytic vertical ramp usable
// with any dataset. Deterministic per (sample_id, source).
DepthMap teacher_depth(const std::string& sample_id, int out_h, int out_w,
                       const TeacherSource& source);

// Scene-consistent analytic depth: constant near depth on the foreground,
// a planar vertical ramp on the background. Raw values, not normalized.
DepthMap synthetic_teacher(const data::SceneSpec& scene);

// Depth of field of a thin lens: 2 * N * C * D^2 / f^2.
double dof(double f_number, double confusion_circle, double subject_distance,
           double focal_length);

}  // namespace dbd::distill
