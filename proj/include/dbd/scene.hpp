#pragma once

#include <cstdint>
#include <vector>

#include "dbd/tensor.hpp"

namespace dbd::data {

// Synthetic partial-defocus scene: a sharp textured foreground shape composited
// over a Gaussian-blurred textured background, with analytic depth. Everything
// is a pure function of the spec, so a spec is also a reproducibility token.
struct SceneSpec {
    int height = 96;
    int width = 96;

    enum class Shape { ellipse, polygon };
    Shape shape = Shape::ellipse;
    bool has_foreground = true;
    double center_x = 0.5;  // relative to canvas
    double center_y = 0.5;
    double axis_a = 0.20;  // semi-axes relative to min(height, width)
    double axis_b = 0.16;
    double rotation = 0.0;  // radians
    int polygon_sides = 6;
    std::uint64_t shape_seed = 7;

    std::uint64_t fg_texture_seed = 1;
    std::uint64_t bg_texture_seed = 2;
    double sigma_bg = 3.0;  // background blur, > 0

    // Depth layout: foreground at a constant near depth, background a vertical
    // ramp well behind it; the focal plane sits on the foreground.
    double depth_fg = 1.0;
    double depth_bg_near = 4.0;
    double depth_bg_far = 5.0;

    std::uint64_t seed = 0;  // master seed used by random_scene_spec
};

struct Point2d {
    double x, y;
};

// Vertices of the polygon variant (pixel coordinates); deterministic.
std::vector<Point2d> polygon_vertices(const SceneSpec& spec);

// Exact foreground area in pixels^2 (ellipse analytic, polygon shoelace).
double analytic_foreground_area(const SceneSpec& spec);

// Foreground mask rasterized at pixel centers; (1,1,H,W) in {0,1}. Shapes
// reaching outside the canvas are clipped.
Tensor rasterize_foreground(const SceneSpec& spec);

}  // namespace dbd::data
