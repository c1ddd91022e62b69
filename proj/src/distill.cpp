#include "dbd/distill.hpp"

#include <cmath>
#include <filesystem>

#include "dbd/image_io.hpp"

namespace dbd::distill {

DepthMap normalize(const DepthMap& d) {
    const Tensor& v = d.values;
    if (v.numel() == 0) throw std::invalid_argument("normalize: empty depth map");
    const double mean = v.mean();
    double var = 0.0;
    for (size_t i = 0; i < v.numel(); ++i) {
        const double e = v[i] - mean;
        var += e * e;
    }
    var /= static_cast<double>(v.numel());
    DepthMap out{zeros_like(v), true};
    const double sd = std::sqrt(var);
    if (sd < 1e-12) return out;  // constant map -> all zeros
    for (size_t i = 0; i < v.numel(); ++i) out.values[i] = (v[i] - mean) / sd;
    return out;
}

namespace {
Tensor resize_map(const Tensor& src, int out_h, int out_w) {
    if (src.h() == out_h && src.w() == out_w) return src;
    // Plain bilinear with half-pixel centers; matches the network resampler.
    Tensor out(1, 1, out_h, out_w);
    const double sy = static_cast<double>(src.h()) / out_h;
    const double sx = static_cast<double>(src.w()) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.h() - 1.0);
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.w() - 1.0);
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w() - 1);
            const double wx = fx - x0;
            const double top = src.at(0, 0, y0, x0) * (1 - wx) + src.at(0, 0, y0, x1) * wx;
            const double bot = src.at(0, 0, y1, x0) * (1 - wx) + src.at(0, 0, y1, x1) * wx;
            out.at(0, 0, y, x) = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

Tensor vertical_ramp(int h, int w) {
    Tensor t(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        const double v = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = v;
    }
    return t;
}
}  // namespace

DepthMap teacher_depth(const std::string& sample_id, int out_h, int out_w,
                       const TeacherSource& source) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("teacher_depth: non-positive target size");
    Tensor raw;
    if (source.kind == TeacherKind::precomputed_dir) {
        const std::filesystem::path path =
            std::filesystem::path(source.dir) / (sample_id + ".pfm");
        if (!std::filesystem::exists(path))
            throw std::runtime_error("teacher_depth: missing depth file for sample '" +
                                     sample_id + "', expected " + path.string());
        raw = io::read_pfm(path);
        if (!raw.all_finite())
            throw std::runtime_error("teacher_depth: non-finite values in " + path.string());
    } else {
        raw = vertical_ramp(out_h, out_w);
    }
    DepthMap resized{resize_map(raw, out_h, out_w), false};
    return normalize(resized);
}

DepthMap synthetic_teacher(const data::SceneSpec& scene) {
    Tensor mask = data::rasterize_foreground(scene);
    Tensor depth(1, 1, scene.height, scene.width);
    for (int y = 0; y < scene.height; ++y) {
        const double t = scene.height > 1 ? static_cast<double>(y) / (scene.height - 1) : 0.0;
        const double bg = scene.depth_bg_near + (scene.depth_bg_far - scene.depth_bg_near) * t;
        for (int x = 0; x < scene.width; ++x)
            depth.at(0, 0, y, x) = mask.at(0, 0, y, x) > 0.5 ? scene.depth_fg : bg;
    }
    return DepthMap{std::move(depth), false};
}

double dof(double f_number, double confusion_circle, double subject_distance,
           double focal_length) {
    if (f_number <= 0 || confusion_circle <= 0 || subject_distance <= 0 ||
        focal_length <= 0)
        throw std::invalid_argument("dof: all arguments must be positive");
    return 2.0 * f_number * confusion_circle * subject_distance * subject_distance /
           (focal_length * focal_length);
}

}  // namespace dbd::distill
