#include "dbd/scene.hpp"

#include <cmath>
#include <random>

namespace dbd::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::vector<Point2d> polygon_vertices(const SceneSpec& spec) {
    std::mt19937_64 rng(spec.shape_seed);
    std::uniform_real_distribution<double> jitter(0.8, 1.0);
    const double base = std::min(spec.height, spec.width);
    const double cx = spec.center_x * spec.width;
    const double cy = spec.center_y * spec.height;
    const double r = 0.5 * (spec.axis_a + spec.axis_b) * base;
    const int n = std::max(spec.polygon_sides, 3);
    std::vector<Point2d> verts(n);
    for (int i = 0; i < n; ++i) {
        const double ang = spec.rotation + 2.0 * kPi * i / n;
        const double ri = r * jitter(rng);
        verts[i] = {cx + ri * std::cos(ang), cy + ri * std::sin(ang)};
    }
    return verts;
}

double analytic_foreground_area(const SceneSpec& spec) {
    if (!spec.has_foreground) return 0.0;
    const double base = std::min(spec.height, spec.width);
    if (spec.shape == SceneSpec::Shape::ellipse)
        return kPi * (spec.axis_a * base) * (spec.axis_b * base);
    const auto v = polygon_vertices(spec);
    double twice_area = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        const auto& p = v[i];
        const auto& q = v[(i + 1) % v.size()];
        twice_area += p.x * q.y - q.x * p.y;
    }
    return std::fabs(twice_area) / 2.0;
}

namespace {
bool inside_ellipse(const SceneSpec& s, double x, double y) {
    const double base = std::min(s.height, s.width);
    const double dx = x - s.center_x * s.width;
    const double dy = y - s.center_y * s.height;
    const double ct = std::cos(s.rotation), st = std::sin(s.rotation);
    const double u = (dx * ct + dy * st) / (s.axis_a * base);
    const double v = (-dx * st + dy * ct) / (s.axis_b * base);
    return u * u + v * v <= 1.0;
}

bool inside_polygon(const std::vector<Point2d>& verts, double x, double y) {
    bool in = false;
    for (size_t i = 0, j = verts.size() - 1; i < verts.size(); j = i++) {
        const auto& a = verts[i];
        const auto& b = verts[j];
        if ((a.y > y) != (b.y > y) &&
            x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
            in = !in;
    }
    return in;
}
}  // namespace

Tensor rasterize_foreground(const SceneSpec& spec) {
    Tensor mask(1, 1, spec.height, spec.width);
    if (!spec.has_foreground) return mask;
    std::vector<Point2d> verts;
    if (spec.shape == SceneSpec::Shape::polygon) verts = polygon_vertices(spec);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const bool in = spec.shape == SceneSpec::Shape::ellipse
                                ? inside_ellipse(spec, px, py)
                                : inside_polygon(verts, px, py);
            if (in) mask.at(0, 0, y, x) = 1.0;
        }
    return mask;
}

}  // namespace dbd::data
