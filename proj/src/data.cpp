#include "dbd/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dbd/distill.hpp"
#include "dbd/image_io.hpp"

namespace dbd::data {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kImageExts = {".png", ".jpg", ".jpeg", ".bmp"};

std::map<std::string, fs::path> scan_stems(const fs::path& dir,
                                           const std::set<std::string>& exts) {
    std::map<std::string, fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (exts.count(ext)) out.emplace(e.path().stem().string(), e.path());
    }
    return out;
}

}  // namespace

std::vector<DefocusSample> load_dataset(const fs::path& root, const std::string& split) {
    const fs::path base = split.empty() ? root : root / split;
    if (!fs::exists(base))
        throw std::runtime_error("load_dataset: no such directory " + base.string());
    const auto images = scan_stems(base / "image", kImageExts);
    const auto gts = scan_stems(base / "gt", {".png", ".bmp"});
    const auto depths = scan_stems(base / "depth", {".pfm"});

    std::vector<DefocusSample> samples;
    samples.reserve(images.size());
    for (const auto& [stem, img_path] : images) {  // std::map: lexicographic order
        auto git = gts.find(stem);
        if (git == gts.end())
            throw std::runtime_error("load_dataset: missing ground truth for stem '" +
                                     stem + "'");
        DefocusSample s;
        s.id = stem;
        s.image = io::read_rgb8(img_path);
        s.mask = io::read_mask(git->second);
        if (s.mask.h() != s.image.h() || s.mask.w() != s.image.w())
            throw std::runtime_error("load_dataset: image/mask size mismatch for '" +
                                     stem + "'");
        auto dit = depths.find(stem);
        if (dit != depths.end()) {
            distill::DepthMap raw{io::read_pfm(dit->second), false};
            s.depth = distill::normalize(raw).values;
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_dataset(const std::vector<DefocusSample>& samples, const fs::path& root) {
    fs::create_directories(root / "image");
    fs::create_directories(root / "gt");
    const bool any_depth =
        std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.depth.has_value(); });
    if (any_depth) fs::create_directories(root / "depth");
    for (const auto& s : samples) {
        io::write_rgb8(root / "image" / (s.id + ".png"), s.image);
        io::write_gray8(root / "gt" / (s.id + ".png"), s.mask);
        if (s.depth) io::write_pfm(root / "depth" / (s.id + ".pfm"), *s.depth);
    }
}

Tensor resize_bilinear_map(const Tensor& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("resize_bilinear_map: degenerate target size");
    if (src.h() == out_h && src.w() == out_w) return src;
    Tensor out(src.n(), src.c(), out_h, out_w);
    const double sy = static_cast<double>(src.h()) / out_h;
    const double sx = static_cast<double>(src.w()) / out_w;
    for (int n = 0; n < src.n(); ++n)
        for (int c = 0; c < src.c(); ++c)
            for (int y = 0; y < out_h; ++y) {
                const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.h() - 1.0);
                const int y0 = static_cast<int>(std::floor(fy));
                const int y1 = std::min(y0 + 1, src.h() - 1);
                const double wy = fy - y0;
                for (int x = 0; x < out_w; ++x) {
                    const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.w() - 1.0);
                    const int x0 = static_cast<int>(std::floor(fx));
                    const int x1 = std::min(x0 + 1, src.w() - 1);
                    const double wx = fx - x0;
                    const double top =
                        src.at(n, c, y0, x0) * (1 - wx) + src.at(n, c, y0, x1) * wx;
                    const double bot =
                        src.at(n, c, y1, x0) * (1 - wx) + src.at(n, c, y1, x1) * wx;
                    out.at(n, c, y, x) = top * (1 - wy) + bot * wy;
                }
            }
    return out;
}

Tensor resize_nearest_map(const Tensor& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("resize_nearest_map: degenerate target size");
    if (src.h() == out_h && src.w() == out_w) return src;
    Tensor out(src.n(), src.c(), out_h, out_w);
    const double sy = static_cast<double>(src.h()) / out_h;
    const double sx = static_cast<double>(src.w()) / out_w;
    for (int n = 0; n < src.n(); ++n)
        for (int c = 0; c < src.c(); ++c)
            for (int y = 0; y < out_h; ++y) {
                const int ys = std::min(static_cast<int>((y + 0.5) * sy), src.h() - 1);
                for (int x = 0; x < out_w; ++x) {
                    const int xs = std::min(static_cast<int>((x + 0.5) * sx), src.w() - 1);
                    out.at(n, c, y, x) = src.at(n, c, ys, xs);
                }
            }
    return out;
}

DefocusSample preprocess(const DefocusSample& sample, const PreprocessOptions& opts,
                         std::mt19937_64& rng) {
    if (sample.image.h() < 1 || sample.image.w() < 1 || opts.height < 1 || opts.width < 1)
        throw std::invalid_argument("preprocess: degenerate input or target size");

    DefocusSample out;
    out.id = sample.id;
    out.image = resize_bilinear_map(sample.image, opts.height, opts.width);
    out.mask = resize_nearest_map(sample.mask, opts.height, opts.width);
    if (sample.depth) {
        Tensor d = resize_bilinear_map(*sample.depth, opts.height, opts.width);
        out.depth = distill::normalize({std::move(d), false}).values;
    }

    bool flip = false;
    if (opts.augment) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        flip = u(rng) < 0.5;
    }
    if (flip) {
        auto hflip = [](Tensor& t) {
            for (int n = 0; n < t.n(); ++n)
                for (int c = 0; c < t.c(); ++c)
                    for (int y = 0; y < t.h(); ++y)
                        for (int x = 0; x < t.w() / 2; ++x)
                            std::swap(t.at(n, c, y, x), t.at(n, c, y, t.w() - 1 - x));
        };
        hflip(out.image);
        hflip(out.mask);
        if (out.depth) hflip(*out.depth);
    }

    for (int c = 0; c < 3; ++c) {
        const double m = opts.mean[c], s = opts.stddev[c];
        for (int y = 0; y < out.image.h(); ++y)
            for (int x = 0; x < out.image.w(); ++x)
                out.image.at(0, c, y, x) = (out.image.at(0, c, y, x) - m) / s;
    }
    return out;
}

namespace {

// Smooth sinusoid field plus white noise; both foreground and background draw
// from the same family so sharpness is the only separating cue.
Tensor texture(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 3> waves;
    for (auto& wv : waves)
        wv = {1.5 + 4.5 * u(rng), 1.5 + 4.5 * u(rng), 2 * 3.14159265358979 * u(rng),
              0.5 + 0.5 * u(rng)};
    std::array<double, 3> tint;
    for (auto& t : tint) t = 0.6 + 0.4 * u(rng);

    Tensor img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double field = 0.0;
            for (const auto& wv : waves)
                field += wv.amp * std::sin(2 * 3.14159265358979 *
                                               (wv.fx * x / w + wv.fy * y / h) +
                                           wv.phase);
            field /= 3.0;
            for (int c = 0; c < 3; ++c) {
                const double noise = 2.0 * u(rng) - 1.0;
                const double v = 0.5 + 0.20 * field * tint[c] + 0.22 * noise;
                img.at(0, c, y, x) = std::clamp(v, 0.02, 0.98);
            }
        }
    return img;
}

// Separable Gaussian with reflect-101 borders.
Tensor gaussian_blur(const Tensor& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;

    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };

    Tensor tmp = zeros_like(src), out = zeros_like(src);
    for (int n = 0; n < src.n(); ++n)
        for (int c = 0; c < src.c(); ++c) {
            for (int y = 0; y < src.h(); ++y)
                for (int x = 0; x < src.w(); ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += k[i + radius] * src.at(n, c, y, reflect(x + i, src.w()));
                    tmp.at(n, c, y, x) = acc;
                }
            for (int y = 0; y < src.h(); ++y)
                for (int x = 0; x < src.w(); ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += k[i + radius] * tmp.at(n, c, reflect(y + i, src.h()), x);
                    out.at(n, c, y, x) = acc;
                }
        }
    return out;
}

}  // namespace

DefocusSample generate_scene(const SceneSpec& spec) {
    if (spec.sigma_bg <= 0.0)
        throw std::invalid_argument("generate_scene: sigma_bg must be positive");
    DefocusSample s;
    s.id = "scene_" + std::to_string(spec.seed);
    s.mask = rasterize_foreground(spec);

    Tensor bg = gaussian_blur(texture(spec.height, spec.width, spec.bg_texture_seed),
                              spec.sigma_bg);
    Tensor fg = texture(spec.height, spec.width, spec.fg_texture_seed);
    s.image = Tensor(1, 3, spec.height, spec.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const bool in = s.mask.at(0, 0, y, x) > 0.5;
                s.image.at(0, c, y, x) = in ? fg.at(0, c, y, x) : bg.at(0, c, y, x);
            }

    s.depth = distill::normalize(distill::synthetic_teacher(spec)).values;
    return s;
}

SceneSpec random_scene_spec(std::uint64_t seed, int height, int width) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneSpec s;
    s.height = height;
    s.width = width;
    s.seed = seed;
    s.shape = u(rng) < 0.7 ? SceneSpec::Shape::ellipse : SceneSpec::Shape::polygon;
    s.center_x = 0.32 + 0.36 * u(rng);
    s.center_y = 0.32 + 0.36 * u(rng);
    s.axis_a = 0.16 + 0.12 * u(rng);
    s.axis_b = 0.16 + 0.12 * u(rng);
    s.rotation = 3.14159265358979 * u(rng);
    s.polygon_sides = 4 + static_cast<int>(u(rng) * 4);
    s.shape_seed = rng();
    s.fg_texture_seed = rng();
    s.bg_texture_seed = rng();
    s.sigma_bg = 1.5 + 3.0 * u(rng);
    return s;
}

}  // namespace dbd::data
