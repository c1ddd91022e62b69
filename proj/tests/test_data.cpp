#include <doctest.h>

#include <filesystem>

#include "dbd/data.hpp"
#include "dbd/distill.hpp"
#include "dbd/image_io.hpp"
#include "helpers.hpp"

using namespace dbd;
using namespace dbd::data;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("dbd_data_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Tensor luminance(const Tensor& img) {
    Tensor out(1, 1, img.h(), img.w());
    for (int y = 0; y < img.h(); ++y)
        for (int x = 0; x < img.w(); ++x)
            out.at(0, 0, y, x) =
                (img.at(0, 0, y, x) + img.at(0, 1, y, x) + img.at(0, 2, y, x)) / 3.0;
    return out;
}

// Mean gradient magnitude / Laplacian energy inside a region, excluding pixels
// within `margin` of the region boundary (the composite edge is not texture).
bool far_from_boundary(const Tensor& mask, int y, int x, int margin) {
    const double v = mask.at(0, 0, y, x);
    for (int dy = -margin; dy <= margin; ++dy)
        for (int dx = -margin; dx <= margin; ++dx) {
            const int yy = std::clamp(y + dy, 0, mask.h() - 1);
            const int xx = std::clamp(x + dx, 0, mask.w() - 1);
            if (mask.at(0, 0, yy, xx) != v) return false;
        }
    return true;
}

double region_grad(const Tensor& lum, const Tensor& mask, double region, int margin = 3) {
    double acc = 0.0;
    long long n = 0;
    for (int y = 0; y < lum.h() - 1; ++y)
        for (int x = 0; x < lum.w() - 1; ++x) {
            if (mask.at(0, 0, y, x) != region) continue;
            if (!far_from_boundary(mask, y, x, margin)) continue;
            const double gx = lum.at(0, 0, y, x + 1) - lum.at(0, 0, y, x);
            const double gy = lum.at(0, 0, y + 1, x) - lum.at(0, 0, y, x);
            acc += std::sqrt(gx * gx + gy * gy);
            ++n;
        }
    return n > 0 ? acc / n : 0.0;
}

double region_laplacian_energy(const Tensor& lum, const Tensor& mask, double region,
                               int margin = 3) {
    double acc = 0.0;
    long long n = 0;
    for (int y = 1; y < lum.h() - 1; ++y)
        for (int x = 1; x < lum.w() - 1; ++x) {
            if (mask.at(0, 0, y, x) != region) continue;
            if (!far_from_boundary(mask, y, x, margin)) continue;
            const double lap = 4 * lum.at(0, 0, y, x) - lum.at(0, 0, y - 1, x) -
                               lum.at(0, 0, y + 1, x) - lum.at(0, 0, y, x - 1) -
                               lum.at(0, 0, y, x + 1);
            acc += lap * lap;
            ++n;
        }
    return n > 0 ? acc / n : 0.0;
}
}  // namespace

TEST_CASE("load_dataset: empty directory gives an empty sequence") {
    const fs::path dir = temp_dir("empty");
    fs::create_directories(dir / "image");
    fs::create_directories(dir / "gt");
    CHECK(load_dataset(dir).empty());
}

TEST_CASE("load_dataset: sorted stem order, binarized masks") {
    const fs::path dir = temp_dir("sorted");
    fs::create_directories(dir / "image");
    fs::create_directories(dir / "gt");
    std::mt19937_64 rng(4);
    for (const char* stem : {"b", "a", "c"}) {
        io::write_rgb8(dir / "image" / (std::string(stem) + ".png"),
                       dbd::testing::random_tensor(1, 3, 8, 8, rng, 0.0, 1.0));
        // gray values 0, 200, 255 must binarize to 0, 1, 1
        Tensor m(1, 1, 8, 8);
        for (int x = 0; x < 8; ++x) {
            m.at(0, 0, 1, x) = 200.0 / 255.0;
            m.at(0, 0, 2, x) = 1.0;
        }
        io::write_gray8(dir / "gt" / (std::string(stem) + ".png"), m);
    }
    const auto samples = load_dataset(dir);
    REQUIRE(samples.size() == 3);
    CHECK(samples[0].id == "a");
    CHECK(samples[1].id == "b");
    CHECK(samples[2].id == "c");
    for (const auto& s : samples) {
        CHECK(s.mask.at(0, 0, 0, 0) == 0.0);
        CHECK(s.mask.at(0, 0, 1, 3) == 1.0);
        CHECK(s.mask.at(0, 0, 2, 3) == 1.0);
        CHECK_FALSE(s.depth.has_value());
        for (size_t i = 0; i < s.mask.numel(); ++i)
            CHECK((s.mask[i] == 0.0 || s.mask[i] == 1.0));
    }
}

TEST_CASE("load_dataset: missing ground truth names the stem") {
    const fs::path dir = temp_dir("missing_gt");
    fs::create_directories(dir / "image");
    fs::create_directories(dir / "gt");
    std::mt19937_64 rng(5);
    io::write_rgb8(dir / "image" / "lonely.png",
                   dbd::testing::random_tensor(1, 3, 4, 4, rng, 0.0, 1.0));
    try {
        load_dataset(dir);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
}

TEST_CASE("load_dataset: optional depth maps are attached normalized") {
    const fs::path dir = temp_dir("with_depth");
    fs::create_directories(dir / "image");
    fs::create_directories(dir / "gt");
    fs::create_directories(dir / "depth");
    std::mt19937_64 rng(6);
    io::write_rgb8(dir / "image" / "s.png",
                   dbd::testing::random_tensor(1, 3, 6, 6, rng, 0.0, 1.0));
    io::write_gray8(dir / "gt" / "s.png", Tensor::full(1, 1, 6, 6, 1.0));
    io::write_pfm(dir / "depth" / "s.pfm",
                  dbd::testing::random_tensor(1, 1, 6, 6, rng, 0.0, 9.0));
    const auto samples = load_dataset(dir);
    REQUIRE(samples.size() == 1);
    REQUIRE(samples[0].depth.has_value());
    CHECK(std::fabs(samples[0].depth->mean()) < 1e-6);
}

TEST_CASE("preprocess: resize contract and standardization") {
    std::mt19937_64 rng(7);
    DefocusSample s;
    s.id = "t";
    s.image = dbd::testing::random_tensor(1, 3, 480, 640, rng, 0.0, 1.0);
    s.mask = Tensor(1, 1, 480, 640);
    for (int y = 100; y < 300; ++y)
        for (int x = 200; x < 400; ++x) s.mask.at(0, 0, y, x) = 1.0;
    s.depth = dbd::testing::random_tensor(1, 1, 480, 640, rng);

    PreprocessOptions opts;  // 320x320 defaults
    std::mt19937_64 prng(1);
    const DefocusSample p = preprocess(s, opts, prng);
    CHECK(p.image.h() == 320);
    CHECK(p.image.w() == 320);
    CHECK(p.mask.h() == 320);
    REQUIRE(p.depth.has_value());
    CHECK(p.depth->h() == 320);
    for (size_t i = 0; i < p.mask.numel(); ++i)
        CHECK((p.mask[i] == 0.0 || p.mask[i] == 1.0));
    // depth re-standardized after the resize
    CHECK(std::fabs(p.depth->mean()) < 1e-9);

    Tensor zero_dim;
    DefocusSample bad;
    bad.image = zero_dim;
    bad.mask = zero_dim;
    CHECK_THROWS_AS(preprocess(bad, opts, prng), std::invalid_argument);
}

TEST_CASE("preprocess: horizontal flip is consistent and involutive") {
    std::mt19937_64 rng(8);
    DefocusSample s;
    s.id = "f";
    s.image = dbd::testing::random_tensor(1, 3, 32, 32, rng, 0.0, 1.0);
    s.mask = rasterize_foreground(random_scene_spec(3, 32, 32));
    s.depth = dbd::testing::random_tensor(1, 1, 32, 32, rng);

    PreprocessOptions opts;
    opts.height = opts.width = 32;
    std::mt19937_64 r0(0);
    const DefocusSample plain = preprocess(s, opts, r0);

    // find a seed whose first draw triggers the flip
    opts.augment = true;
    DefocusSample flipped;
    bool found = false;
    for (std::uint64_t seed = 0; seed < 16 && !found; ++seed) {
        std::mt19937_64 r(seed);
        DefocusSample cand = preprocess(s, opts, r);
        if (max_abs_diff(cand.image, plain.image) > 0) {
            flipped = cand;
            found = true;
        }
    }
    REQUIRE(found);

    auto hflip = [](const Tensor& t) {
        Tensor out = t;
        for (int n = 0; n < t.n(); ++n)
            for (int c = 0; c < t.c(); ++c)
                for (int y = 0; y < t.h(); ++y)
                    for (int x = 0; x < t.w(); ++x)
                        out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
        return out;
    };
    // flip(flip(x)) == x, and all three planes flip together
    CHECK(max_abs_diff(hflip(flipped.image), plain.image) == 0.0);
    CHECK(max_abs_diff(hflip(flipped.mask), plain.mask) == 0.0);
    CHECK(max_abs_diff(hflip(*flipped.depth), *plain.depth) == 0.0);
}

TEST_CASE("generate_scene: bit-identical for the same spec") {
    const SceneSpec spec = random_scene_spec(11, 64, 64);
    const DefocusSample a = generate_scene(spec);
    const DefocusSample b = generate_scene(spec);
    CHECK(max_abs_diff(a.image, b.image) == 0.0);
    CHECK(max_abs_diff(a.mask, b.mask) == 0.0);
    CHECK(max_abs_diff(*a.depth, *b.depth) == 0.0);
}

TEST_CASE("generate_scene: shapes reaching outside the canvas are clipped") {
    SceneSpec spec = random_scene_spec(61, 48, 48);
    spec.shape = SceneSpec::Shape::ellipse;
    spec.center_x = 0.95;
    spec.center_y = 0.5;
    spec.axis_a = 0.3;
    spec.axis_b = 0.3;
    const DefocusSample s = generate_scene(spec);  // no error
    const double area = s.mask.sum();
    CHECK(area > 0.0);
    CHECK(area < analytic_foreground_area(spec));  // part fell off the canvas
}

TEST_CASE("generate_scene: rasterized ellipse area within 2% of analytic") {
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
        SceneSpec spec = random_scene_spec(seed, 96, 96);
        spec.shape = SceneSpec::Shape::ellipse;
        const DefocusSample s = generate_scene(spec);
        const double analytic = analytic_foreground_area(spec);
        const double rasterized = s.mask.sum();
        CAPTURE(seed);
        CHECK(std::fabs(rasterized - analytic) / analytic < 0.02);
    }
}

TEST_CASE("generate_scene: in-focus region has larger local gradients for sigma >= 1") {
    for (double sigma : {1.0, 2.0, 4.0}) {
        for (std::uint64_t seed = 40; seed < 44; ++seed) {
            SceneSpec spec = random_scene_spec(seed, 96, 96);
            spec.sigma_bg = sigma;
            const DefocusSample s = generate_scene(spec);
            const Tensor lum = luminance(s.image);
            const double g_in = region_grad(lum, s.mask, 1.0);
            const double g_out = region_grad(lum, s.mask, 0.0);
            CAPTURE(sigma);
            CAPTURE(seed);
            CHECK(g_in > g_out);
        }
    }
}

TEST_CASE("generate_scene: sharp-background limit balances high-frequency energy") {
    SceneSpec spec = random_scene_spec(55, 96, 96);
    spec.sigma_bg = 0.05;  // near-sharp background
    const DefocusSample sharp = generate_scene(spec);
    const Tensor lum = luminance(sharp.image);
    const double e_out = region_laplacian_energy(lum, sharp.mask, 0.0);
    const double e_in = region_laplacian_energy(lum, sharp.mask, 1.0);
    const double ratio = e_out / e_in;
    CHECK(ratio > 0.6);
    CHECK(ratio < 1.7);

    spec.sigma_bg = 3.0;
    const DefocusSample blurred = generate_scene(spec);
    const Tensor lum2 = luminance(blurred.image);
    const double ratio2 = region_laplacian_energy(lum2, blurred.mask, 0.0) /
                          region_laplacian_energy(lum2, blurred.mask, 1.0);
    CHECK(ratio2 < 0.15);
}

TEST_CASE("generate_scene: blur assignment correlates with depth distance") {
    int scenes = 0;
    for (std::uint64_t seed = 500; seed < 600; ++seed) {
        const SceneSpec spec = random_scene_spec(seed, 64, 64);
        const distill::DepthMap raw = distill::synthetic_teacher(spec);
        const Tensor mask = rasterize_foreground(spec);
        if (mask.sum() < 8) continue;  // degenerate foreground, skip

        // per-pixel blur is 0 on the sharp foreground, sigma_bg elsewhere
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        const double n = static_cast<double>(mask.numel());
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const double blur = mask.at(0, 0, y, x) > 0.5 ? 0.0 : spec.sigma_bg;
                const double dd = std::fabs(raw.values.at(0, 0, y, x) - spec.depth_fg);
                sx += blur;
                sy += dd;
                sxx += blur * blur;
                syy += dd * dd;
                sxy += blur * dd;
            }
        const double cov = sxy / n - (sx / n) * (sy / n);
        const double vx = sxx / n - (sx / n) * (sx / n);
        const double vy = syy / n - (sy / n) * (sy / n);
        const double corr = cov / std::sqrt(vx * vy);
        CAPTURE(seed);
        CHECK(corr > 0.9);
        ++scenes;
    }
    CHECK(scenes >= 95);
}

TEST_CASE("scene without foreground yields a pure depth ramp") {
    SceneSpec spec = random_scene_spec(77, 48, 32);
    spec.has_foreground = false;
    const distill::DepthMap raw = distill::synthetic_teacher(spec);
    // matches the analytic ramp teacher after normalization
    const distill::DepthMap norm = distill::normalize(raw);
    const distill::DepthMap ramp = distill::teacher_depth(
        "x", 48, 32, distill::TeacherSource{distill::TeacherKind::synthetic, ""});
    CHECK(max_abs_diff(norm.values, ramp.values) < 1e-9);

    const DefocusSample s = generate_scene(spec);
    CHECK(s.mask.sum() == 0.0);
    // foreground pixels all share one raw depth value in the shaped variant
    spec.has_foreground = true;
    const distill::DepthMap shaped = distill::synthetic_teacher(spec);
    const Tensor mask = rasterize_foreground(spec);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            if (mask.at(0, 0, y, x) > 0.5)
                CHECK(shaped.values.at(0, 0, y, x) == spec.depth_fg);
}

TEST_CASE("write_dataset / load_dataset round trip") {
    const fs::path dir = temp_dir("roundtrip");
    std::vector<DefocusSample> scenes;
    for (std::uint64_t seed = 0; seed < 3; ++seed)
        scenes.push_back(generate_scene(random_scene_spec(seed, 32, 32)));
    write_dataset(scenes, dir);
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].id == scenes[i].id);
        CHECK(max_abs_diff(loaded[i].mask, scenes[i].mask) == 0.0);
        // images pass through 8-bit quantization
        CHECK(max_abs_diff(loaded[i].image, scenes[i].image) <= 0.5 / 255.0 + 1e-9);
        REQUIRE(loaded[i].depth.has_value());
        CHECK(max_abs_diff(*loaded[i].depth, *scenes[i].depth) < 1e-5);
    }
}
