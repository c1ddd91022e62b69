#include <doctest.h>

#include "dbd/autodiff.hpp"
#include "helpers.hpp"

using namespace dbd;
using dbd::testing::grad_check;
using dbd::testing::random_tensor;
using dbd::testing::scalarize;

namespace {
std::mt19937_64 rng_for(const char* name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char* p = name; *p; ++p) h = (h ^ static_cast<unsigned char>(*p)) * 1099511628211ULL;
    return std::mt19937_64(h);
}
}  // namespace

TEST_CASE("conv2d forward matches a direct loop") {
    auto rng = rng_for("conv-fwd");
    Tensor x = random_tensor(1, 2, 4, 5, rng);
    Tensor w = random_tensor(3, 2, 3, 3, rng);
    Tensor b = random_tensor(1, 3, 1, 1, rng);
    const int dil = 2;
    ad::Variable y = ad::conv2d(ad::Variable(x), ad::Variable(w), ad::Variable(b), dil);

    const int pad = dil * (3 - 1) / 2;
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 5; ++ox) {
                double acc = b[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sy = oy + ky * dil - pad;
                            const int sx = ox + kx * dil - pad;
                            if (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) continue;
                            acc += w.at(co, ci, ky, kx) * x.at(0, ci, sy, sx);
                        }
                CHECK(y.value().at(0, co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("conv2d gradients (input, weight, bias) vs finite differences") {
    auto rng = rng_for("conv-grad");
    for (int dil : {1, 2}) {
        std::vector<Tensor> inputs = {random_tensor(2, 3, 5, 6, rng),
                                      random_tensor(4, 3, 3, 3, rng),
                                      random_tensor(1, 4, 1, 1, rng)};
        auto r = grad_check(
            [dil](std::vector<ad::Variable>& v) {
                return scalarize(ad::conv2d(v[0], v[1], v[2], dil));
            },
            inputs);
        CAPTURE(dil);
        CHECK(r.max_rel_err < 1e-5);
    }
}

TEST_CASE("conv2d 1x1 acts per pixel") {
    auto rng = rng_for("conv-1x1");
    std::vector<Tensor> inputs = {random_tensor(1, 4, 3, 3, rng),
                                  random_tensor(2, 4, 1, 1, rng),
                                  random_tensor(1, 2, 1, 1, rng)};
    auto r = grad_check(
        [](std::vector<ad::Variable>& v) { return scalarize(ad::conv2d(v[0], v[1], v[2])); },
        inputs);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("conv2d rejects even kernels and bad shapes") {
    Tensor x(1, 2, 4, 4), w_even(2, 2, 2, 2), b(1, 2, 1, 1);
    CHECK_THROWS_AS(ad::conv2d(ad::Variable(x), ad::Variable(w_even), ad::Variable(b)),
                    std::invalid_argument);
    Tensor w_mismatch(2, 3, 3, 3);
    CHECK_THROWS_AS(ad::conv2d(ad::Variable(x), ad::Variable(w_mismatch), ad::Variable(b)),
                    std::invalid_argument);
    Tensor w(2, 2, 3, 3);
    CHECK_THROWS_AS(ad::conv2d(ad::Variable(x), ad::Variable(w), ad::Variable(b), 0),
                    std::invalid_argument);
}

TEST_CASE("pointwise and arithmetic op gradients") {
    auto rng = rng_for("pointwise");
    Tensor a = random_tensor(2, 3, 4, 4, rng);
    // keep relu inputs away from the kink
    for (size_t i = 0; i < a.numel(); ++i)
        if (std::fabs(a[i]) < 1e-3) a[i] += 0.1;
    Tensor b = random_tensor(2, 3, 4, 4, rng);

    auto check1 = [&](const char* name,
                      std::function<ad::Variable(const ad::Variable&)> op) {
        auto r = grad_check(
            [&](std::vector<ad::Variable>& v) { return scalarize(op(v[0])); }, {a});
        CAPTURE(name);
        CHECK(r.max_rel_err < 1e-6);
    };
    check1("relu", [](const ad::Variable& x) { return ad::relu(x); });
    check1("sigmoid", [](const ad::Variable& x) { return ad::sigmoid(x); });
    check1("scale", [](const ad::Variable& x) { return ad::scale(x, -2.5); });

    auto r2 = grad_check(
        [](std::vector<ad::Variable>& v) { return scalarize(ad::mul(v[0], v[1])); },
        {a, b});
    CHECK(r2.max_rel_err < 1e-6);
    r2 = grad_check(
        [](std::vector<ad::Variable>& v) { return scalarize(ad::sub(v[0], v[1])); },
        {a, b});
    CHECK(r2.max_rel_err < 1e-6);
    r2 = grad_check(
        [](std::vector<ad::Variable>& v) {
            return scalarize(ad::add_n({v[0], v[1], v[0]}));
        },
        {a, b});
    CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("channel-broadcast multiply gradient") {
    auto rng = rng_for("bcast");
    auto r = grad_check(
        [](std::vector<ad::Variable>& v) {
            return scalarize(ad::mul_channel_broadcast(v[0], v[1]));
        },
        {random_tensor(2, 4, 3, 5, rng), random_tensor(2, 1, 3, 5, rng)});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("concat_channels forward and gradient") {
    auto rng = rng_for("concat");
    Tensor a = random_tensor(1, 2, 3, 3, rng), b = random_tensor(1, 3, 3, 3, rng);
    ad::Variable y = ad::concat_channels({ad::Variable(a), ad::Variable(b)});
    CHECK(y.value().c() == 5);
    CHECK(y.value().at(0, 0, 1, 2) == a.at(0, 0, 1, 2));
    CHECK(y.value().at(0, 4, 2, 0) == b.at(0, 2, 2, 0));

    auto r = grad_check(
        [](std::vector<ad::Variable>& v) {
            return scalarize(ad::concat_channels({v[0], v[1]}));
        },
        {a, b});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("bilinear resize: up, down, identity and gradient") {
    auto rng = rng_for("resize");
    Tensor x = random_tensor(1, 2, 3, 4, rng);
    ad::Variable same = ad::resize_bilinear(ad::Variable(x), 3, 4);
    CHECK(max_abs_diff(same.value(), x) == 0.0);

    for (auto [oh, ow] : std::vector<std::pair<int, int>>{{6, 8}, {2, 3}, {7, 5}}) {
        auto r = grad_check(
            [oh = oh, ow = ow](std::vector<ad::Variable>& v) {
                return scalarize(ad::resize_bilinear(v[0], oh, ow));
            },
            {x});
        CAPTURE(oh);
        CHECK(r.max_rel_err < 1e-6);
    }

    // constant maps stay constant under resize
    Tensor c = Tensor::full(1, 1, 5, 5, 3.25);
    ad::Variable up = ad::resize_bilinear(ad::Variable(c), 13, 9);
    CHECK(up.value().min() == doctest::Approx(3.25));
    CHECK(up.value().max() == doctest::Approx(3.25));
}

TEST_CASE("max_pool2 forward and gradient routing") {
    auto rng = rng_for("pool");
    Tensor x = random_tensor(2, 2, 4, 6, rng);
    // spread values so finite differences cannot flip the argmax
    for (size_t i = 0; i < x.numel(); ++i) x[i] += 0.01 * static_cast<double>(i % 97);
    ad::Variable y = ad::max_pool2(ad::Variable(x));
    CHECK(y.value().h() == 2);
    CHECK(y.value().w() == 3);
    CHECK(y.value().at(0, 0, 0, 0) ==
          std::max({x.at(0, 0, 0, 0), x.at(0, 0, 0, 1), x.at(0, 0, 1, 0), x.at(0, 0, 1, 1)}));

    auto r = grad_check(
        [](std::vector<ad::Variable>& v) { return scalarize(ad::max_pool2(v[0])); }, {x});
    CHECK(r.max_rel_err < 1e-6);

    Tensor odd(1, 1, 3, 4);
    CHECK_THROWS_AS(ad::max_pool2(ad::Variable(odd)), std::invalid_argument);
}

TEST_CASE("global_avg_pool value and gradient") {
    auto rng = rng_for("gap");
    Tensor x = random_tensor(2, 3, 4, 4, rng);
    ad::Variable y = ad::global_avg_pool(ad::Variable(x));
    double acc = 0.0;
    for (int i = 0; i < 16; ++i) acc += x.at(1, 2, i / 4, i % 4);
    CHECK(y.value().at(1, 2, 0, 0) == doctest::Approx(acc / 16.0));

    auto r = grad_check(
        [](std::vector<ad::Variable>& v) { return scalarize(ad::global_avg_pool(v[0])); },
        {x});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax_groups normalizes per channel and differentiates") {
    auto rng = rng_for("softmax");
    const int G = 4, C = 3;
    Tensor x = random_tensor(2, G * C, 1, 1, rng, -2.0, 2.0);
    ad::Variable p = ad::softmax_groups(ad::Variable(x), G);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int g = 0; g < G; ++g) {
                const double v = p.value().at(b, g * C + c, 0, 0);
                CHECK(v > 0.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }

    auto r = grad_check(
        [G](std::vector<ad::Variable>& v) {
            return scalarize(ad::softmax_groups(v[0], G));
        },
        {x});
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("group_norm statistics and gradients across group counts") {
    auto rng = rng_for("gn");
    Tensor x = random_tensor(2, 6, 3, 4, rng);
    Tensor gamma = random_tensor(1, 6, 1, 1, rng, 0.5, 1.5);
    Tensor beta = random_tensor(1, 6, 1, 1, rng, -0.5, 0.5);

    for (int groups : {1, 2, 3, 6}) {
        ad::Variable y = ad::group_norm(ad::Variable(x), ad::Variable(gamma),
                                        ad::Variable(beta), groups);
        // unit-gamma zero-beta normalization has zero mean per (sample, group)
        ad::Variable yn = ad::group_norm(ad::Variable(x),
                                         ad::Variable(Tensor::full(1, 6, 1, 1, 1.0)),
                                         ad::Variable(Tensor(1, 6, 1, 1)), groups);
        const int cpg = 6 / groups;
        for (int b = 0; b < 2; ++b)
            for (int g = 0; g < groups; ++g) {
                double mean = 0.0;
                for (int cc = 0; cc < cpg; ++cc)
                    for (int i = 0; i < 12; ++i)
                        mean += yn.value().at(b, g * cpg + cc, i / 4, i % 4);
                mean /= cpg * 12;
                CHECK(std::fabs(mean) < 1e-10);
            }

        auto r = grad_check(
            [groups](std::vector<ad::Variable>& v) {
                return scalarize(ad::group_norm(v[0], v[1], v[2], groups));
            },
            {x, gamma, beta});
        CAPTURE(groups);
        CHECK(r.max_rel_err < 1e-5);
    }
}

TEST_CASE("group_norm survives a single spatial position") {
    auto rng = rng_for("gn1x1");
    Tensor x = random_tensor(1, 8, 1, 1, rng);
    auto r = grad_check(
        [](std::vector<ad::Variable>& v) {
            return scalarize(ad::group_norm(v[0], v[1], v[2], 2));
        },
        {x, Tensor::full(1, 8, 1, 1, 1.0), random_tensor(1, 8, 1, 1, rng)});
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("backward accumulates through shared subgraphs") {
    Tensor x = Tensor::full(1, 1, 1, 1, 3.0);
    ad::Variable v(x, true);
    ad::Variable y = ad::mul(v, v);  // y = x^2, dy/dx = 2x = 6
    ad::backward(ad::mean_all(y));
    CHECK(v.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("inference graphs carry no parents") {
    Tensor x = Tensor::full(1, 1, 2, 2, 1.0);
    ad::Variable v(x, false);
    ad::Variable y = ad::relu(v);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("norm_groups_for picks a divisor") {
    CHECK(ad::norm_groups_for(32) == 8);
    CHECK(ad::norm_groups_for(8) == 8);
    CHECK(ad::norm_groups_for(4) == 4);
    CHECK(ad::norm_groups_for(6) == 6);
    CHECK(ad::norm_groups_for(3) == 3);
    CHECK(ad::norm_groups_for(1) == 1);
    CHECK(ad::norm_groups_for(12) == 6);
}
