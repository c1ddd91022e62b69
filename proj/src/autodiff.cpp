#include "dbd/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace dbd::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Scatters x into a (Cin*kh*kw) x (H*W) patch matrix for one sample.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int dil,
            double* col) {
    const int pad_h = dil * (kh - 1) / 2;
    const int pad_w = dil * (kw - 1) / 2;
    const size_t plane = static_cast<size_t>(H) * W;
    size_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        const double* xc = x + ci * plane;
        for (int ky = 0; ky < kh; ++ky) {
            const int oy = ky * dil - pad_h;
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const int ox = kx * dil - pad_w;
                double* dst = col + row * plane;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst, dst + W, 0.0);
                        dst += W;
                        continue;
                    }
                    const double* src = xc + static_cast<size_t>(sy) * W;
                    for (int x2 = 0; x2 < W; ++x2) {
                        const int sx = x2 + ox;
                        *dst++ = (sx < 0 || sx >= W) ? 0.0 : src[sx];
                    }
                }
            }
        }
    }
}

// Transpose of im2col: accumulates the patch matrix back into dx.
void col2im_acc(const double* col, int C, int H, int W, int kh, int kw, int dil,
                double* dx) {
    const int pad_h = dil * (kh - 1) / 2;
    const int pad_w = dil * (kw - 1) / 2;
    const size_t plane = static_cast<size_t>(H) * W;
    size_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        double* xc = dx + ci * plane;
        for (int ky = 0; ky < kh; ++ky) {
            const int oy = ky * dil - pad_h;
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const int ox = kx * dil - pad_w;
                const double* src = col + row * plane;
                for (int y = 0; y < H; ++y, src += W) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= H) continue;
                    double* dst = xc + static_cast<size_t>(sy) * W;
                    for (int x2 = 0; x2 < W; ++x2) {
                        const int sx = x2 + ox;
                        if (sx >= 0 && sx < W) dst[sx] += src[x2];
                    }
                }
            }
        }
    }
}

bool any_requires(const std::vector<Variable>& parents) {
    for (const auto& p : parents)
        if (p.requires_grad()) return true;
    return false;
}

}  // namespace

Variable::Variable(Tensor value, bool requires_grad) {
    node_ = std::make_shared<Node>();
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->id = g_next_id.fetch_add(1);
}

Variable make_op(Tensor value, std::vector<Variable> parents,
                 std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1);
    if (any_requires(parents)) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Variable(std::move(n));
}

void backward(const Variable& scalar_root) {
    check(scalar_root.defined() && scalar_root.value().numel() == 1,
          "backward: root must be a defined scalar");
    if (!scalar_root.requires_grad()) return;

    // Collect reachable grad-requiring nodes; creation id gives topo order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{scalar_root.node().get()};
    seen.insert(stack.back());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    scalar_root.node()->ensure_grad()[0] += 1.0;
    for (Node* n : order) {
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias,
                int dilation) {
    const Tensor& xt = x.value();
    const Tensor& wt = weight.value();
    const Tensor& bt = bias.value();
    check(dilation >= 1, "conv2d: dilation must be >= 1");
    check(wt.h() % 2 == 1 && wt.w() % 2 == 1, "conv2d: kernel must be odd");
    check(xt.c() == wt.c(), "conv2d: channel mismatch, input " + xt.shape_str() +
                                " vs weight " + wt.shape_str());
    check(xt.h() >= 1 && xt.w() >= 1 && xt.n() >= 1, "conv2d: non-positive input dims");
    check(bt.c() == wt.n() && bt.n() == 1 && bt.h() == 1 && bt.w() == 1,
          "conv2d: bias must be (1,Cout,1,1)");

    const int B = xt.n(), Cin = xt.c(), H = xt.h(), W = xt.w();
    const int Cout = wt.n(), kh = wt.h(), kw = wt.w();
    const size_t K = static_cast<size_t>(Cin) * kh * kw;
    const size_t P = static_cast<size_t>(H) * W;

    Tensor out(B, Cout, H, W);
    std::vector<double> col(K * P);
    CMapRM Wm(wt.data(), Cout, static_cast<Eigen::Index>(K));
    for (int b = 0; b < B; ++b) {
        im2col(xt.data() + xt.index(b, 0, 0, 0), Cin, H, W, kh, kw, dilation, col.data());
        CMapRM Cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        MapRM Ym(out.data() + out.index(b, 0, 0, 0), Cout, static_cast<Eigen::Index>(P));
        Ym.noalias() = Wm * Cm;
        for (int co = 0; co < Cout; ++co) Ym.row(co).array() += bt[co];
    }

    return make_op(std::move(out), {x, weight, bias}, [=](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        const Tensor& g = self.grad;
        std::vector<double> colbuf(K * P);
        CMapRM Wm2(wv.data(), Cout, static_cast<Eigen::Index>(K));

        const bool need_dx = self.parents[0]->requires_grad;
        const bool need_dw = self.parents[1]->requires_grad;
        const bool need_db = self.parents[2]->requires_grad;
        Tensor* dx = need_dx ? &self.parents[0]->ensure_grad() : nullptr;
        Tensor* dw = need_dw ? &self.parents[1]->ensure_grad() : nullptr;
        Tensor* db = need_db ? &self.parents[2]->ensure_grad() : nullptr;
        std::vector<double> dcol(need_dx ? K * P : 0);

        for (int b = 0; b < B; ++b) {
            CMapRM Gm(g.data() + g.index(b, 0, 0, 0), Cout, static_cast<Eigen::Index>(P));
            if (need_dw) {
                im2col(xv.data() + xv.index(b, 0, 0, 0), Cin, H, W, kh, kw, dilation,
                       colbuf.data());
                CMapRM Cm(colbuf.data(), static_cast<Eigen::Index>(K),
                          static_cast<Eigen::Index>(P));
                MapRM dWm(dw->data(), Cout, static_cast<Eigen::Index>(K));
                dWm.noalias() += Gm * Cm.transpose();
            }
            if (need_db) {
                // serial sum: Eigen's vectorized redux peels by pointer alignment,
                // which breaks bitwise run-to-run reproducibility
                for (int co = 0; co < Cout; ++co) {
                    const double* grow = g.data() + g.index(b, co, 0, 0);
                    double s = 0.0;
                    for (size_t i = 0; i < P; ++i) s += grow[i];
                    (*db)[co] += s;
                }
            }
            if (need_dx) {
                MapRM dCm(dcol.data(), static_cast<Eigen::Index>(K),
                          static_cast<Eigen::Index>(P));
                dCm.noalias() = Wm2.transpose() * Gm;
                col2im_acc(dcol.data(), Cin, H, W, kh, kw, dilation,
                           dx->data() + dx->index(b, 0, 0, 0));
            }
        }
    });
}

Variable relu(const Variable& x) {
    Tensor out = x.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return make_op(std::move(out), {x}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& dx = self.parents[0]->ensure_grad();
        const Tensor& xv = self.parents[0]->value;
        for (size_t i = 0; i < dx.numel(); ++i)
            if (xv[i] > 0.0) dx[i] += self.grad[i];
    });
}

Variable sigmoid(const Variable& x) {
    Tensor out = x.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_op(std::move(out), {x}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& dx = self.parents[0]->ensure_grad();
        const Tensor& y = self.value;
        for (size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Variable add(const Variable& a, const Variable& b) {
    check(a.value().same_shape(b.value()), "add: shape mismatch");
    Tensor out = a.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            if (!self.parents[k]->requires_grad) continue;
            Tensor& d = self.parents[k]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
        }
    });
}

Variable sub(const Variable& a, const Variable& b) {
    check(a.value().same_shape(b.value()), "sub: shape mismatch");
    Tensor out = a.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& d = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& d = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] -= self.grad[i];
        }
    });
}

Variable mul(const Variable& a, const Variable& b) {
    check(a.value().same_shape(b.value()), "mul: shape mismatch");
    Tensor out = a.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Tensor& d = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& d = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * av[i];
        }
    });
}

Variable scale(const Variable& x, double s) {
    Tensor out = x.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_op(std::move(out), {x}, [s](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < d.numel(); ++i) d[i] += s * self.grad[i];
    });
}

Variable add_n(const std::vector<Variable>& xs) {
    check(!xs.empty(), "add_n: empty input");
    Tensor out = xs[0].value();
    for (size_t k = 1; k < xs.size(); ++k) {
        check(out.same_shape(xs[k].value()), "add_n: shape mismatch");
        for (size_t i = 0; i < out.numel(); ++i) out[i] += xs[k].value()[i];
    }
    return make_op(std::move(out), xs, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            Tensor& d = p->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
        }
    });
}

Variable mul_channel_broadcast(const Variable& x, const Variable& a) {
    const Tensor& xt = x.value();
    const Tensor& at = a.value();
    check(at.c() == 1 && at.n() == xt.n() && at.h() == xt.h() && at.w() == xt.w(),
          "mul_channel_broadcast: attention must be (B,1,H,W) matching input");
    Tensor out = xt;
    const size_t plane = static_cast<size_t>(xt.h()) * xt.w();
    for (int b = 0; b < xt.n(); ++b) {
        const double* am = at.data() + at.index(b, 0, 0, 0);
        for (int c = 0; c < xt.c(); ++c) {
            double* o = out.data() + out.index(b, c, 0, 0);
            for (size_t i = 0; i < plane; ++i) o[i] *= am[i];
        }
    }
    return make_op(std::move(out), {x, a}, [plane](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& av = self.parents[1]->value;
        const Tensor& g = self.grad;
        if (self.parents[0]->requires_grad) {
            Tensor& dx = self.parents[0]->ensure_grad();
            for (int b = 0; b < xv.n(); ++b) {
                const double* am = av.data() + av.index(b, 0, 0, 0);
                for (int c = 0; c < xv.c(); ++c) {
                    double* d = dx.data() + dx.index(b, c, 0, 0);
                    const double* gm = g.data() + g.index(b, c, 0, 0);
                    for (size_t i = 0; i < plane; ++i) d[i] += gm[i] * am[i];
                }
            }
        }
        if (self.parents[1]->requires_grad) {
            Tensor& da = self.parents[1]->ensure_grad();
            for (int b = 0; b < xv.n(); ++b) {
                double* d = da.data() + da.index(b, 0, 0, 0);
                for (int c = 0; c < xv.c(); ++c) {
                    const double* xm = xv.data() + xv.index(b, c, 0, 0);
                    const double* gm = g.data() + g.index(b, c, 0, 0);
                    for (size_t i = 0; i < plane; ++i) d[i] += gm[i] * xm[i];
                }
            }
        }
    });
}

Variable concat_channels(const std::vector<Variable>& xs) {
    check(!xs.empty(), "concat_channels: empty input");
    const Tensor& f = xs[0].value();
    int ctotal = 0;
    for (const auto& v : xs) {
        const Tensor& t = v.value();
        check(t.n() == f.n() && t.h() == f.h() && t.w() == f.w(),
              "concat_channels: spatial/batch mismatch");
        ctotal += t.c();
    }
    Tensor out(f.n(), ctotal, f.h(), f.w());
    const size_t plane = static_cast<size_t>(f.h()) * f.w();
    for (int b = 0; b < f.n(); ++b) {
        int co = 0;
        for (const auto& v : xs) {
            const Tensor& t = v.value();
            std::copy_n(t.data() + t.index(b, 0, 0, 0), t.c() * plane,
                        out.data() + out.index(b, co, 0, 0));
            co += t.c();
        }
    }
    return make_op(std::move(out), xs, [plane](Node& self) {
        const Tensor& g = self.grad;
        for (int b = 0; b < g.n(); ++b) {
            int co = 0;
            for (auto& p : self.parents) {
                const int pc = p->value.c();
                if (p->requires_grad) {
                    Tensor& d = p->ensure_grad();
                    const double* src = g.data() + g.index(b, co, 0, 0);
                    double* dst = d.data() + d.index(b, 0, 0, 0);
                    for (size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                }
                co += pc;
            }
        }
    });
}

namespace {
// Half-pixel source coordinates for one axis.
struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight on i1; weight on i0 is 1-w1
};

AxisMap make_axis_map(int in, int out) {
    AxisMap m;
    m.i0.resize(out);
    m.i1.resize(out);
    m.w1.resize(out);
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * s - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        m.i0[o] = i0;
        m.i1[o] = std::min(i0 + 1, in - 1);
        m.w1[o] = src - i0;
    }
    return m;
}
}  // namespace

Variable resize_bilinear(const Variable& x, int out_h, int out_w) {
    const Tensor& xt = x.value();
    check(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be positive");
    check(xt.h() >= 1 && xt.w() >= 1, "resize_bilinear: input dims must be positive");
    const int B = xt.n(), C = xt.c(), H = xt.h(), W = xt.w();
    if (out_h == H && out_w == W) {
        Tensor out = xt;
        return make_op(std::move(out), {x}, [](Node& self) {
            if (!self.parents[0]->requires_grad) return;
            Tensor& d = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i];
        });
    }
    const AxisMap ym = make_axis_map(H, out_h);
    const AxisMap xm = make_axis_map(W, out_w);
    Tensor out(B, C, out_h, out_w);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* src = xt.data() + xt.index(b, c, 0, 0);
            double* dst = out.data() + out.index(b, c, 0, 0);
            for (int oy = 0; oy < out_h; ++oy) {
                const double wy = ym.w1[oy];
                const double* r0 = src + static_cast<size_t>(ym.i0[oy]) * W;
                const double* r1 = src + static_cast<size_t>(ym.i1[oy]) * W;
                for (int ox = 0; ox < out_w; ++ox) {
                    const double wx = xm.w1[ox];
                    const double top = r0[xm.i0[ox]] * (1 - wx) + r0[xm.i1[ox]] * wx;
                    const double bot = r1[xm.i0[ox]] * (1 - wx) + r1[xm.i1[ox]] * wx;
                    *dst++ = top * (1 - wy) + bot * wy;
                }
            }
        }
    return make_op(std::move(out), {x}, [ym, xm, H, W, out_h, out_w](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& dx = self.parents[0]->ensure_grad();
        const Tensor& g = self.grad;
        for (int b = 0; b < g.n(); ++b)
            for (int c = 0; c < g.c(); ++c) {
                double* d = dx.data() + dx.index(b, c, 0, 0);
                const double* gm = g.data() + g.index(b, c, 0, 0);
                for (int oy = 0; oy < out_h; ++oy) {
                    const double wy = ym.w1[oy];
                    double* r0 = d + static_cast<size_t>(ym.i0[oy]) * W;
                    double* r1 = d + static_cast<size_t>(ym.i1[oy]) * W;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const double gv = *gm++;
                        const double wx = xm.w1[ox];
                        r0[xm.i0[ox]] += gv * (1 - wy) * (1 - wx);
                        r0[xm.i1[ox]] += gv * (1 - wy) * wx;
                        r1[xm.i0[ox]] += gv * wy * (1 - wx);
                        r1[xm.i1[ox]] += gv * wy * wx;
                    }
                }
            }
    });
}

Variable max_pool2(const Variable& x) {
    const Tensor& xt = x.value();
    check(xt.h() % 2 == 0 && xt.w() % 2 == 0, "max_pool2: spatial dims must be even");
    const int B = xt.n(), C = xt.c(), H = xt.h(), W = xt.w();
    const int oh = H / 2, ow = W / 2;
    Tensor out(B, C, oh, ow);
    auto argmax = std::make_shared<std::vector<size_t>>(out.numel());
    size_t oidx = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oidx) {
                    size_t best = xt.index(b, c, 2 * oy, 2 * ox);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx2 = 0; dx2 < 2; ++dx2) {
                            const size_t i = xt.index(b, c, 2 * oy + dy, 2 * ox + dx2);
                            if (xt[i] > xt[best]) best = i;
                        }
                    out[oidx] = xt[best];
                    (*argmax)[oidx] = best;
                }
    return make_op(std::move(out), {x}, [argmax](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < self.grad.numel(); ++i) d[(*argmax)[i]] += self.grad[i];
    });
}

Variable global_avg_pool(const Variable& x) {
    const Tensor& xt = x.value();
    const size_t plane = static_cast<size_t>(xt.h()) * xt.w();
    check(plane > 0, "global_avg_pool: empty spatial dims");
    Tensor out(xt.n(), xt.c(), 1, 1);
    for (int b = 0; b < xt.n(); ++b)
        for (int c = 0; c < xt.c(); ++c) {
            const double* src = xt.data() + xt.index(b, c, 0, 0);
            double s = 0.0;
            for (size_t i = 0; i < plane; ++i) s += src[i];
            out.at(b, c, 0, 0) = s / static_cast<double>(plane);
        }
    return make_op(std::move(out), {x}, [plane](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(plane);
        for (int b = 0; b < d.n(); ++b)
            for (int c = 0; c < d.c(); ++c) {
                const double gv = self.grad.at(b, c, 0, 0) * inv;
                double* dst = d.data() + d.index(b, c, 0, 0);
                for (size_t i = 0; i < plane; ++i) dst[i] += gv;
            }
    });
}

Variable softmax_groups(const Variable& x, int groups) {
    const Tensor& xt = x.value();
    check(groups >= 1 && xt.c() % groups == 0,
          "softmax_groups: groups must divide channels");
    check(xt.h() == 1 && xt.w() == 1, "softmax_groups: expects (B,G*C,1,1)");
    const int B = xt.n(), C = xt.c() / groups, G = groups;
    Tensor out = xt;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double mx = -1e300;
            for (int g = 0; g < G; ++g) mx = std::max(mx, xt.at(b, g * C + c, 0, 0));
            double z = 0.0;
            for (int g = 0; g < G; ++g) {
                double e = std::exp(xt.at(b, g * C + c, 0, 0) - mx);
                out.at(b, g * C + c, 0, 0) = e;
                z += e;
            }
            for (int g = 0; g < G; ++g) out.at(b, g * C + c, 0, 0) /= z;
        }
    return make_op(std::move(out), {x}, [B, C, G](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& dx = self.parents[0]->ensure_grad();
        const Tensor& p = self.value;
        const Tensor& g = self.grad;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double dot = 0.0;
                for (int k = 0; k < G; ++k)
                    dot += p.at(b, k * C + c, 0, 0) * g.at(b, k * C + c, 0, 0);
                for (int k = 0; k < G; ++k) {
                    const double pv = p.at(b, k * C + c, 0, 0);
                    dx.at(b, k * C + c, 0, 0) += pv * (g.at(b, k * C + c, 0, 0) - dot);
                }
            }
    });
}

Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    int groups, double eps) {
    const Tensor& xt = x.value();
    const int B = xt.n(), C = xt.c(), H = xt.h(), W = xt.w();
    check(groups >= 1 && C % groups == 0, "group_norm: groups must divide channels");
    check(gamma.value().c() == C && beta.value().c() == C,
          "group_norm: affine params must be (1,C,1,1)");
    const int cpg = C / groups;
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t m = cpg * plane;  // elements per group

    auto xhat = std::make_shared<Tensor>(B, C, H, W);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * groups);
    Tensor out(B, C, H, W);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < groups; ++g) {
            const double* src = xt.data() + xt.index(b, g * cpg, 0, 0);
            double mean = 0.0;
            for (size_t i = 0; i < m; ++i) mean += src[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (size_t i = 0; i < m; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double s = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<size_t>(b) * groups + g] = s;
            double* xh = xhat->data() + xhat->index(b, g * cpg, 0, 0);
            double* o = out.data() + out.index(b, g * cpg, 0, 0);
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const double ga = gv[c], be = bv[c];
                for (size_t i = 0; i < plane; ++i) {
                    const double v = (src[cc * plane + i] - mean) * s;
                    xh[cc * plane + i] = v;
                    o[cc * plane + i] = ga * v + be;
                }
            }
        }
    return make_op(std::move(out), {x, gamma, beta},
                   [xhat, inv_std, groups, cpg, plane, m](Node& self) {
        const Tensor& g = self.grad;
        const Tensor& gav = self.parents[1]->value;
        const int B = g.n(), C = g.c();
        if (self.parents[1]->requires_grad || self.parents[2]->requires_grad) {
            Tensor* dga = self.parents[1]->requires_grad ? &self.parents[1]->ensure_grad()
                                                         : nullptr;
            Tensor* dbe = self.parents[2]->requires_grad ? &self.parents[2]->ensure_grad()
                                                         : nullptr;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double* gm = g.data() + g.index(b, c, 0, 0);
                    const double* xh = xhat->data() + xhat->index(b, c, 0, 0);
                    double sg = 0.0, sb = 0.0;
                    for (size_t i = 0; i < plane; ++i) {
                        sg += gm[i] * xh[i];
                        sb += gm[i];
                    }
                    if (dga) (*dga)[c] += sg;
                    if (dbe) (*dbe)[c] += sb;
                }
        }
        if (!self.parents[0]->requires_grad) return;
        Tensor& dx = self.parents[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int gr = 0; gr < groups; ++gr) {
                const double s = (*inv_std)[static_cast<size_t>(b) * groups + gr];
                // dxhat = dy * gamma; dx = s*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = gr * cpg + cc;
                    const double ga = gav[c];
                    const double* gm = g.data() + g.index(b, c, 0, 0);
                    const double* xh = xhat->data() + xhat->index(b, c, 0, 0);
                    for (size_t i = 0; i < plane; ++i) {
                        const double dxh = gm[i] * ga;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[i];
                    }
                }
                const double mean_dxh = sum_dxh / static_cast<double>(m);
                const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(m);
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = gr * cpg + cc;
                    const double ga = gav[c];
                    const double* gm = g.data() + g.index(b, c, 0, 0);
                    const double* xh = xhat->data() + xhat->index(b, c, 0, 0);
                    double* d = dx.data() + dx.index(b, c, 0, 0);
                    for (size_t i = 0; i < plane; ++i) {
                        const double dxh = gm[i] * ga;
                        d[i] += s * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                    }
                }
            }
    });
}

Variable mean_all(const Variable& x) {
    const size_t nelem = x.value().numel();
    check(nelem > 0, "mean_all: empty tensor");
    Tensor out = Tensor::scalar(x.value().mean());
    return make_op(std::move(out), {x}, [nelem](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& d = self.parents[0]->ensure_grad();
        const double gv = self.grad[0] / static_cast<double>(nelem);
        for (size_t i = 0; i < d.numel(); ++i) d[i] += gv;
    });
}

int norm_groups_for(int channels, int wanted) {
    int g = std::min(wanted, channels);
    while (g > 1 && channels % g != 0) --g;
    return std::max(g, 1);
}

}  // namespace dbd::ad
