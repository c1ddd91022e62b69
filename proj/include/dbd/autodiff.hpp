#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dbd/tensor.hpp"

namespace dbd::ad {

// Reverse-mode tape. Graphs are built dynamically; creation order is a valid
// topological order, so backward() replays reachable nodes by descending id.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads
    std::uint64_t id = 0;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = zeros_like(value);
        return grad;
    }
};

class Variable {
public:
    Variable() = default;
    explicit Variable(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool has_grad() const { return defined() && !node_->grad.empty(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad() { node_->grad = Tensor(); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    explicit Variable(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;

    friend Variable make_op(Tensor value, std::vector<Variable> parents,
                            std::function<void(Node&)> backprop);
};

// Builds a graph node. `backprop` runs with this node's grad populated and must
// accumulate into each requiring parent's ensure_grad(). When no parent requires
// gradients the parents/backprop are dropped so inference graphs stay flat.
Variable make_op(Tensor value, std::vector<Variable> parents,
                 std::function<void(Node&)> backprop);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Variable& scalar_root);

// ---- primitive ops (all shape-checked, all differentiable) ----

// 2-D convolution, stride 1, odd kernel, zero padding dilation*(k-1)/2 per axis
// so spatial size is preserved. weight: (Cout, Cin, kh, kw); bias: (1, Cout, 1, 1).
Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias,
                int dilation = 1);

Variable relu(const Variable& x);
Variable sigmoid(const Variable& x);
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable scale(const Variable& x, double s);
Variable add_n(const std::vector<Variable>& xs);

// y = x * a with a broadcast across channels; a: (B, 1, H, W).
Variable mul_channel_broadcast(const Variable& x, const Variable& a);

Variable concat_channels(const std::vector<Variable>& xs);

// Bilinear resize with half-pixel centers, clamped sampling (up or down).
Variable resize_bilinear(const Variable& x, int out_h, int out_w);

// 2x2 max pooling, stride 2; spatial dims must be even.
Variable max_pool2(const Variable& x);

Variable global_avg_pool(const Variable& x);  // (B,C,H,W) -> (B,C,1,1)

// x: (B, G*C, 1, 1); softmax over the G group entries for each (b, c).
Variable softmax_groups(const Variable& x, int groups);

// Per-sample group normalization with per-channel affine; groups must divide C.
Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    int groups, double eps = 1e-5);

Variable mean_all(const Variable& x);  // -> scalar (1,1,1,1)

// Largest group count <= wanted that divides channels.
int norm_groups_for(int channels, int wanted = 8);

}  // namespace dbd::ad
