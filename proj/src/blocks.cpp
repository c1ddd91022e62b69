#include "dbd/blocks.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace dbd::blocks {

using ad::Variable;

void BranchSpec::validate() const {
    if (identity && !stages.empty())
        throw std::invalid_argument("BranchSpec: identity branch must have no stages");
    for (const auto& s : stages) {
        if (s.kernel < 1 || s.kernel % 2 == 0)
            throw std::invalid_argument("BranchSpec: kernels must be odd and >= 1, got " +
                                        std::to_string(s.kernel));
        if (s.dilation < 1)
            throw std::invalid_argument("BranchSpec: dilations must be >= 1, got " +
                                        std::to_string(s.dilation));
    }
}

std::string BranchSpec::describe() const {
    if (identity) return "identity";
    std::ostringstream os;
    for (size_t i = 0; i < stages.size(); ++i) {
        if (i) os << " -> ";
        os << stages[i].kernel << "x" << stages[i].kernel << " d" << stages[i].dilation;
    }
    return os.str();
}

int receptive_field(const BranchSpec& spec) {
    spec.validate();
    int rf = 1;
    for (const auto& s : spec.stages) rf += (s.kernel - 1) * s.dilation;
    return rf;
}

void SrfbConfig::validate(bool require_identity) const {
    if (channels < 1) throw std::invalid_argument("SrfbConfig: channels must be positive");
    if (reduction_ratio < 1 || min_attention_dim < 1)
        throw std::invalid_argument("SrfbConfig: attention bottleneck params must be positive");
    int n_identity = 0, n_conv = 0;
    for (const auto& b : branches) {
        b.validate();
        (b.identity ? n_identity : n_conv)++;
    }
    if (require_identity && n_identity != 1)
        throw std::invalid_argument("SrfbConfig: exactly one identity branch required");
    if (!require_identity && n_identity != 0)
        throw std::invalid_argument("SrfbConfig: no identity branch expected");
    if (n_conv < 2)
        throw std::invalid_argument("SrfbConfig: at least two convolutional branches required");
}

int SrfbConfig::attention_dim() const {
    return std::max(channels / reduction_ratio, min_attention_dim);
}

SrfbConfig srfb_config(int channels, int reduction_ratio, int min_attention_dim) {
    SrfbConfig cfg;
    cfg.channels = channels;
    cfg.reduction_ratio = reduction_ratio;
    cfg.min_attention_dim = min_attention_dim;
    cfg.branches.push_back({{}, /*identity=*/true});
    for (int k : {3, 5, 7})
        cfg.branches.push_back({{{1, 1}, {k, k}}, false});
    cfg.validate(/*require_identity=*/true);
    return cfg;
}

SrfbConfig sk_config(int channels, int reduction_ratio, int min_attention_dim) {
    SrfbConfig cfg;
    cfg.channels = channels;
    cfg.reduction_ratio = reduction_ratio;
    cfg.min_attention_dim = min_attention_dim;
    cfg.branches.push_back({{{3, 1}}, false});
    cfg.branches.push_back({{{3, 1}, {3, 4}}, false});
    cfg.validate(/*require_identity=*/false);
    return cfg;
}

SrfbConfig rfb_config(int channels) {
    return srfb_config(channels);
}

ConvBlock::ConvBlock(ParamStore& params, const std::string& prefix, int in_ch, int out_ch,
                     int kernel, int dilation, std::mt19937_64& rng, bool norm_act)
    : dilation_(dilation), out_ch_(out_ch), norm_act_(norm_act) {
    weight_ = params.add(prefix + ".weight", he_normal(out_ch, in_ch, kernel, kernel, rng));
    bias_ = params.add(prefix + ".bias", Tensor(1, out_ch, 1, 1));
    if (norm_act_) {
        norm_groups_ = ad::norm_groups_for(out_ch);
        gamma_ = params.add(prefix + ".norm.gamma", Tensor::full(1, out_ch, 1, 1, 1.0));
        beta_ = params.add(prefix + ".norm.beta", Tensor(1, out_ch, 1, 1));
    }
}

Variable ConvBlock::forward(const Variable& x) const {
    Variable y = ad::conv2d(x, weight_, bias_, dilation_);
    if (!norm_act_) return y;
    return ad::relu(ad::group_norm(y, gamma_, beta_, norm_groups_));
}

namespace {
// Intermediate stages run at a reduced width; the last stage restores channels.
int branch_mid_channels(int channels) { return std::max(channels / 2, 4); }
}  // namespace

PyramidBlock::PyramidBlock(ParamStore& params, const std::string& prefix, SrfbConfig config,
                           MergeMode mode, std::mt19937_64& rng)
    : config_(std::move(config)), mode_(mode) {
    config_.validate(/*require_identity=*/mode_ == MergeMode::concat ||
                     std::any_of(config_.branches.begin(), config_.branches.end(),
                                 [](const BranchSpec& b) { return b.identity; }));
    const int C = config_.channels;
    const int mid = branch_mid_channels(C);
    for (size_t bi = 0; bi < config_.branches.size(); ++bi) {
        const BranchSpec& spec = config_.branches[bi];
        std::vector<ConvBlock> stages;
        int in_ch = C;
        for (size_t si = 0; si < spec.stages.size(); ++si) {
            const bool last = si + 1 == spec.stages.size();
            const int out_ch = last ? C : mid;
            stages.emplace_back(params,
                                prefix + ".branch" + std::to_string(bi) + ".stage" +
                                    std::to_string(si),
                                in_ch, out_ch, spec.stages[si].kernel,
                                spec.stages[si].dilation, rng);
            in_ch = out_ch;
        }
        branch_stages_.push_back(std::move(stages));
    }

    const int n_branches = static_cast<int>(config_.branches.size());
    if (mode_ == MergeMode::selective) {
        const int d = config_.attention_dim();
        fc1_w_ = params.add(prefix + ".attn.fc1.weight", he_normal(d, C, 1, 1, rng));
        fc1_b_ = params.add(prefix + ".attn.fc1.bias", Tensor(1, d, 1, 1));
        fc2_w_ = params.add(prefix + ".attn.fc2.weight",
                            he_normal(n_branches * C, d, 1, 1, rng));
        fc2_b_ = params.add(prefix + ".attn.fc2.bias", Tensor(1, n_branches * C, 1, 1));
    } else {
        fuse_ = ConvBlock(params, prefix + ".fuse", n_branches * C, C, 1, 1, rng,
                          /*norm_act=*/false);
    }
}

Variable PyramidBlock::forward(const Variable& x, SrfbDiagnostics* diag) const {
    const Tensor& xt = x.value();
    if (xt.c() != config_.channels)
        throw std::invalid_argument("PyramidBlock: input has " + std::to_string(xt.c()) +
                                    " channels, config expects " +
                                    std::to_string(config_.channels));
    if (xt.h() < 1 || xt.w() < 1)
        throw std::invalid_argument("PyramidBlock: non-positive spatial dims");

    std::vector<Variable> branch_outs;
    branch_outs.reserve(branch_stages_.size());
    for (const auto& stages : branch_stages_) {
        if (stages.empty()) {
            branch_outs.push_back(x);
            continue;
        }
        Variable y = x;
        for (const auto& st : stages) y = st.forward(y);
        branch_outs.push_back(y);
    }

    if (mode_ == MergeMode::concat) {
        if (diag) diag->branch_probs = Tensor();
        return fuse_.forward(ad::concat_channels(branch_outs));
    }

    const int G = static_cast<int>(branch_outs.size());
    Variable pooled = ad::global_avg_pool(ad::add_n(branch_outs));
    Variable z = ad::relu(ad::conv2d(pooled, fc1_w_, fc1_b_));
    Variable logits = ad::conv2d(z, fc2_w_, fc2_b_);  // (B, G*C, 1, 1)
    Variable probs = ad::softmax_groups(logits, G);
    if (diag) diag->branch_probs = probs.value();

    const Tensor& pv = probs.value();
    const int C = config_.channels;
    std::vector<Variable> weighted;
    weighted.reserve(G);
    for (int g = 0; g < G; ++g) {
        // Per-channel selection weight for branch g, broadcast over space.
        Tensor pg(pv.n(), C, 1, 1);
        for (int b = 0; b < pv.n(); ++b)
            for (int c = 0; c < C; ++c) pg.at(b, c, 0, 0) = pv.at(b, g * C + c, 0, 0);
        Variable pg_var = ad::make_op(
            std::move(pg), {probs}, [g, C](ad::Node& self) {
                if (!self.parents[0]->requires_grad) return;
                Tensor& d = self.parents[0]->ensure_grad();
                for (int b = 0; b < self.grad.n(); ++b)
                    for (int c = 0; c < C; ++c)
                        d.at(b, g * C + c, 0, 0) += self.grad.at(b, c, 0, 0);
            });
        // Broadcast (B,C,1,1) -> (B,C,H,W) mul.
        const Tensor& bt = branch_outs[g].value();
        Tensor out = bt;
        const size_t plane = static_cast<size_t>(bt.h()) * bt.w();
        for (int b = 0; b < bt.n(); ++b)
            for (int c = 0; c < bt.c(); ++c) {
                double* o = out.data() + out.index(b, c, 0, 0);
                const double w = pg_var.value().at(b, c, 0, 0);
                for (size_t i = 0; i < plane; ++i) o[i] *= w;
            }
        weighted.push_back(ad::make_op(
            std::move(out), {branch_outs[g], pg_var}, [plane](ad::Node& self) {
                const Tensor& bv = self.parents[0]->value;
                const Tensor& wv = self.parents[1]->value;
                const Tensor& gr = self.grad;
                if (self.parents[0]->requires_grad) {
                    Tensor& d = self.parents[0]->ensure_grad();
                    for (int b = 0; b < bv.n(); ++b)
                        for (int c = 0; c < bv.c(); ++c) {
                            const double w = wv.at(b, c, 0, 0);
                            double* dd = d.data() + d.index(b, c, 0, 0);
                            const double* gm = gr.data() + gr.index(b, c, 0, 0);
                            for (size_t i = 0; i < plane; ++i) dd[i] += gm[i] * w;
                        }
                }
                if (self.parents[1]->requires_grad) {
                    Tensor& d = self.parents[1]->ensure_grad();
                    for (int b = 0; b < bv.n(); ++b)
                        for (int c = 0; c < bv.c(); ++c) {
                            const double* bm = bv.data() + bv.index(b, c, 0, 0);
                            const double* gm = gr.data() + gr.index(b, c, 0, 0);
                            double s = 0.0;
                            for (size_t i = 0; i < plane; ++i) s += gm[i] * bm[i];
                            d.at(b, c, 0, 0) += s;
                        }
                }
            }));
    }
    return ad::add_n(weighted);
}

SabBlock::SabBlock(ParamStore& params, const std::string& prefix, int side_channels,
                   std::mt19937_64& rng, int hidden_channels) {
    conv1_ = ConvBlock(params, prefix + ".conv1", side_channels, hidden_channels, 3, 1, rng);
    conv2_w_ = params.add(prefix + ".conv2.weight", he_normal(1, hidden_channels, 3, 3, rng));
    conv2_b_ = params.add(prefix + ".conv2.bias", Tensor(1, 1, 1, 1));
}

Variable SabBlock::attention(const std::vector<Variable>& side_maps) const {
    if (side_maps.empty()) throw std::invalid_argument("SabBlock: no side maps");
    Variable in = side_maps.size() == 1 ? side_maps[0] : ad::concat_channels(side_maps);
    Variable h = conv1_.forward(in);
    return ad::sigmoid(ad::conv2d(h, conv2_w_, conv2_b_));
}

Variable SabBlock::forward(const Variable& features, const std::vector<Variable>& side_maps,
                           Tensor* attention_out) const {
    const Tensor& ft = features.value();
    for (const auto& s : side_maps) {
        if (s.value().h() != ft.h() || s.value().w() != ft.w())
            throw std::invalid_argument("SabBlock: side map " + s.value().shape_str() +
                                        " does not match features " + ft.shape_str());
    }
    Variable att = attention(side_maps);
    if (attention_out) *attention_out = att.value();
    return ad::mul_channel_broadcast(features, att);
}

}  // namespace dbd::blocks
