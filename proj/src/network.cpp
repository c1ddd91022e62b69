#include "dbd/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace dbd::net {

using ad::Variable;

namespace {
constexpr double kDefocusPriorLogit = -2.5;
}

void BackboneSpec::validate() const {
    if (stage_strides[0] != 1 && stage_strides[0] != 2)
        throw std::invalid_argument("BackboneSpec: first stride must be 1 or 2");
    for (int i = 0; i < 5; ++i) {
        if (stage_channels[i] < 1)
            throw std::invalid_argument("BackboneSpec: channels must be positive");
        if (i > 0 && stage_strides[i] != 2 * stage_strides[i - 1])
            throw std::invalid_argument("BackboneSpec: strides must double per stage");
    }
    if (convs_per_stage < 1)
        throw std::invalid_argument("BackboneSpec: convs_per_stage must be positive");
}

BackboneSpec tiny_backbone() { return BackboneSpec{}; }

BackboneSpec resnext101_backbone() {
    return BackboneSpec{"resnext101", {64, 256, 512, 1024, 2048}, {2, 4, 8, 16, 32}, 2};
}

BackboneSpec vgg19_backbone() {
    return BackboneSpec{"vgg19", {64, 128, 256, 512, 512}, {1, 2, 4, 8, 16}, 2};
}

BackboneSpec backbone_by_name(const std::string& name) {
    if (name == "tiny") return tiny_backbone();
    if (name == "resnext101") return resnext101_backbone();
    if (name == "vgg19") return vgg19_backbone();
    throw std::invalid_argument("unknown backbone '" + name + "'");
}

void ModelConfig::validate() const {
    backbone.validate();
    for (int c : decoder_channels)
        if (c < 1) throw std::invalid_argument("ModelConfig: decoder channels must be positive");
    if (use_srfb && use_rfb)
        throw std::invalid_argument("ModelConfig: use_srfb and use_rfb are exclusive");
    if (input_height < backbone.max_stride() || input_width < backbone.max_stride())
        throw std::invalid_argument("ModelConfig: input smaller than backbone stride");
    if (input_height % backbone.max_stride() != 0 ||
        input_width % backbone.max_stride() != 0)
        throw std::invalid_argument("ModelConfig: input size must divide backbone stride");
    if (srfb_reduction_ratio < 1 || srfb_min_attention_dim < 1)
        throw std::invalid_argument("ModelConfig: attention bottleneck params must be positive");
}

namespace {
std::string join_ints(const std::array<int, 5>& a) {
    std::ostringstream os;
    for (int i = 0; i < 5; ++i) os << (i ? "," : "") << a[i];
    return os.str();
}
std::array<int, 5> parse_ints5(const std::string& s) {
    std::array<int, 5> out{};
    std::stringstream ss(s);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 5) throw std::invalid_argument("expected 5 comma-separated integers");
        out[i++] = std::stoi(tok);
    }
    if (i != 5) throw std::invalid_argument("expected 5 comma-separated integers");
    return out;
}
}  // namespace

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "backbone = " << backbone.name << "\n";
    os << "backbone_channels = " << join_ints(backbone.stage_channels) << "\n";
    os << "backbone_strides = " << join_ints(backbone.stage_strides) << "\n";
    os << "backbone_convs_per_stage = " << backbone.convs_per_stage << "\n";
    os << "decoder_channels = " << join_ints(decoder_channels) << "\n";
    os << "srfb_reduction_ratio = " << srfb_reduction_ratio << "\n";
    os << "srfb_min_attention_dim = " << srfb_min_attention_dim << "\n";
    os << "input_height = " << input_height << "\n";
    os << "input_width = " << input_width << "\n";
    os << "use_depth_head = " << (use_depth_head ? 1 : 0) << "\n";
    os << "use_srfb = " << (use_srfb ? 1 : 0) << "\n";
    os << "use_rfb = " << (use_rfb ? 1 : 0) << "\n";
    os << "use_sab = " << (use_sab ? 1 : 0) << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "backbone")
            cfg.backbone.name = val;
        else if (key == "backbone_channels")
            cfg.backbone.stage_channels = parse_ints5(val);
        else if (key == "backbone_strides")
            cfg.backbone.stage_strides = parse_ints5(val);
        else if (key == "backbone_convs_per_stage")
            cfg.backbone.convs_per_stage = std::stoi(val);
        else if (key == "decoder_channels")
            cfg.decoder_channels = parse_ints5(val);
        else if (key == "srfb_reduction_ratio")
            cfg.srfb_reduction_ratio = std::stoi(val);
        else if (key == "srfb_min_attention_dim")
            cfg.srfb_min_attention_dim = std::stoi(val);
        else if (key == "input_height")
            cfg.input_height = std::stoi(val);
        else if (key == "input_width")
            cfg.input_width = std::stoi(val);
        else if (key == "use_depth_head")
            cfg.use_depth_head = std::stoi(val) != 0;
        else if (key == "use_srfb")
            cfg.use_srfb = std::stoi(val) != 0;
        else if (key == "use_rfb")
            cfg.use_rfb = std::stoi(val) != 0;
        else if (key == "use_sab")
            cfg.use_sab = std::stoi(val) != 0;
        else
            throw std::invalid_argument("ModelConfig: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

ModelConfig tiny_model_config(int input_size) {
    ModelConfig cfg;
    cfg.backbone = tiny_backbone();
    cfg.decoder_channels = {32, 32, 16, 16, 16};
    cfg.input_height = input_size;
    cfg.input_width = input_size;
    return cfg;
}

SideOutputs ForwardResult::to_outputs() const {
    SideOutputs out;
    for (const auto& v : defocus_sides) out.defocus_sides.push_back(v.value());
    for (const auto& v : depth_sides) out.depth_sides.push_back(v.value());
    out.defocus_final = defocus_final.value();
    if (depth_final.defined()) out.depth_final = depth_final.value();
    return out;
}

DefocusNet::DefocusNet(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(init_seed);

    // Encoder: each stage pools to its stride, then stacks 3x3 conv blocks.
    int in_ch = 3;
    int prev_stride = 1;
    for (int s = 0; s < 5; ++s) {
        const int ratio = config_.backbone.stage_strides[s] / prev_stride;
        stage_pools_.push_back(ratio == 2 ? 1 : 0);
        prev_stride = config_.backbone.stage_strides[s];
        std::vector<blocks::ConvBlock> convs;
        const int out_ch = config_.backbone.stage_channels[s];
        for (int k = 0; k < config_.backbone.convs_per_stage; ++k) {
            convs.emplace_back(params_,
                               "encoder.stage" + std::to_string(s) + ".conv" +
                                   std::to_string(k),
                               k == 0 ? in_ch : out_ch, out_ch, 3, 1, rng);
        }
        in_ch = out_ch;
        encoder_stages_.push_back(std::move(convs));
    }

    // Decoder: level 0 consumes the coarsest tap, levels 1..4 upsample and
    // merge the next finer tap.
    for (int l = 0; l < 5; ++l) {
        Level level;
        const std::string prefix = "decoder.level" + std::to_string(l);
        const int dc = config_.decoder_channels[l];
        if (l == 0) {
            level.merge = blocks::ConvBlock(params_, prefix + ".merge",
                                            config_.backbone.stage_channels[4], dc, 3, 1,
                                            rng);
        } else {
            const int prev_dc = config_.decoder_channels[l - 1];
            const int skip_ch = config_.backbone.stage_channels[4 - l];
            level.up = blocks::ConvBlock(params_, prefix + ".up", prev_dc, dc, 3, 1, rng);
            level.merge =
                blocks::ConvBlock(params_, prefix + ".merge", dc + skip_ch, dc, 3, 1, rng);
        }
        if (config_.use_srfb) {
            level.pyramid = blocks::PyramidBlock(
                params_, prefix + ".srfb",
                blocks::srfb_config(dc, config_.srfb_reduction_ratio,
                                    config_.srfb_min_attention_dim),
                blocks::MergeMode::selective, rng);
        } else if (config_.use_rfb) {
            level.pyramid =
                blocks::PyramidBlock(params_, prefix + ".rfb", blocks::rfb_config(dc),
                                     blocks::MergeMode::concat, rng);
        } else {
            level.plain = blocks::ConvBlock(params_, prefix + ".context", dc, dc, 3, 1, rng);
        }
        level.defocus_head_w =
            params_.add(prefix + ".defocus_head.weight", he_normal(1, dc, 1, 1, rng));
        // class-prior logit: in-focus regions are the minority class
        level.defocus_head_b = params_.add(prefix + ".defocus_head.bias",
                                           Tensor::full(1, 1, 1, 1, kDefocusPriorLogit));
        if (config_.use_depth_head) {
            level.depth_head_w =
                params_.add(prefix + ".depth_head.weight", he_normal(1, dc, 1, 1, rng));
            level.depth_head_b =
                params_.add(prefix + ".depth_head.bias", Tensor(1, 1, 1, 1));
        }
        if (config_.use_sab) {
            level.sab = blocks::SabBlock(params_, prefix + ".sab",
                                         config_.use_depth_head ? 2 : 1, rng);
        }
        levels_.push_back(std::move(level));
    }

    // The fusion starts as an amplifying vote over the fine sides so side-map
    // confidence reaches the final map from the first step; the balance-weighted
    // objective alone re-scales this layer very slowly. Bias keeps the initial
    // final map at the class prior.
    Tensor fuse_w(1, 5, 1, 1);
    const double taper[5] = {0.0, 0.0, 1.0, 2.0, 8.0};  // coarse -> fine
    double taper_sum = 0.0;
    for (int i = 0; i < 5; ++i) {
        fuse_w[i] = taper[i];
        taper_sum += taper[i];
    }
    const double prior = 1.0 / (1.0 + std::exp(-kDefocusPriorLogit));
    defocus_fuse_w_ = params_.add("fusion.defocus.weight", std::move(fuse_w));
    defocus_fuse_b_ = params_.add(
        "fusion.defocus.bias",
        Tensor::full(1, 1, 1, 1, kDefocusPriorLogit - taper_sum * prior));
    if (config_.use_depth_head) {
        depth_fuse_w_ = params_.add("fusion.depth.weight", he_normal(1, 5, 1, 1, rng));
        depth_fuse_b_ = params_.add("fusion.depth.bias", Tensor(1, 1, 1, 1));
    }
}

std::vector<Variable> DefocusNet::encode(const Variable& image) const {
    const Tensor& img = image.value();
    if (img.c() != 3)
        throw std::invalid_argument("encode: expected 3-channel input, got " +
                                    img.shape_str());
    const int stride = config_.backbone.max_stride();
    if (img.h() % stride != 0 || img.w() % stride != 0)
        throw std::invalid_argument("encode: input " + img.shape_str() +
                                    " not divisible by backbone stride " +
                                    std::to_string(stride));
    std::vector<Variable> taps;
    Variable x = image;
    for (int s = 0; s < 5; ++s) {
        if (stage_pools_[s]) x = ad::max_pool2(x);
        for (const auto& conv : encoder_stages_[s]) x = conv.forward(x);
        taps.push_back(x);
    }
    return taps;
}

DefocusNet::LevelOut DefocusNet::decode_level(int l, const Variable& prev,
                                              const Variable& skip,
                                              std::vector<Tensor>* probs,
                                              std::vector<Tensor>* atts) const {
    const Level& level = levels_[l];
    Variable x;
    if (l == 0) {
        x = level.merge.forward(skip);  // coarsest tap enters directly
    } else {
        const Tensor& sk = skip.value();
        const Tensor& pv = prev.value();
        if (sk.h() != 2 * pv.h() || sk.w() != 2 * pv.w())
            throw std::invalid_argument("decode_level: skip " + sk.shape_str() +
                                        " is not 2x the previous level " + pv.shape_str());
        Variable up = ad::resize_bilinear(prev, sk.h(), sk.w());
        up = level.up.forward(up);
        x = level.merge.forward(ad::concat_channels({up, skip}));
    }

    if (level.pyramid) {
        blocks::SrfbDiagnostics diag;
        x = level.pyramid->forward(x, probs ? &diag : nullptr);
        if (probs && !diag.branch_probs.empty()) probs->push_back(diag.branch_probs);
    } else {
        x = level.plain->forward(x);
    }

    LevelOut out;
    out.defocus_side = ad::sigmoid(ad::conv2d(x, level.defocus_head_w, level.defocus_head_b));
    if (config_.use_depth_head)
        out.depth_side = ad::conv2d(x, level.depth_head_w, level.depth_head_b);

    if (level.sab) {
        std::vector<Variable> sides{out.defocus_side};
        if (config_.use_depth_head) sides.push_back(out.depth_side);
        Tensor att;
        out.features = level.sab->forward(x, sides, atts ? &att : nullptr);
        if (atts) atts->push_back(std::move(att));
    } else {
        out.features = x;
    }
    return out;
}

ForwardResult DefocusNet::forward(const Variable& image, bool diagnostics) const {
    const int H = image.value().h(), W = image.value().w();
    std::vector<Variable> taps = encode(image);

    ForwardResult res;
    std::vector<Tensor>* probs = diagnostics ? &res.srfb_probs : nullptr;
    std::vector<Tensor>* atts = diagnostics ? &res.sab_attention : nullptr;

    Variable features;
    for (int l = 0; l < 5; ++l) {
        const Variable& skip = taps[4 - l];
        LevelOut out = decode_level(l, features, skip, probs, atts);
        features = out.features;
        res.defocus_sides.push_back(out.defocus_side);
        if (config_.use_depth_head) res.depth_sides.push_back(out.depth_side);
    }

    for (const auto& s : res.defocus_sides)
        res.defocus_sides_full.push_back(ad::resize_bilinear(s, H, W));
    res.defocus_final = ad::sigmoid(ad::conv2d(
        ad::concat_channels(res.defocus_sides_full), defocus_fuse_w_, defocus_fuse_b_));

    if (config_.use_depth_head) {
        for (const auto& s : res.depth_sides)
            res.depth_sides_full.push_back(ad::resize_bilinear(s, H, W));
        res.depth_final = ad::conv2d(ad::concat_channels(res.depth_sides_full),
                                     depth_fuse_w_, depth_fuse_b_);
    }
    return res;
}

SideOutputs DefocusNet::infer(const Tensor& image) const {
    Variable x(image, /*requires_grad=*/false);
    return forward(x).to_outputs();
}

void load_backbone_weights(DefocusNet& model, const std::filesystem::path& archive) {
    if (!std::filesystem::exists(archive)) {
        std::cerr << "warning: backbone weights " << archive
                  << " not found; keeping random initialization\n";
        return;
    }
    std::ifstream is(archive, std::ios::binary);
    const auto tensors = read_tensor_archive(is);
    size_t loaded = 0, skipped = 0;
    for (const auto& [name, t] : tensors) {
        if (!model.params().has(name)) {
            ++skipped;
            continue;
        }
        ad::Variable v = model.params().get(name);
        if (!v.value().same_shape(t)) {
            ++skipped;
            continue;
        }
        v.value() = t;
        ++loaded;
    }
    std::cerr << "backbone weights: loaded " << loaded << " tensors from " << archive;
    if (skipped) std::cerr << " (" << skipped << " incompatible entries skipped)";
    std::cerr << "\n";
}

namespace {
constexpr char kMagic[8] = {'D', 'B', 'D', 'C', 'K', 'P', 'T', '1'};

void write_string(std::ostream& os, const std::string& s) {
    const std::uint64_t len = s.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
        os.write(kMagic, sizeof(kMagic));
        write_string(os, ckpt.config_text);
        write_tensor_archive(os, ckpt.params);
        const char flag = ckpt.has_train_state ? 1 : 0;
        os.write(&flag, 1);
        if (ckpt.has_train_state) {
            write_tensor_archive(os, ckpt.momentum);
            os.write(reinterpret_cast<const char*>(&ckpt.iteration),
                     sizeof(ckpt.iteration));
            write_string(os, ckpt.rng_state);
            os.write(reinterpret_cast<const char*>(&ckpt.best_metric),
                     sizeof(ckpt.best_metric));
            write_string(os, ckpt.train_config_text);
        }
        if (!os) throw std::runtime_error("save_checkpoint: write failed " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kMagic))
        throw std::runtime_error("load_checkpoint: " + path.string() +
                                 " is not a checkpoint file");
    Checkpoint ckpt;
    ckpt.config_text = read_string(is);
    ckpt.params = read_tensor_archive(is);
    char flag = 0;
    is.read(&flag, 1);
    if (is && flag == 1) {
        ckpt.has_train_state = true;
        ckpt.momentum = read_tensor_archive(is);
        is.read(reinterpret_cast<char*>(&ckpt.iteration), sizeof(ckpt.iteration));
        ckpt.rng_state = read_string(is);
        is.read(reinterpret_cast<char*>(&ckpt.best_metric), sizeof(ckpt.best_metric));
        ckpt.train_config_text = read_string(is);
        if (!is) throw std::runtime_error("load_checkpoint: truncated train state");
    }
    return ckpt;
}

}  // namespace dbd::net
