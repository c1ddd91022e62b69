#include "dbd/engine.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace dbd::engine {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {
std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw std::invalid_argument("expected boolean, got '" + v + "'");
}

std::array<double, 5> parse_doubles5(const std::string& s) {
    std::array<double, 5> out{};
    std::stringstream ss(s);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 5) throw std::invalid_argument("expected 5 comma-separated values");
        out[i++] = std::stod(tok);
    }
    if (i != 5) throw std::invalid_argument("expected 5 comma-separated values");
    return out;
}

std::string join5(const std::array<double, 5>& a) {
    std::ostringstream os;
    for (int i = 0; i < 5; ++i) os << (i ? "," : "") << a[i];
    return os.str();
}
std::string join5i(const std::array<int, 5>& a) {
    std::ostringstream os;
    for (int i = 0; i < 5; ++i) os << (i ? "," : "") << a[i];
    return os.str();
}
}  // namespace

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "# model\n";
    os << "backbone = " << model.backbone.name << "\n";
    os << "decoder_channels = " << join5i(model.decoder_channels) << "\n";
    os << "srfb_reduction_ratio = " << model.srfb_reduction_ratio << "\n";
    os << "srfb_min_attention_dim = " << model.srfb_min_attention_dim << "\n";
    os << "input_height = " << model.input_height << "\n";
    os << "input_width = " << model.input_width << "\n";
    os << "use_depth_head = " << (model.use_depth_head ? "true" : "false") << "\n";
    os << "use_srfb = " << (model.use_srfb ? "true" : "false") << "\n";
    os << "use_rfb = " << (model.use_rfb ? "true" : "false") << "\n";
    os << "use_sab = " << (model.use_sab ? "true" : "false") << "\n";
    os << "# training\n";
    os << "lr = " << lr << "\n";
    os << "momentum = " << momentum << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "max_iterations = " << max_iterations << "\n";
    os << "seed = " << seed << "\n";
    os << "augment = " << (augment ? "true" : "false") << "\n";
    os << "alpha = " << join5(loss.alpha) << "\n";
    os << "beta = " << join5(loss.beta) << "\n";
    os << "gamma = " << loss.gamma << "\n";
    os << "teacher = "
       << (teacher.kind == distill::TeacherKind::precomputed_dir ? "precomputed"
                                                                 : "synthetic")
       << "\n";
    os << "teacher_dir = " << teacher.dir << "\n";
    os << "data_root = " << data_root << "\n";
    os << "split = " << split << "\n";
    os << "checkpoint_path = " << checkpoint_path << "\n";
    os << "log_path = " << log_path << "\n";
    os << "checkpoint_every = " << checkpoint_every << "\n";
    os << "backbone_weights = " << backbone_weights << "\n";
    return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected 'key = value', got '" + line + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string val = trim(stripped.substr(eq + 1));
        if (key == "backbone")
            cfg.model.backbone = net::backbone_by_name(val);
        else if (key == "decoder_channels") {
            std::stringstream ss(val);
            std::string tok;
            int i = 0;
            while (std::getline(ss, tok, ',')) {
                if (i >= 5) throw std::invalid_argument("decoder_channels: expected 5 values");
                cfg.model.decoder_channels[i++] = std::stoi(tok);
            }
            if (i != 5) throw std::invalid_argument("decoder_channels: expected 5 values");
        } else if (key == "srfb_reduction_ratio")
            cfg.model.srfb_reduction_ratio = std::stoi(val);
        else if (key == "srfb_min_attention_dim")
            cfg.model.srfb_min_attention_dim = std::stoi(val);
        else if (key == "input_size") {
            cfg.model.input_height = cfg.model.input_width = std::stoi(val);
        } else if (key == "input_height")
            cfg.model.input_height = std::stoi(val);
        else if (key == "input_width")
            cfg.model.input_width = std::stoi(val);
        else if (key == "use_depth_head")
            cfg.model.use_depth_head = parse_bool(val);
        else if (key == "use_srfb")
            cfg.model.use_srfb = parse_bool(val);
        else if (key == "use_rfb")
            cfg.model.use_rfb = parse_bool(val);
        else if (key == "use_sab")
            cfg.model.use_sab = parse_bool(val);
        else if (key == "lr")
            cfg.lr = std::stod(val);
        else if (key == "momentum")
            cfg.momentum = std::stod(val);
        else if (key == "weight_decay")
            cfg.weight_decay = std::stod(val);
        else if (key == "batch_size")
            cfg.batch_size = std::stoi(val);
        else if (key == "max_iterations")
            cfg.max_iterations = std::stoi(val);
        else if (key == "seed")
            cfg.seed = std::stoull(val);
        else if (key == "augment")
            cfg.augment = parse_bool(val);
        else if (key == "alpha")
            cfg.loss.alpha = parse_doubles5(val);
        else if (key == "beta")
            cfg.loss.beta = parse_doubles5(val);
        else if (key == "gamma")
            cfg.loss.gamma = std::stod(val);
        else if (key == "teacher") {
            if (val == "precomputed")
                cfg.teacher.kind = distill::TeacherKind::precomputed_dir;
            else if (val == "synthetic")
                cfg.teacher.kind = distill::TeacherKind::synthetic;
            else
                throw std::invalid_argument("config: unknown teacher '" + val + "'");
        } else if (key == "teacher_dir")
            cfg.teacher.dir = val;
        else if (key == "data_root")
            cfg.data_root = val;
        else if (key == "split")
            cfg.split = val;
        else if (key == "checkpoint_path")
            cfg.checkpoint_path = val;
        else if (key == "log_path")
            cfg.log_path = val;
        else if (key == "checkpoint_every")
            cfg.checkpoint_every = std::stoi(val);
        else if (key == "backbone_weights")
            cfg.backbone_weights = val;
        else
            throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    cfg.model.validate();
    return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("TrainConfig: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_text(text);
}

void TrainConfig::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("TrainConfig: cannot write " + path.string());
    os << to_text();
}

Batch make_batch(const std::vector<data::DefocusSample>& samples,
                 const std::vector<size_t>& indices, bool with_depth) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const auto& first = samples.at(indices[0]);
    const int H = first.image.h(), W = first.image.w();
    const int B = static_cast<int>(indices.size());
    Batch batch;
    batch.images = Tensor(B, 3, H, W);
    batch.masks = Tensor(B, 1, H, W);
    if (with_depth) batch.depths = Tensor(B, 1, H, W);
    for (int b = 0; b < B; ++b) {
        const auto& s = samples.at(indices[b]);
        if (s.image.h() != H || s.image.w() != W)
            throw std::invalid_argument("make_batch: mixed sample sizes");
        std::copy_n(s.image.data(), s.image.numel(),
                    batch.images.data() + batch.images.index(b, 0, 0, 0));
        std::copy_n(s.mask.data(), s.mask.numel(),
                    batch.masks.data() + batch.masks.index(b, 0, 0, 0));
        if (with_depth) {
            if (!s.depth)
                throw std::runtime_error("make_batch: sample '" + s.id +
                                         "' has no teacher depth");
            std::copy_n(s.depth->data(), s.depth->numel(),
                        batch.depths.data() + batch.depths.index(b, 0, 0, 0));
        }
        batch.ids.push_back(s.id);
    }
    return batch;
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
    model_ = std::make_unique<net::DefocusNet>(config_.model, config_.seed);
    if (!config_.backbone_weights.empty())
        net::load_backbone_weights(*model_, config_.backbone_weights);
    prepare_samples();
}

Trainer::Trainer(TrainConfig config, const net::Checkpoint& ckpt)
    : config_(std::move(config)) {
    model_ = std::make_unique<net::DefocusNet>(
        net::ModelConfig::from_text(ckpt.config_text), config_.seed);
    restore(model_->params(), ckpt.params);
    if (ckpt.has_train_state) {
        momentum_ = ckpt.momentum;
        iteration_ = ckpt.iteration;
    }
    prepare_samples();
}

void Trainer::prepare_samples() {
    if (config_.data_root.empty())
        throw std::runtime_error("Trainer: data_root not set");
    samples_ = data::load_dataset(config_.data_root, config_.split);
    if (samples_.empty()) throw std::runtime_error("Trainer: dataset is empty");
    if (config_.model.use_depth_head) {
        distill::TeacherSource src = config_.teacher;
        if (src.kind == distill::TeacherKind::precomputed_dir && src.dir.empty())
            src.dir = (std::filesystem::path(config_.data_root) / config_.split / "depth")
                          .string();
        for (auto& s : samples_) {
            if (s.depth) continue;  // dataset shipped its own teacher maps
            s.depth = distill::teacher_depth(s.id, s.image.h(), s.image.w(), src).values;
        }
    }
}

Batch Trainer::next_batch() {
    const size_t n = samples_.size();
    const size_t bsz = static_cast<size_t>(config_.batch_size);
    const size_t per_epoch = std::max<size_t>(1, n / bsz);
    const std::uint64_t epoch = iteration_ / per_epoch;
    const size_t pos = (iteration_ % per_epoch) * bsz;

    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 shuffle_rng(splitmix64(config_.seed ^ (epoch + 1)));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    std::vector<size_t> indices(bsz);
    for (size_t j = 0; j < bsz; ++j) indices[j] = perm[(pos + j) % n];

    // Preprocess with a per-iteration stream so resume stays bit-identical.
    std::mt19937_64 aug_rng(splitmix64(config_.seed ^ 0xA5A5A5A5ULL ^ (iteration_ + 1)));
    data::PreprocessOptions opts;
    opts.height = config_.model.input_height;
    opts.width = config_.model.input_width;
    opts.augment = config_.augment;
    std::vector<data::DefocusSample> batch_samples;
    batch_samples.reserve(bsz);
    for (size_t idx : indices) batch_samples.push_back(preprocess(samples_[idx], opts, aug_rng));
    std::vector<size_t> local(bsz);
    std::iota(local.begin(), local.end(), 0);
    return make_batch(batch_samples, local, config_.model.use_depth_head);
}

losses::LossBreakdown Trainer::train_step(const Batch& batch) {
    model_->params().zero_grads();

    ad::Variable images(batch.images, /*requires_grad=*/false);
    net::ForwardResult out = model_->forward(images);

    auto [total, breakdown] = losses::total_loss(
        out.defocus_final, out.defocus_sides_full,
        out.depth_final, out.depth_sides_full, batch.masks, batch.depths, config_.loss);

    if (!std::isfinite(breakdown.total)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at iteration " << iteration_
           << " (defocus_final=" << breakdown.defocus_final << ", defocus_sides=[";
        for (int k = 0; k < 5; ++k) os << (k ? "," : "") << breakdown.defocus_sides[k];
        os << "], depth_final=" << breakdown.depth_final << ", depth_sides=[";
        for (int k = 0; k < 5; ++k) os << (k ? "," : "") << breakdown.depth_sides[k];
        os << "], total=" << breakdown.total << "; batch:";
        for (const auto& id : batch.ids) os << " " << id;
        os << ")";
        throw std::runtime_error(os.str());
    }

    ad::backward(total);

    // SGD with momentum; weight decay folded into the gradient.
    for (const auto& [name, pv] : model_->params().all()) {
        ad::Variable p = pv;  // shares the underlying node
        Tensor& v = p.value();
        auto [it, inserted] = momentum_.try_emplace(name, zeros_like(v));
        Tensor& buf = it->second;
        const bool has_grad = p.has_grad();
        const Tensor* g = has_grad ? &p.grad() : nullptr;
        for (size_t i = 0; i < v.numel(); ++i) {
            const double grad = (g ? (*g)[i] : 0.0) + config_.weight_decay * v[i];
            buf[i] = config_.momentum * buf[i] + grad;
            v[i] -= config_.lr * buf[i];
        }
    }

    ++iteration_;
    return breakdown;
}

losses::LossBreakdown Trainer::step() { return train_step(next_batch()); }

net::Checkpoint Trainer::make_checkpoint() const {
    net::Checkpoint ckpt;
    ckpt.config_text = config_.model.to_text();
    ckpt.params = snapshot(model_->params());
    ckpt.has_train_state = true;
    ckpt.momentum = momentum_;
    ckpt.iteration = iteration_;
    ckpt.rng_state = std::to_string(config_.seed);
    ckpt.train_config_text = config_.to_text();
    return ckpt;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    net::save_checkpoint(path, make_checkpoint());
}

metrics::MetricReport Trainer::evaluate_train_set() const {
    return evaluate_model(*model_, samples_).report;
}

namespace {
nlohmann::json breakdown_json(const losses::LossBreakdown& bd) {
    nlohmann::json j;
    j["defocus_final"] = bd.defocus_final;
    j["defocus_sides"] = bd.defocus_sides;
    j["depth_final"] = bd.depth_final;
    j["depth_sides"] = bd.depth_sides;
    j["total"] = bd.total;
    return j;
}
}  // namespace

FitResult fit(const TrainConfig& config, bool resume) {
    std::unique_ptr<Trainer> trainer;
    if (resume && std::filesystem::exists(config.checkpoint_path)) {
        net::Checkpoint ckpt = net::load_checkpoint(config.checkpoint_path);
        trainer = std::make_unique<Trainer>(config, ckpt);
    } else {
        trainer = std::make_unique<Trainer>(config);
    }

    const auto log_path = std::filesystem::path(config.log_path);
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    std::ofstream log(log_path, trainer->iteration() > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("fit: cannot open log " + config.log_path);

    FitResult result;
    const auto t0 = std::chrono::steady_clock::now();
    while (trainer->iteration() < static_cast<std::uint64_t>(config.max_iterations)) {
        const losses::LossBreakdown bd = trainer->step();
        nlohmann::json j = breakdown_json(bd);
        j["iteration"] = trainer->iteration();
        j["lr"] = config.lr;
        j["wall_ms"] = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
        log << j.dump() << "\n";
        result.last_loss = bd;
        if (config.checkpoint_every > 0 &&
            trainer->iteration() % static_cast<std::uint64_t>(config.checkpoint_every) == 0)
            trainer->save_checkpoint(config.checkpoint_path);
    }
    trainer->save_checkpoint(config.checkpoint_path);
    result.iterations = trainer->iteration();
    result.checkpoint_path = config.checkpoint_path;
    result.log_path = config.log_path;
    return result;
}

EvalResult evaluate_model(const net::DefocusNet& model,
                          const std::vector<data::DefocusSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate_model: no samples");
    data::PreprocessOptions opts;
    opts.height = model.config().input_height;
    opts.width = model.config().input_width;
    opts.augment = false;
    std::mt19937_64 rng(0);

    std::vector<std::pair<Tensor, Tensor>> pairs;
    pairs.reserve(samples.size());
    double infer_seconds = 0.0;
    for (const auto& s : samples) {
        data::DefocusSample prep = data::preprocess(s, opts, rng);
        const auto t0 = std::chrono::steady_clock::now();
        net::SideOutputs out = model.infer(prep.image);
        infer_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        pairs.emplace_back(out.defocus_final, prep.mask);
    }
    EvalResult res;
    res.report = metrics::evaluate(pairs);
    res.seconds_per_image = infer_seconds / static_cast<double>(samples.size());
    res.fps = res.seconds_per_image > 0 ? 1.0 / res.seconds_per_image : 0.0;
    return res;
}

EvalResult run_eval(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& data_root, const std::string& split) {
    net::Checkpoint ckpt = net::load_checkpoint(checkpoint_path);
    net::ModelConfig cfg = net::ModelConfig::from_text(ckpt.config_text);
    net::DefocusNet model(cfg, /*init_seed=*/0);
    restore(model.params(), ckpt.params);
    const auto samples = data::load_dataset(data_root, split);
    if (samples.empty()) throw std::runtime_error("run_eval: dataset is empty");
    return evaluate_model(model, samples);
}

}  // namespace dbd::engine
