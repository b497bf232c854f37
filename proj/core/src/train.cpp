#include "ddt/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ddt/ops.hpp"

namespace ddt {

Interpolant interpolate(const Tensor& x_data, const Tensor& noise, std::span<const double> t) {
    if (x_data.shape() != noise.shape()) {
        throw std::invalid_argument("interpolate: data " + shape_string(x_data.shape()) + " vs noise " +
                                    shape_string(noise.shape()));
    }
    const std::size_t n = x_data.numel();
    if (t.empty() || n % t.size() != 0) {
        throw std::invalid_argument("interpolate: timestep count does not divide the batch");
    }
    const std::size_t per = n / t.size();
    const auto x = x_data.data();
    const auto e = noise.data();
    std::vector<double> xt(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = t[i / per];
        if (!(ti >= 0.0 && ti <= 1.0)) {
            throw std::invalid_argument("interpolate: t outside [0, 1]");
        }
        xt[i] = ti * x[i] + (1.0 - ti) * e[i];
        v[i] = x[i] - e[i];
    }
    return {Tensor::from(x_data.shape(), std::move(xt)), Tensor::from(x_data.shape(), std::move(v))};
}

Interpolant interpolate(const Tensor& x_data, const Tensor& noise, double t) {
    const double ts[1] = {t};
    return interpolate(x_data, noise, std::span<const double>(ts, 1));
}

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

double sample_timestep_lognorm(Rng& rng, double mean, double std) {
    if (!(std > 0.0)) {
        throw std::invalid_argument("lognorm std must be positive");
    }
    return std::clamp(logistic(rng.normal(mean, std)), kTimestepClamp, 1.0 - kTimestepClamp);
}

Tensor alignment_loss(const Tensor& projected, const Tensor& r_star) {
    if (projected.shape() != r_star.shape()) {
        throw std::invalid_argument("alignment_loss: projected " + shape_string(projected.shape()) +
                                    " vs teacher " + shape_string(r_star.shape()));
    }
    const std::size_t d = r_star.shape().back();
    const std::size_t rows = r_star.numel() / d;
    Tensor cos = ops::cosine_rows(r_star.reshape({rows, d}), projected.reshape({rows, d}));
    return ops::sub(Tensor::scalar(1.0), ops::mean(cos));
}

LossGraph flow_matching_loss(const DDTModel& model, const TrainBatch& batch, double alignment_weight) {
    if (alignment_weight < 0.0) {
        throw std::invalid_argument("alignment_weight must be non-negative");
    }
    for (double t : batch.t) {
        if (!(t > 0.0 && t < 1.0)) {
            throw std::invalid_argument("training timesteps must lie strictly inside (0, 1)");
        }
    }
    auto [x_t, v_target] = interpolate(batch.x_data, batch.noise, batch.t);
    EncoderOutput enc = model.encode(x_t, batch.t, batch.y);
    Tensor v = model.decode(x_t, batch.t, enc.condition.z);
    if (!v.all_finite()) {
        throw NumericalError("non-finite velocity prediction in forward pass");
    }
    Tensor loss_dec = ops::mean(ops::square(ops::sub(v_target, v)));

    Tensor r_star = model.teacher_features(batch.x_data);
    Tensor loss_enc = alignment_loss(model.project(enc.h_align), r_star);

    Tensor total = ops::add(loss_dec, ops::scale(loss_enc, alignment_weight));
    LossGraph out;
    out.report.loss_dec = loss_dec.item();
    out.report.loss_enc = loss_enc.item();
    out.report.alignment_weight = alignment_weight;
    out.report.total = total.item();
    if (!std::isfinite(out.report.total)) {
        throw NumericalError("non-finite loss (dec=" + std::to_string(out.report.loss_dec) +
                             ", enc=" + std::to_string(out.report.loss_enc) + ")");
    }
    out.total = total;
    return out;
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, Options options)
    : params_(std::move(params)), options_(options) {
    for (const auto& [name, t] : params_) {
        if (!t.requires_grad()) {
            throw std::invalid_argument("optimizer given frozen parameter '" + name + "'");
        }
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, t] : params_) {
        t.zero_grad();
    }
}

bool AdamW::gradients_finite() const {
    for (const auto& [name, t] : params_) {
        for (double g : t.grad()) {
            if (!std::isfinite(g)) return false;
        }
    }
    return true;
}

void AdamW::step() {
    ++step_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& t = params_[k].second;
        if (!t.has_grad()) {
            continue;
        }
        auto w = t.mutable_data();
        const auto g = t.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= options_.lr * (mhat / (std::sqrt(vhat) + options_.eps) + options_.weight_decay * w[i]);
        }
    }
}

void AdamW::save_state(Checkpoint& ckpt) const {
    ckpt.header["adam_step"] = std::to_string(step_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& [name, t] = params_[k];
        ckpt.blocks.emplace_back("adam.m." + name, Tensor::from(t.shape(), m_[k]));
        ckpt.blocks.emplace_back("adam.v." + name, Tensor::from(t.shape(), v_[k]));
    }
}

void AdamW::load_state(const Checkpoint& ckpt) {
    const auto it = ckpt.header.find("adam_step");
    if (it == ckpt.header.end()) {
        throw FormatError("checkpoint has no optimizer state");
    }
    step_ = static_cast<std::uint64_t>(kv_int(ckpt.header, "adam_step"));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& name = params_[k].first;
        const Tensor* m = ckpt.find("adam.m." + name);
        const Tensor* v = ckpt.find("adam.v." + name);
        if (m == nullptr || v == nullptr || m->numel() != m_[k].size() || v->numel() != v_[k].size()) {
            throw FormatError("checkpoint optimizer state missing or mismatched for '" + name + "'");
        }
        m_[k].assign(m->data().begin(), m->data().end());
        v_[k].assign(v->data().begin(), v->data().end());
    }
}

LossReport train_step(const DDTModel& model, AdamW& optimizer, const TrainBatch& batch, double alignment_weight) {
    optimizer.zero_grad();
    LossGraph loss = flow_matching_loss(model, batch, alignment_weight);
    backward(loss.total);
    if (!optimizer.gradients_finite()) {
        loss.report.skipped = true;
        loss.report.diagnostic = "non-finite gradient; update skipped";
        optimizer.zero_grad();
        return loss.report;
    }
    optimizer.step();
    return loss.report;
}

// ---------------------------------------------------------------------------
// Configuration and run loop

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
    static const char* known[] = {"preset", "block_style", "seed", "steps", "batch", "alignment_weight", "dataset",
                                  "lr", "lognorm_mean", "lognorm_std", "label_dropout"};
    for (const auto& [k, v] : kv) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* n) { return k == n; }) ==
            std::end(known)) {
            throw ConfigError(k, "unknown training config key");
        }
    }
    TrainConfig c;
    if (auto it = kv.find("preset"); it != kv.end()) c.preset = it->second;
    if (auto it = kv.find("block_style"); it != kv.end()) c.block_style = parse_block_style(it->second);
    auto count = [&](const char* key, auto& field) {
        if (kv.count(key)) {
            const long long v = kv_int(kv, key);
            if (v < 0) throw ConfigError(key, "must be non-negative");
            field = static_cast<std::remove_reference_t<decltype(field)>>(v);
        }
    };
    count("seed", c.seed);
    count("steps", c.steps);
    count("batch", c.batch);
    if (kv.count("alignment_weight")) c.alignment_weight = kv_double(kv, "alignment_weight");
    if (auto it = kv.find("dataset"); it != kv.end()) c.dataset = parse_dataset_kind(it->second);
    if (kv.count("lr")) c.lr = kv_double(kv, "lr");
    if (kv.count("lognorm_mean")) c.lognorm_mean = kv_double(kv, "lognorm_mean");
    if (kv.count("lognorm_std")) c.lognorm_std = kv_double(kv, "lognorm_std");
    if (kv.count("label_dropout")) c.label_dropout = kv_double(kv, "label_dropout");
    c.validate();
    return c;
}

KeyValues TrainConfig::to_key_values() const {
    auto num = [](double v) { return format_double(v); };
    return {
        {"preset", preset},
        {"block_style", to_string(block_style)},
        {"seed", std::to_string(seed)},
        {"steps", std::to_string(steps)},
        {"batch", std::to_string(batch)},
        {"alignment_weight", num(alignment_weight)},
        {"dataset", to_string(dataset)},
        {"lr", num(lr)},
        {"lognorm_mean", num(lognorm_mean)},
        {"lognorm_std", num(lognorm_std)},
        {"label_dropout", num(label_dropout)},
    };
}

void TrainConfig::validate() const {
    if (batch == 0) throw ConfigError("batch", "must be positive");
    if (!(alignment_weight >= 0.0)) throw ConfigError("alignment_weight", "must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr", "must be positive");
    if (!(lognorm_std > 0.0)) throw ConfigError("lognorm_std", "must be positive");
    if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) throw ConfigError("label_dropout", "must lie in [0, 1]");
    model_config();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc = model_preset(preset);
    mc.block_style = block_style;
    mc.validate();
    return mc;
}

SyntheticDataset make_dataset(const TrainConfig& config) {
    return SyntheticDataset(DatasetSpec::for_model(config.model_config(), config.dataset),
                            mix_seed(config.seed, "dataset", 0));
}

TrainBatch make_batch(const SyntheticDataset& dataset, const TrainConfig& config, std::uint64_t step,
                      std::size_t null_class) {
    Rng data = Rng::stream(config.seed, "data", step);
    Rng noise = Rng::stream(config.seed, "noise", step);
    DataBatch drawn = dataset.sample(data, config.batch);
    TrainBatch batch;
    batch.x_data = drawn.x;
    batch.y = std::move(drawn.y);
    for (auto& label : batch.y) {
        if (data.uniform() < config.label_dropout) {
            label = static_cast<int>(null_class);
        }
    }
    std::vector<double> eps(batch.x_data.numel());
    for (auto& e : eps) {
        e = noise.normal();
    }
    batch.noise = Tensor::from(batch.x_data.shape(), std::move(eps));
    batch.t.resize(config.batch);
    for (auto& t : batch.t) {
        t = sample_timestep_lognorm(noise, config.lognorm_mean, config.lognorm_std);
    }
    return batch;
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config),
      model_(config.model_config(), mix_seed(config.seed, "init", 0)),
      dataset_(make_dataset(config)),
      optimizer_(model_.trainable(), AdamW::Options{.lr = config.lr}) {}

Trainer::Trainer(const TrainConfig& config, const Checkpoint& resume)
    : config_(config),
      model_(model_from_checkpoint(resume)),
      dataset_(make_dataset(config)),
      optimizer_(model_.trainable(), AdamW::Options{.lr = config.lr}) {
    if (!(model_.config() == config.model_config())) {
        throw FormatError("checkpoint model config does not match the training config");
    }
    optimizer_.load_state(resume);
    step_ = static_cast<std::uint64_t>(kv_int(resume.header, "train_step"));
}

LossReport Trainer::step() {
    TrainBatch batch = make_batch(dataset_, config_, step_, model_.config().null_class());
    LossReport report = train_step(model_, optimizer_, batch, config_.alignment_weight);
    ++step_;
    return report;
}

void Trainer::run(const StepCallback& on_step) {
    while (step_ < config_.steps) {
        const std::uint64_t s = step_;
        LossReport report = step();
        if (on_step) {
            on_step(s, report);
        }
    }
}

Checkpoint Trainer::checkpoint() const {
    KeyValues extra;
    extra["train_step"] = std::to_string(step_);
    for (const auto& [k, v] : config_.to_key_values()) {
        extra["train." + k] = v;
    }
    Checkpoint ckpt = checkpoint_from_model(model_, extra);
    optimizer_.save_state(ckpt);
    return ckpt;
}

}  // namespace ddt
