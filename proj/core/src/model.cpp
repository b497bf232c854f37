#include "ddt/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ddt {

using ops::NormKind;

// ---------------------------------------------------------------------------
// Patch layout

namespace {

std::vector<std::size_t> patch_index(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                                     std::size_t p) {
    const std::size_t gh = height / p;
    const std::size_t gw = width / p;
    const std::size_t feat = channels * p * p;
    std::vector<std::size_t> index(batch * gh * gw * feat);
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ty = 0; ty < gh; ++ty) {
            for (std::size_t tx = 0; tx < gw; ++tx) {
                for (std::size_t c = 0; c < channels; ++c) {
                    for (std::size_t py = 0; py < p; ++py) {
                        for (std::size_t px = 0; px < p; ++px) {
                            const std::size_t y = ty * p + py;
                            const std::size_t x = tx * p + px;
                            index[o++] = ((b * channels + c) * height + y) * width + x;
                        }
                    }
                }
            }
        }
    }
    return index;
}

std::vector<std::size_t> invert(const std::vector<std::size_t>& index) {
    std::vector<std::size_t> inv(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        inv[index[i]] = i;
    }
    return inv;
}

void check_patchable(std::size_t height, std::size_t width, std::size_t p) {
    if (p == 0 || height % p != 0 || width % p != 0) {
        throw std::invalid_argument("image " + std::to_string(height) + "x" + std::to_string(width) +
                                    " not divisible by patch size " + std::to_string(p));
    }
}

}  // namespace

Tensor patchify(const Tensor& x, std::size_t patch_size) {
    if (x.rank() != 3) {
        throw std::invalid_argument("patchify expects [C,H,W], got " + shape_string(x.shape()));
    }
    Tensor tokens = patchify_batch(x.reshape({1, x.dim(0), x.dim(1), x.dim(2)}), patch_size);
    return tokens;
}

Tensor unpatchify(const Tensor& tokens, std::size_t patch_size, std::size_t channels, std::size_t height,
                  std::size_t width) {
    Tensor img = unpatchify_batch(tokens, patch_size, {1, channels, height, width});
    return img.reshape({channels, height, width});
}

Tensor patchify_batch(const Tensor& x, std::size_t p) {
    if (x.rank() != 4) {
        throw std::invalid_argument("patchify_batch expects [B,C,H,W], got " + shape_string(x.shape()));
    }
    const auto& s = x.shape();
    check_patchable(s[2], s[3], p);
    const std::size_t tokens = (s[2] / p) * (s[3] / p);
    return ops::gather(x, patch_index(s[0], s[1], s[2], s[3], p), {s[0] * tokens, s[1] * p * p});
}

Tensor unpatchify_batch(const Tensor& tokens, std::size_t p, const Shape& image_shape) {
    if (image_shape.size() != 4) {
        throw std::invalid_argument("unpatchify_batch expects a [B,C,H,W] target shape");
    }
    check_patchable(image_shape[2], image_shape[3], p);
    if (tokens.numel() != shape_numel(image_shape)) {
        throw std::invalid_argument("unpatchify_batch: " + shape_string(tokens.shape()) + " cannot fill " +
                                    shape_string(image_shape));
    }
    auto index = invert(patch_index(image_shape[0], image_shape[1], image_shape[2], image_shape[3], p));
    return ops::gather(tokens, std::move(index), image_shape);
}

Tensor adaln_residual(const Tensor& h, const Tensor& shift, const Tensor& scale, const Tensor& gate, NormKind norm,
                      const std::function<Tensor(const Tensor&)>& branch) {
    const std::size_t d = h.shape().back();
    if (shift.shape().back() != d || scale.shape().back() != d || gate.shape().back() != d) {
        throw std::invalid_argument("adaln_residual: conditioning width does not match hidden width " +
                                    std::to_string(d));
    }
    Tensor modulated = ops::modulate(ops::normalize(h, norm), shift, scale);
    return ops::gated_add(h, gate, branch(modulated));
}

Tensor timestep_frequencies(std::span<const double> t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> out(t.size() * dim);
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = 1000.0 * t[b] * freq;
            out[b * dim + i] = std::cos(arg);
            out[b * dim + half + i] = std::sin(arg);
        }
    }
    return Tensor::from({t.size(), dim}, std::move(out));
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

void add_block(std::vector<ParameterSpec>& specs, const std::string& prefix, const ModelConfig& c) {
    const std::size_t d = c.hidden_dim;
    specs.push_back({prefix + "ada.w", {d, 6 * d}, InitKind::zeros});
    specs.push_back({prefix + "ada.b", {6 * d}, InitKind::zeros});
    specs.push_back({prefix + "attn.qkv.w", {d, 3 * d}, InitKind::xavier});
    specs.push_back({prefix + "attn.qkv.b", {3 * d}, InitKind::zeros});
    specs.push_back({prefix + "attn.proj.w", {d, d}, InitKind::xavier});
    specs.push_back({prefix + "attn.proj.b", {d}, InitKind::zeros});
    if (c.block_style == BlockStyle::baseline) {
        const std::size_t h = c.mlp_ratio * d;
        specs.push_back({prefix + "ffn.fc1.w", {d, h}, InitKind::xavier});
        specs.push_back({prefix + "ffn.fc1.b", {h}, InitKind::zeros});
        specs.push_back({prefix + "ffn.fc2.w", {h, d}, InitKind::xavier});
        specs.push_back({prefix + "ffn.fc2.b", {d}, InitKind::zeros});
    } else {
        const std::size_t h = (2 * c.mlp_ratio * d) / 3;
        specs.push_back({prefix + "ffn.fc1.w", {d, 2 * h}, InitKind::xavier});
        specs.push_back({prefix + "ffn.fc2.w", {h, d}, InitKind::xavier});
    }
}

void add_embedder(std::vector<ParameterSpec>& specs, const std::string& prefix, const ModelConfig& c) {
    specs.push_back({prefix + "embed.w", {c.patch_dim(), c.hidden_dim}, InitKind::xavier});
    specs.push_back({prefix + "embed.b", {c.hidden_dim}, InitKind::zeros});
    if (c.block_style == BlockStyle::baseline) {
        specs.push_back({prefix + "pos", {c.tokens(), c.hidden_dim}, InitKind::normal_002});
    }
}

}  // namespace

std::vector<ParameterSpec> network_parameters(const ModelConfig& c, Layout layout) {
    const std::size_t d = c.hidden_dim;
    std::vector<ParameterSpec> specs;
    specs.push_back({"t_embed.fc1.w", {c.time_freq_dim, d}, InitKind::normal_002});
    specs.push_back({"t_embed.fc1.b", {d}, InitKind::zeros});
    specs.push_back({"t_embed.fc2.w", {d, d}, InitKind::normal_002});
    specs.push_back({"t_embed.fc2.b", {d}, InitKind::zeros});
    specs.push_back({"y_embed.table", {c.num_classes + 1, d}, InitKind::normal_002});
    if (layout == Layout::decoupled) {
        add_embedder(specs, "enc.", c);
        add_embedder(specs, "dec.", c);
        for (std::size_t i = 0; i < c.encoder_layers; ++i) {
            add_block(specs, "enc.blocks." + std::to_string(i) + ".", c);
        }
        for (std::size_t i = 0; i < c.decoder_layers; ++i) {
            add_block(specs, "dec.blocks." + std::to_string(i) + ".", c);
        }
    } else {
        add_embedder(specs, "trunk.", c);
        for (std::size_t i = 0; i < c.encoder_layers + c.decoder_layers; ++i) {
            add_block(specs, "trunk.blocks." + std::to_string(i) + ".", c);
        }
    }
    specs.push_back({"final.ada.w", {d, 2 * d}, InitKind::zeros});
    specs.push_back({"final.ada.b", {2 * d}, InitKind::zeros});
    specs.push_back({"final.linear.w", {d, c.patch_dim()}, InitKind::zeros});
    specs.push_back({"final.linear.b", {c.patch_dim()}, InitKind::zeros});
    return specs;
}

std::vector<ParameterSpec> projection_head_parameters(const ModelConfig& c) {
    const std::size_t h = c.projector_dim;
    return {
        {"proj.fc1.w", {c.hidden_dim, h}, InitKind::xavier},
        {"proj.fc1.b", {h}, InitKind::zeros},
        {"proj.fc2.w", {h, h}, InitKind::xavier},
        {"proj.fc2.b", {h}, InitKind::zeros},
        {"proj.fc3.w", {h, c.teacher_dim}, InitKind::xavier},
        {"proj.fc3.b", {c.teacher_dim}, InitKind::zeros},
    };
}

std::vector<ParameterSpec> teacher_parameters(const ModelConfig& c) {
    const std::size_t tc = c.teacher_channels;
    return {
        {"teacher.conv.w", {tc, c.channels, 3, 3}, InitKind::teacher},
        {"teacher.conv.b", {tc}, InitKind::teacher},
        {"teacher.proj.w", {tc * c.patch_size * c.patch_size, c.teacher_dim}, InitKind::teacher},
    };
}

std::size_t parameter_count(const std::vector<ParameterSpec>& specs) {
    std::size_t n = 0;
    for (const auto& s : specs) {
        n += shape_numel(s.shape);
    }
    return n;
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::vector<double> initial_values(const ParameterSpec& spec, Rng& rng) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<double> v(n, 0.0);
    switch (spec.init) {
        case InitKind::zeros:
            break;
        case InitKind::xavier: {
            const double fan_in = static_cast<double>(spec.shape[0]);
            const double fan_out = static_cast<double>(spec.shape[1]);
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& x : v) x = rng.uniform(-bound, bound);
            break;
        }
        case InitKind::normal_002:
            for (auto& x : v) x = rng.normal(0.0, 0.02);
            break;
        case InitKind::teacher: {
            // Fan-in scaled Gaussian; biases get a small spread so features are not odd-symmetric.
            double fan_in = 1.0;
            if (spec.shape.size() == 4) {
                fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
            } else if (spec.shape.size() == 2) {
                fan_in = static_cast<double>(spec.shape[0]);
            }
            const double std = spec.shape.size() == 1 ? 0.1 : 1.0 / std::sqrt(fan_in);
            for (auto& x : v) x = rng.normal(0.0, std);
            break;
        }
    }
    return v;
}

}  // namespace

DDTModel::DDTModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), counters_(std::make_unique<NfeCounters>()) {
    config_.validate();
    norm_ = config_.block_style == BlockStyle::baseline ? NormKind::layer : NormKind::rms;
    if (config_.block_style == BlockStyle::improved) {
        rotary_ = ops::RotaryTable::grid_2d(config_.grid(), config_.grid(), config_.head_dim());
    }
    Rng init = Rng::stream(init_seed, "init");
    for (const auto& spec : network_parameters(config_)) {
        params_[spec.name] = Tensor::from(spec.shape, initial_values(spec, init), true);
    }
    for (const auto& spec : projection_head_parameters(config_)) {
        params_[spec.name] = Tensor::from(spec.shape, initial_values(spec, init), true);
    }
    Rng teacher = Rng::stream(init_seed, "teacher");
    for (const auto& spec : teacher_parameters(config_)) {
        params_[spec.name] = Tensor::from(spec.shape, initial_values(spec, teacher), false);
    }
}

const Tensor& DDTModel::parameter(const std::string& name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return it->second;
}

bool DDTModel::is_frozen(const std::string& name) const { return name.rfind("teacher.", 0) == 0; }

std::vector<std::pair<std::string, Tensor>> DDTModel::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params_) {
        if (!is_frozen(name)) {
            out.emplace_back(name, t);
        }
    }
    return out;
}

void DDTModel::set_parameter(const std::string& name, std::span<const double> values) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    auto dst = it->second.mutable_data();
    if (dst.size() != values.size()) {
        throw std::invalid_argument("parameter '" + name + "' expects " + std::to_string(dst.size()) + " values, got " +
                                    std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), dst.begin());
}

void DDTModel::perturb(Rng& rng, double scale) {
    for (auto& [name, t] : params_) {
        if (is_frozen(name)) continue;
        for (auto& v : t.mutable_data()) {
            v += rng.normal(0.0, scale);
        }
    }
}

void DDTModel::check_input(const Tensor& x_t, std::span<const double> t) const {
    const Shape expected{x_t.rank() == 4 ? x_t.dim(0) : 0, config_.channels, config_.image_size, config_.image_size};
    if (x_t.rank() != 4 || x_t.shape() != expected) {
        throw std::invalid_argument("model input must be [B," + std::to_string(config_.channels) + "," +
                                    std::to_string(config_.image_size) + "," + std::to_string(config_.image_size) +
                                    "], got " + shape_string(x_t.shape()));
    }
    if (t.size() != x_t.dim(0)) {
        throw std::invalid_argument("expected one timestep per sample");
    }
    for (double ti : t) {
        if (!(ti >= 0.0 && ti <= 1.0)) {
            throw std::invalid_argument("timestep " + std::to_string(ti) + " outside [0, 1]");
        }
    }
}

Tensor DDTModel::time_embedding(std::span<const double> t) const {
    Tensor f = timestep_frequencies(t, config_.time_freq_dim);
    Tensor h = ops::silu(ops::linear(f, p("t_embed.fc1.w"), p("t_embed.fc1.b")));
    return ops::linear(h, p("t_embed.fc2.w"), p("t_embed.fc2.b"));
}

Tensor DDTModel::embed_tokens(const std::string& prefix, const Tensor& patches, std::size_t) const {
    Tensor x = ops::linear(patches, p(prefix + "embed.w"), p(prefix + "embed.b"));
    if (config_.block_style == BlockStyle::baseline) {
        x = ops::add_tiled(x, p(prefix + "pos"));
    }
    return x;
}

Tensor DDTModel::block(const std::string& prefix, const Tensor& x, const Tensor& cond, std::size_t batch) const {
    const std::size_t d = config_.hidden_dim;
    Tensor mod = ops::linear(cond, p(prefix + "ada.w"), p(prefix + "ada.b"));
    auto chunk = [&](std::size_t i) { return ops::slice_cols(mod, i * d, d); };

    const ops::RotaryTable* rope = rotary_.empty() ? nullptr : &rotary_;
    auto attn = [&](const Tensor& h) {
        Tensor qkv = ops::linear(h, p(prefix + "attn.qkv.w"), p(prefix + "attn.qkv.b"));
        Tensor o = ops::attention(qkv, batch, config_.tokens(), config_.heads, rope);
        return ops::linear(o, p(prefix + "attn.proj.w"), p(prefix + "attn.proj.b"));
    };
    auto ffn = [&](const Tensor& h) {
        if (config_.block_style == BlockStyle::baseline) {
            Tensor u = ops::gelu_tanh(ops::linear(h, p(prefix + "ffn.fc1.w"), p(prefix + "ffn.fc1.b")));
            return ops::linear(u, p(prefix + "ffn.fc2.w"), p(prefix + "ffn.fc2.b"));
        }
        const std::size_t hidden = p(prefix + "ffn.fc2.w").dim(0);
        Tensor u = ops::linear(h, p(prefix + "ffn.fc1.w"));
        Tensor gated = ops::mul(ops::silu(ops::slice_cols(u, 0, hidden)), ops::slice_cols(u, hidden, hidden));
        return ops::linear(gated, p(prefix + "ffn.fc2.w"));
    };

    Tensor out = adaln_residual(x, chunk(0), chunk(1), chunk(2), norm_, attn);
    return adaln_residual(out, chunk(3), chunk(4), chunk(5), norm_, ffn);
}

EncoderOutput DDTModel::encode(const Tensor& x_t, std::span<const double> t, std::span<const int> y) const {
    check_input(x_t, t);
    if (y.size() != t.size()) {
        throw std::invalid_argument("expected one class label per sample");
    }
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) > config_.num_classes) {
            throw std::invalid_argument("class label " + std::to_string(label) + " outside [0, " +
                                        std::to_string(config_.num_classes) + "]");
        }
    }
    counters_->encoder.fetch_add(1, std::memory_order_relaxed);
    const std::size_t batch = x_t.dim(0);
    const std::size_t d = config_.hidden_dim;

    EncoderOutput out;
    out.condition.t_embedding = time_embedding(t);
    out.condition.y_embedding = ops::embedding(p("y_embed.table"), y);
    Tensor cond = ops::silu(ops::add(out.condition.t_embedding, out.condition.y_embedding));

    Tensor s = embed_tokens("enc.", patchify_batch(x_t, config_.patch_size), batch);
    for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
        s = block("enc.blocks." + std::to_string(i) + ".", s, cond, batch);
        if (i + 1 == config_.alignment_layer) {
            out.h_align = s.reshape({batch, config_.tokens(), d});
        }
    }
    out.condition.z = ops::normalize(s, norm_).reshape({batch, config_.tokens(), d});
    return out;
}

Tensor DDTModel::decode(const Tensor& x_t, std::span<const double> t, const Tensor& z) const {
    check_input(x_t, t);
    const std::size_t batch = x_t.dim(0);
    const std::size_t d = config_.hidden_dim;
    if (!z.defined() || z.shape() != Shape{batch, config_.tokens(), d}) {
        throw std::invalid_argument("self-condition must be [B,T,D] = " +
                                    shape_string({batch, config_.tokens(), d}) + ", got " +
                                    (z.defined() ? shape_string(z.shape()) : std::string("undefined")));
    }
    counters_->decoder.fetch_add(1, std::memory_order_relaxed);

    Tensor t_emb = time_embedding(t);
    Tensor cond = ops::silu(ops::add_expand(z.reshape({batch * config_.tokens(), d}), t_emb));

    Tensor x = embed_tokens("dec.", patchify_batch(x_t, config_.patch_size), batch);
    for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
        x = block("dec.blocks." + std::to_string(i) + ".", x, cond, batch);
    }
    Tensor mod = ops::linear(cond, p("final.ada.w"), p("final.ada.b"));
    x = ops::modulate(ops::normalize(x, norm_), ops::slice_cols(mod, 0, d), ops::slice_cols(mod, d, d));
    Tensor v = ops::linear(x, p("final.linear.w"), p("final.linear.b"));
    return unpatchify_batch(v, config_.patch_size, x_t.shape());
}

Tensor DDTModel::forward(const Tensor& x_t, std::span<const double> t, std::span<const int> y) const {
    return decode(x_t, t, encode(x_t, t, y).condition.z);
}

Tensor DDTModel::teacher_features(const Tensor& x_clean) const {
    if (x_clean.rank() != 4 || x_clean.dim(1) != config_.channels || x_clean.dim(2) != config_.image_size ||
        x_clean.dim(3) != config_.image_size) {
        throw std::invalid_argument("teacher input must be [B,C,H,W] matching the model, got " +
                                    shape_string(x_clean.shape()));
    }
    NoGradGuard no_grad;
    const std::size_t batch = x_clean.dim(0);
    const std::size_t cin = config_.channels;
    const std::size_t cout = config_.teacher_channels;
    const std::size_t n = config_.image_size;
    const auto w = p("teacher.conv.w").data();
    const auto bias = p("teacher.conv.b").data();
    const auto x = x_clean.data();

    // 3x3 zero-padded convolution followed by tanh.
    std::vector<double> feat(batch * cout * n * n);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    double acc = bias[o];
                    for (std::size_t i = 0; i < cin; ++i) {
                        for (int dr = -1; dr <= 1; ++dr) {
                            for (int dc = -1; dc <= 1; ++dc) {
                                const long rr = static_cast<long>(r) + dr;
                                const long cc = static_cast<long>(c) + dc;
                                if (rr < 0 || cc < 0 || rr >= static_cast<long>(n) || cc >= static_cast<long>(n)) {
                                    continue;
                                }
                                acc += w[((o * cin + i) * 3 + (dr + 1)) * 3 + (dc + 1)] *
                                       x[((b * cin + i) * n + rr) * n + cc];
                            }
                        }
                    }
                    feat[((b * cout + o) * n + r) * n + c] = std::tanh(acc);
                }
            }
        }
    }
    Tensor maps = Tensor::from({batch, cout, n, n}, std::move(feat));
    Tensor tokens = ops::linear(patchify_batch(maps, config_.patch_size), p("teacher.proj.w"));
    return tokens.reshape({batch, config_.tokens(), config_.teacher_dim});
}

Tensor DDTModel::project(const Tensor& h_align) const {
    const std::size_t d = config_.hidden_dim;
    if (!h_align.defined() || h_align.shape().back() != d) {
        throw std::invalid_argument("projection head expects tokens of width " + std::to_string(d));
    }
    const std::size_t rows = h_align.numel() / d;
    Tensor h = h_align.reshape({rows, d});
    h = ops::silu(ops::linear(h, p("proj.fc1.w"), p("proj.fc1.b")));
    h = ops::silu(ops::linear(h, p("proj.fc2.w"), p("proj.fc2.b")));
    h = ops::linear(h, p("proj.fc3.w"), p("proj.fc3.b"));
    Shape shape = h_align.shape();
    shape.back() = config_.teacher_dim;
    return h.reshape(shape);
}

}  // namespace ddt
