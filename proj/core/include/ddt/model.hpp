#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddt/config.hpp"
#include "ddt/ops.hpp"
#include "ddt/rng.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// [C,H,W] -> [num_tokens, C*p*p]; tokens in raster order, features ordered
/// (channel, row-in-patch, col-in-patch).
Tensor patchify(const Tensor& x, std::size_t patch_size);
/// Inverse of patchify for a [C,H,W] target shape.
Tensor unpatchify(const Tensor& tokens, std::size_t patch_size, std::size_t channels, std::size_t height,
                  std::size_t width);

/// Batched forms: [B,C,H,W] <-> [B*T, C*p*p]. Differentiable.
Tensor patchify_batch(const Tensor& x, std::size_t patch_size);
Tensor unpatchify_batch(const Tensor& tokens, std::size_t patch_size, const Shape& image_shape);

/// AdaLN-Zero residual: h + gate * branch(shift + (1 + scale) * norm(h)).
/// shift/scale/gate are [Rc, D] rows expanded over the rows of h.
Tensor adaln_residual(const Tensor& h, const Tensor& shift, const Tensor& scale, const Tensor& gate,
                      ops::NormKind norm, const std::function<Tensor(const Tensor&)>& branch);

/// Sinusoidal embedding of t in [0,1] (scaled by 1000) -> [B, dim].
Tensor timestep_frequencies(std::span<const double> t, std::size_t dim);

struct ConditionBundle {
    Tensor t_embedding;  // [B, D]
    Tensor y_embedding;  // [B, D]
    Tensor z;            // [B, T, D] self-condition tokens
};

struct EncoderOutput {
    ConditionBundle condition;
    Tensor h_align;  // [B, T, D] tokens after the alignment layer
};

enum class InitKind { zeros, xavier, normal_002, teacher };

struct ParameterSpec {
    std::string name;
    Shape shape;
    InitKind init;
};

enum class Layout { decoupled, monolithic };

/// Parameter layout of the trainable network (projection head and frozen
/// teacher excluded). The monolithic layout stacks all encoder+decoder
/// layers as one DiT-style trunk for size comparisons.
std::vector<ParameterSpec> network_parameters(const ModelConfig& config, Layout layout = Layout::decoupled);
std::vector<ParameterSpec> projection_head_parameters(const ModelConfig& config);
std::vector<ParameterSpec> teacher_parameters(const ModelConfig& config);

std::size_t parameter_count(const std::vector<ParameterSpec>& specs);

/// Forward-pass counters, one increment per batched call.
struct NfeCounters {
    std::atomic<std::size_t> encoder{0};
    std::atomic<std::size_t> decoder{0};
    void reset() {
        encoder = 0;
        decoder = 0;
    }
};

/// Decoupled diffusion transformer: condition encoder (x_t, t, y) -> z_t and
/// velocity decoder (x_t, t, z_t) -> v_t, plus the alignment projection head
/// and a frozen random teacher network.
class DDTModel {
public:
    DDTModel(const ModelConfig& config, std::uint64_t init_seed);

    DDTModel(DDTModel&&) noexcept = default;
    DDTModel& operator=(DDTModel&&) noexcept = default;
    DDTModel(const DDTModel&) = delete;
    DDTModel& operator=(const DDTModel&) = delete;

    const ModelConfig& config() const { return config_; }

    /// x_t [B,C,H,W], one t and one label per sample. Labels may equal
    /// num_classes (null class).
    EncoderOutput encode(const Tensor& x_t, std::span<const double> t, std::span<const int> y) const;
    /// No class label enters here; z is [B,T,D] from encode().
    Tensor decode(const Tensor& x_t, std::span<const double> t, const Tensor& z) const;
    Tensor decode(const Tensor& x_t, std::span<const double> t, const ConditionBundle& c) const {
        return decode(x_t, t, c.z);
    }
    Tensor forward(const Tensor& x_t, std::span<const double> t, std::span<const int> y) const;

    /// Frozen teacher features r_* of clean data -> [B, T, teacher_dim].
    Tensor teacher_features(const Tensor& x_clean) const;
    /// Projection head h_phi applied to aligned tokens -> [B, T, teacher_dim].
    Tensor project(const Tensor& h_align) const;

    const std::map<std::string, Tensor>& parameters() const { return params_; }
    const Tensor& parameter(const std::string& name) const;
    /// Trainable parameters (network + projection head) in name order.
    std::vector<std::pair<std::string, Tensor>> trainable() const;
    bool is_frozen(const std::string& name) const;
    /// Replaces a parameter's values; shape must match.
    void set_parameter(const std::string& name, std::span<const double> values);

    /// Adds N(0, scale^2) noise to every trainable parameter, including the
    /// zero-initialized gates. Used to exercise non-trivial weights.
    void perturb(Rng& rng, double scale);

    NfeCounters& counters() const { return *counters_; }

    /// One transformer block by parameter prefix (e.g. "dec.blocks.0.").
    /// x is [B*T, D]; cond is [B, D] or [B*T, D].
    Tensor block(const std::string& prefix, const Tensor& x, const Tensor& cond, std::size_t batch) const;

private:
    Tensor time_embedding(std::span<const double> t) const;
    Tensor embed_tokens(const std::string& prefix, const Tensor& patches, std::size_t batch) const;
    void check_input(const Tensor& x_t, std::span<const double> t) const;
    const Tensor& p(const std::string& name) const { return parameter(name); }

    ModelConfig config_;
    ops::NormKind norm_;
    ops::RotaryTable rotary_;
    std::map<std::string, Tensor> params_;
    std::unique_ptr<NfeCounters> counters_;
};

}  // namespace ddt
