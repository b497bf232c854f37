#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddt/checkpoint.hpp"
#include "ddt/config.hpp"
#include "ddt/dataset.hpp"
#include "ddt/model.hpp"
#include "ddt/rng.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// One flow-matching minibatch. t lies strictly inside (0, 1).
struct TrainBatch {
    Tensor x_data;            // [B,C,H,W]
    std::vector<int> y;       // labels, null class allowed
    Tensor noise;             // [B,C,H,W]
    std::vector<double> t;    // one per sample
};

struct Interpolant {
    Tensor x_t;       // t * x_data + (1 - t) * noise
    Tensor v_target;  // x_data - noise
};

/// Linear path with t = 0 at pure noise. `t` holds one value per leading
/// index of x_data (or a single value applied to everything).
Interpolant interpolate(const Tensor& x_data, const Tensor& noise, std::span<const double> t);
Interpolant interpolate(const Tensor& x_data, const Tensor& noise, double t);

double logistic(double u);

inline constexpr double kTimestepClamp = 1e-5;

/// Logit-normal draw: logistic(u), u ~ N(mean, std^2), clamped to
/// [kTimestepClamp, 1 - kTimestepClamp].
double sample_timestep_lognorm(Rng& rng, double mean, double std);

/// Mean over tokens of 1 - cos(r_star, projected). Both [..., teacher_dim].
Tensor alignment_loss(const Tensor& projected, const Tensor& r_star);

struct LossReport {
    double loss_dec = 0.0;
    double loss_enc = 0.0;
    double total = 0.0;
    double alignment_weight = 0.0;
    bool skipped = false;
    std::string diagnostic;
};

struct LossGraph {
    LossReport report;
    Tensor total;  // scalar with graph attached
};

/// Decoder velocity MSE plus weighted encoder alignment loss. Throws
/// NumericalError when the forward pass is not finite.
LossGraph flow_matching_loss(const DDTModel& model, const TrainBatch& batch, double alignment_weight);

/// Adam with decoupled weight decay. Moments are keyed by parameter name so
/// they can be checkpointed.
class AdamW {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<std::pair<std::string, Tensor>> params, Options options);

    void zero_grad();
    /// Applies one update from the accumulated gradients.
    void step();
    /// True when every gradient is finite.
    bool gradients_finite() const;

    std::uint64_t steps() const { return step_; }
    const Options& options() const { return options_; }

    /// adam.m.<name> / adam.v.<name> blocks and the step counter.
    void save_state(Checkpoint& ckpt) const;
    void load_state(const Checkpoint& ckpt);

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    Options options_;
    std::uint64_t step_ = 0;
};

/// Zeroes gradients, evaluates the loss, backpropagates and updates. A step
/// whose gradients are not finite is skipped and flagged in the report.
LossReport train_step(const DDTModel& model, AdamW& optimizer, const TrainBatch& batch, double alignment_weight);

struct TrainConfig {
    std::string preset = "desk";
    BlockStyle block_style = BlockStyle::improved;
    std::uint64_t seed = 0;
    std::size_t steps = 2000;
    std::size_t batch = 32;
    double alignment_weight = 0.5;
    DatasetKind dataset = DatasetKind::bands;
    double lr = 1e-4;
    double lognorm_mean = 0.0;
    double lognorm_std = 1.0;
    double label_dropout = 0.1;

    static TrainConfig from_key_values(const KeyValues& kv);
    KeyValues to_key_values() const;
    ModelConfig model_config() const;
    void validate() const;
};

/// Deterministic minibatch for a given step: data and noise come from the
/// (seed, "data", step) and (seed, "noise", step) streams.
TrainBatch make_batch(const SyntheticDataset& dataset, const TrainConfig& config, std::uint64_t step,
                      std::size_t null_class);

/// Dataset templates are seeded from the run seed's "dataset" stream.
SyntheticDataset make_dataset(const TrainConfig& config);

/// Model, optimizer and step counter of one training run.
class Trainer {
public:
    explicit Trainer(const TrainConfig& config);
    /// Resumes from a checkpoint written by checkpoint().
    Trainer(const TrainConfig& config, const Checkpoint& resume);

    using StepCallback = std::function<void(std::uint64_t step, const LossReport&)>;
    /// Runs until config.steps total steps have been taken.
    void run(const StepCallback& on_step = {});
    LossReport step();

    const DDTModel& model() const { return model_; }
    DDTModel& model() { return model_; }
    const SyntheticDataset& dataset() const { return dataset_; }
    std::uint64_t current_step() const { return step_; }
    const TrainConfig& config() const { return config_; }

    /// Model, optimizer moments, train config and step counter.
    Checkpoint checkpoint() const;

private:
    TrainConfig config_;
    DDTModel model_;
    SyntheticDataset dataset_;
    AdamW optimizer_;
    std::uint64_t step_ = 0;
};

}  // namespace ddt
