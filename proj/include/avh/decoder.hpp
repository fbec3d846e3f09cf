#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avh/baking.hpp"
#include "avh/mesh.hpp"
#include "avh/skinning.hpp"

namespace avh {

struct DecoderConfig {
  int fc_size = 8;            // side of the learned feature cuboid
  int latent_size = 32;       // latent pose size = cuboid depth
  int hidden_size = 256;      // MLP hidden width
  int out_resolution = 64;    // side of both output maps
  double displacement_max = 0.05;

  /// Requires out_resolution = fc_size * 2^k with k >= 1 and latent_size divisible by 2^k.
  void validate() const;
  /// Number of upsampling stages k.
  int upsamplings() const;
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Tensor order of the network; fixes both the flat parameter vector and the weight file.
///
/// Parameters: mlp.fc1.{weight,bias}, mlp.fc2.{weight,bias}, cuboid, then per head ("color",
/// "displacement") and per stage s: stage{s}.conv{1,2}.weight [C,C,3,3], stage{s}.bn{1,2}.{gamma,beta},
/// stage{s}.up.{weight [C,C/2,2,2], bias} (not on the last stage), out.{weight [3,C_k], bias}.
/// Buffers: the batch-norm running means and variances in the same head/stage order.
struct DecoderLayout {
  DecoderConfig config;
  std::vector<TensorSpec> params;
  std::vector<TensorSpec> buffers;
  std::size_t param_size = 0;
  std::size_t buffer_size = 0;

  explicit DecoderLayout(const DecoderConfig& config);
  const TensorSpec& param(const std::string& name) const;
  const TensorSpec& buffer(const std::string& name) const;
};

struct ParamBlock {
  std::string name;
  std::size_t count = 0;
};

struct ParamReport {
  std::size_t total = 0;
  std::vector<ParamBlock> blocks;  // mlp, cuboid, then per head: convs, batch norm, upsampling, output
  std::string text() const;
};

ParamReport param_report(const DecoderConfig& config);
std::size_t param_count(const DecoderConfig& config);

template <typename S>
struct DecoderWeightsT {
  DecoderConfig config;
  std::vector<S> params;
  std::vector<S> buffers;  // running statistics; not trained by gradient
};
using DecoderWeights = DecoderWeightsT<float>;

/// He-normal convolution and dense weights, zero biases, unit-normal cuboid, zero output layer,
/// batch norm gamma = 1 / beta = 0, running mean 0 / variance 1. Deterministic in the seed.
DecoderWeights init_weights(const DecoderConfig& config, std::uint64_t seed);

template <typename T, typename S>
DecoderWeightsT<T> cast_weights(const DecoderWeightsT<S>& w) {
  DecoderWeightsT<T> out{w.config, {}, {}};
  out.params.assign(w.params.begin(), w.params.end());
  out.buffers.assign(w.buffers.begin(), w.buffers.end());
  return out;
}

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Maps as channels x pixels, pixel index y * side + x (rows top to bottom, like FloatGrid).
template <typename S>
struct DecoderOutputT {
  Mat<S> color;         // in [0, 1]
  Mat<S> displacement;  // meters, |d| <= displacement_max
};
using DecoderOutput = DecoderOutputT<float>;

/// Training target for one frame at the decoder's output resolution.
template <typename S>
struct DecoderTargetT {
  Mat<S> color;         // 3 x P
  Mat<S> displacement;  // 3 x P, meters
  Vec<S> kappa;         // P, texture mask
  Vec<S> weight;        // P, displacement mask (registered-mesh visibility, 0 where unmatched)
};
using DecoderTarget = DecoderTargetT<float>;

/// Resamples a filled bundle to `resolution` and extracts the loss masks.
DecoderTarget make_target(const BakeBundle& bundle, int resolution);

template <typename T, typename S>
DecoderTargetT<T> cast_target(const DecoderTargetT<S>& t) {
  return {t.color.template cast<T>(), t.displacement.template cast<T>(), t.kappa.template cast<T>(),
          t.weight.template cast<T>()};
}

/// Inference forward pass (batch norm uses running statistics). Throws on a weight-size mismatch.
template <typename S>
DecoderOutputT<S> forward(const DecoderWeightsT<S>& weights, const Theta& theta);

/// Forward pass of a batch in training mode (batch statistics).
template <typename S>
std::vector<DecoderOutputT<S>> forward_train(const DecoderWeightsT<S>& weights, std::span<const Theta> thetas);

/// Sum kappa (c' - c)^2 / (3 sum kappa + eps) + sum w (d'/dmax - d/dmax)^2 / (3 sum w + eps), eps = 1e-8.
template <typename S>
S masked_loss(const DecoderOutputT<S>& out, const DecoderTargetT<S>& target, double displacement_max);

struct GradientOptions {
  bool update_running_stats = false;
  /// When set, receives the sign pattern (pre-activation > 0) of every ReLU in the pass.
  std::vector<std::uint8_t>* relu_pattern = nullptr;
};

/// Training-mode batch loss (mean of per-item masked losses) and, when `grad` is non-null, its exact
/// gradient with respect to every parameter (resized to the parameter count). Throws when a gradient
/// is not finite, naming the tensor.
template <typename S>
S loss_and_gradient(DecoderWeightsT<S>& weights, std::span<const Theta> thetas,
                    std::span<const DecoderTargetT<S>* const> targets, std::vector<S>* grad,
                    const GradientOptions& options = {});

/// Sets the running statistics to the batch statistics of `thetas` processed as one batch.
template <typename S>
void recalibrate_batch_norm(DecoderWeightsT<S>& weights, std::span<const Theta> thetas);

template <typename S>
class Adam {
 public:
  Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<S> params, std::span<const S> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      params[i] = static_cast<S>(params[i] - lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
    }
  }
  long steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainConfig {
  double lr = 0.00131;
  int batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 0.99;  // per epoch
  int epochs = 200;
  long max_steps = 0;      // 0: no step limit
  std::uint64_t seed = 0;
  /// After training, replace running statistics by whole-training-set batch statistics.
  bool recalibrate_bn = true;

  void validate() const;
};

struct TrainSample {
  Theta theta{};
  DecoderTarget target;
};

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  // NaN without a validation set
};

struct TrainResult {
  DecoderWeights weights;
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
};

/// Adam with bias correction, lr decayed by lr_decay after every epoch, batches drawn from a seeded
/// shuffle. Aborts (throws) when a batch loss exceeds 10x the first one.
TrainResult train(const std::vector<TrainSample>& training, const std::vector<TrainSample>& validation,
                  const DecoderConfig& config, const TrainConfig& train_config,
                  std::optional<DecoderWeights> initial = std::nullopt);

/// Mean inference-mode masked loss over a sample set.
double evaluate(const DecoderWeights& weights, const std::vector<TrainSample>& samples);

FloatGrid output_grid(const Mat<float>& channels_by_pixels, int side);

void save_weights(const DecoderWeights& weights, const std::filesystem::path& path);
DecoderWeights load_weights(const std::filesystem::path& path);
void write_loss_csv(const std::vector<EpochLog>& epochs, const std::filesystem::path& path);

}  // namespace avh
