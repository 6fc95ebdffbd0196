#pragma once

#include "wid/dataset.hpp"
#include "wid/imaging.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace wid {

inline constexpr int kConvBlocks = 6;

struct BlockSpec {
  int filters = 32;
  int stride = 1;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

/// Six conv -> ReLU -> batch-norm blocks with 3x3 same-padded kernels, followed
/// (for training only) by global average pooling and a linear head.
struct ConvSpec {
  std::array<BlockSpec, kConvBlocks> blocks{
      {{32, 1}, {32, 1}, {64, 2}, {64, 1}, {128, 2}, {128, 1}}};
  int in_channels = 1;
  int classes = 26;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  /// Throws ShapeError on a malformed spec.
  void validate() const;
  int in_channels_of(int block) const { return block == 0 ? in_channels : blocks[block - 1].filters; }

  /// Spatial size after block `layer` (1-based) for an input of side `n`.
  int output_side(int n, int layer) const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

void to_json(nlohmann::json& j, const ConvSpec& spec);
void from_json(const nlohmann::json& j, ConvSpec& spec);

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct ConvBlock {
  /// filters x (9 * in_channels); column index = (ky * 3 + kx) * in_channels + channel.
  Mat<Scalar> kernel;
  Vec<Scalar> bias;
  Vec<Scalar> gamma, beta;
  Vec<Scalar> running_mean, running_var;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  int best_epoch = 0;
  double val_accuracy = 0;
  std::string dataset_digest;
  std::string config_digest;
};

template <typename Scalar>
struct NetWeights {
  ConvSpec spec;
  std::array<ConvBlock<Scalar>, kConvBlocks> blocks;
  Mat<Scalar> head_weight;  ///< classes x last filter count
  Vec<Scalar> head_bias;
  TrainingMeta meta;

  /// Zero-filled tensors with the shapes `spec` implies (running variance = 1).
  static NetWeights zeros(const ConvSpec& spec);
  /// Kaiming-uniform (fan-in) kernels, zero biases, unit/zero batch-norm affine.
  static NetWeights initialize(const ConvSpec& spec, std::uint64_t seed);

  template <typename To>
  NetWeights<To> cast() const;

  /// Throws WeightMismatch if any tensor disagrees with `spec` or a running variance is <= 0.
  void validate() const;
};

/// Named view of one trainable tensor.
template <typename Scalar>
struct ParamView {
  std::string name;
  Scalar* data;
  Eigen::Index size;
};

/// Trainable tensors in a fixed order (running statistics excluded).
template <typename Scalar>
std::vector<ParamView<Scalar>> parameters(NetWeights<Scalar>& w);

/// Per-layer output of one input: `maps` is filters x (height * width), pixel index y * width + x.
template <typename Scalar>
struct FeatureStack {
  int layer = 0;
  int height = 0, width = 0;
  Mat<Scalar> maps;

  int filters() const { return static_cast<int>(maps.rows()); }
  Grid<Scalar> map(int f) const;
};

/// Inference-mode forward pass of a single-channel image through blocks 1..upto_layer.
/// Throws ShapeError when a side is below `min_side` or upto_layer is outside 1..6.
template <typename Scalar>
FeatureStack<Scalar> forward(const Grid<Scalar>& image, const NetWeights<Scalar>& weights,
                             int upto_layer, int min_side = 1);

/// Feature stacks of every block 1..upto_layer (index 0 = conv1).
template <typename Scalar>
std::vector<FeatureStack<Scalar>> forward_all(const Grid<Scalar>& image,
                                              const NetWeights<Scalar>& weights, int upto_layer,
                                              int min_side = 1);

/// Training-mode (batch statistics) softmax cross-entropy, mean over the batch.
/// `images` holds one flattened rows x cols image per row. When `grads` is non-null it
/// receives d(loss)/d(parameter) with the same layout as the weights.
template <typename Scalar>
Scalar loss_and_gradients(const NetWeights<Scalar>& weights,
                          const Eigen::Ref<const Mat<Scalar>>& images, int rows, int cols,
                          const std::vector<int>& labels, NetWeights<Scalar>* grads);

/// Training-mode ReLU on/off pattern of every conv unit, concatenated over blocks. Finite
/// difference checks use it to discard probes that straddle a ReLU kink.
template <typename Scalar>
std::vector<bool> relu_pattern(const NetWeights<Scalar>& weights,
                               const Eigen::Ref<const Mat<Scalar>>& images, int rows, int cols);

/// Inference-mode class scores (classes x batch).
template <typename Scalar>
Mat<Scalar> predict_logits(const NetWeights<Scalar>& weights,
                           const Eigen::Ref<const Mat<Scalar>>& images, int rows, int cols);

struct TrainOptions {
  int epochs = 50;
  double learning_rate = 1e-3;
  int lr_step_epochs = 10;
  double lr_decay = 0.1;
  int batch_size = 128;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 1;
  /// Stop once validation accuracy reaches this value (> 1 disables).
  double target_accuracy = 2.0;
};

struct EpochReport {
  int epoch = 0;
  double learning_rate = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_accuracy = 0;
  double seconds = 0;
};

struct TrainResult {
  NetWeights<float> weights;  ///< snapshot of the best-validation epoch
  std::vector<EpochReport> history;
};

/// Adam training with step learning-rate decay; returns the best-validation weights.
/// Throws EmptyDataset / LabelOutOfRange on bad input.
TrainResult train_classifier(const LabeledImages& train, const LabeledImages& val,
                             const ConvSpec& spec, const TrainOptions& options,
                             const std::function<void(const EpochReport&)>& on_epoch = {});

double accuracy(const NetWeights<float>& weights, const LabeledImages& set, int batch_size = 256);

/// Weight container: "SIDW0001", u32 LE header length, JSON header, LE float32
/// tensors in parameters() order followed by running statistics, u32 LE CRC32 trailer.
void save_weights(const NetWeights<float>& weights, const std::filesystem::path& path);
NetWeights<float> load_weights(const std::filesystem::path& path);

}  // namespace wid
