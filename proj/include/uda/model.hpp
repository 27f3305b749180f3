#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uda/ops.hpp"
#include "uda/optim.hpp"

namespace uda {

/// Shared feature extractor layout.
///
/// Plain variant: per stage a 3x3 convolution (padding 1), ReLU and 2x2 max
/// pooling, then global average pooling. Residual variant: per stage a
/// pre-activation block (BN, ReLU, conv, BN, ReLU, conv, plus shortcut)
/// followed by max pooling, then BN, ReLU and global average pooling.
/// The feature dimension is the width of the last stage.
struct EncoderConfig {
  std::size_t input_channels = 1;
  std::vector<std::size_t> widths{32, 64, 128};
  std::size_t feature_dim = 128;
  bool residual = false;

  /// Throws ConfigError on unusable settings; returns soft warnings.
  std::vector<std::string> validate() const;
  /// Spatial extents must be divisible by this.
  std::size_t downsample_factor() const { return std::size_t{1} << widths.size(); }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline constexpr std::size_t kMinFeatureDim = 64;
inline constexpr std::size_t kMaxFeatureDim = 512;

enum class HeadKind { classification, regression };

/// One linear head. Task id 0 is the main classifier.
struct HeadConfig {
  int task_id = 0;
  std::size_t output_dim = 0;
  HeadKind kind = HeadKind::classification;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

enum class Mode { train, eval };

template <class T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <class T>
struct NormParams {
  Tensor<T> scale;
  Tensor<T> shift;
  ops::RunningMoments<T> moments;
};

template <class T>
struct StageParams {
  ConvParams<T> conv;
  // Residual variant only.
  NormParams<T> norm1;
  NormParams<T> norm2;
  ConvParams<T> conv2;
  std::optional<ConvParams<T>> shortcut;
};

template <class T>
struct HeadParams {
  HeadConfig config;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Encoder parameters plus one linear head per registered task.
template <class T>
class Model {
 public:
  /// Deterministic in seed. Every tensor draws from its own stream derived
  /// from the seed and the tensor name, so the encoder and main head are
  /// initialised identically regardless of which auxiliary heads exist.
  Model(EncoderConfig encoder, std::vector<HeadConfig> heads, std::uint64_t seed);

  const EncoderConfig& encoder_config() const { return encoder_; }
  std::vector<HeadConfig> head_configs() const;
  std::size_t feature_dim() const { return encoder_.feature_dim; }

  bool has_head(int task_id) const { return heads_.count(task_id) != 0; }
  const HeadParams<T>& head(int task_id) const;
  /// Drops an auxiliary head. The main head cannot be removed.
  void remove_head(int task_id);

  /// phi(x) recorded on a tape; train mode updates batch-norm moments.
  Var encode(Tape<T>& tape, Var images, Mode mode);
  /// h_k(features).
  Var head_forward(Tape<T>& tape, int task_id, Var features);

  /// Eval-mode features without gradients, computed in chunks.
  Tensor<T> features(const Tensor<T>& images, std::size_t chunk = 256) const;
  /// Eval-mode outputs of head k.
  Tensor<T> outputs(const Tensor<T>& images, int task_id, std::size_t chunk = 256) const;
  /// argmax of h_0(phi(x)); auxiliary heads are never consulted.
  std::vector<int> predict(const Tensor<T>& images, std::size_t chunk = 256) const;

  std::vector<NamedParam<T>> encoder_parameters();
  std::vector<NamedParam<T>> head_parameters(int task_id);
  std::vector<NamedParam<T>> parameters();
  /// Non-trainable state (batch-norm running moments).
  std::vector<NamedParam<T>> buffers();

  std::size_t parameter_count() const;
  void zero_grad();

  /// Checks image extents against the encoder configuration.
  void check_images(const Tensor<T>& images) const;

 private:
  Var encode_impl(Tape<T>& tape, Var images, Mode mode, bool writable) const;
  Var head_impl(Tape<T>& tape, int task_id, Var features) const;
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn, bool include_buffers);

  EncoderConfig encoder_;
  std::vector<StageParams<T>> stages_;
  NormParams<T> final_norm_;
  std::map<int, HeadParams<T>> heads_;
};

/// Builds a model; requires a main head (task id 0) and unique task ids.
/// Feature dimensions outside [64, 512] are reported on stderr.
template <class T>
Model<T> init_model(const EncoderConfig& encoder, const std::vector<HeadConfig>& heads, std::uint64_t seed);

/// Parameter checksum for detecting unintended mutation.
template <class T>
std::uint64_t parameter_checksum(const Model<T>& model);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace uda
