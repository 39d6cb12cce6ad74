#pragma once

#include "vafuse/container.hpp"
#include "vafuse/datapipe.hpp"
#include "vafuse/ops.hpp"
#include "vafuse/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vafuse::nn {

struct StemConfig {
  std::vector<std::size_t> channels{16, 32, 64};  // 3x3 stride-2 conv per entry
};

struct LaseConfig {
  std::size_t reduction = 4;  // bottleneck width = max(1, C / reduction) in both attention branches
};

struct TcnConfig {
  std::size_t levels = 4;
  std::size_t kernel = 3;
  std::size_t channels = 64;
  std::size_t dilation_base = 2;

  /// 1 + (kernel - 1) * sum of dilations.
  std::size_t receptive_field() const;
};

struct TransformerConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t ff_dim = 256;
  double dropout = 0.4;
};

struct HeadConfig {
  std::size_t hidden_dim = 64;
};

/// Whether the visual branch receives raw 3x48x48 frames (run through the
/// convolutional stem) or precomputed 512-d embeddings.
enum class VisualInput { Frames, Features };

struct ModelConfig {
  bool use_lase = true;
  bool use_tcn = true;
  bool use_transformer = true;
  std::size_t visual_dim = 512;
  std::size_t audio_dim = 128;
  std::size_t mfcc_dim = 39;
  VisualInput visual_input = VisualInput::Frames;
  StemConfig stem;
  LaseConfig lase;
  TcnConfig tcn;
  TransformerConfig transformer;
  HeadConfig head;
  double bn_momentum = 0.1;
  std::size_t window_len = 300;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t fused_dim() const;
  std::size_t head_input_dim() const;
};

// -- Block weights. Each holds handles to the owning model's parameters. ----

struct LanetWeights {
  Tensor conv1_w, conv1_b;  // [mid, C], [mid]
  Tensor conv2_w, conv2_b;  // [1, mid], [1]
};

struct SenetWeights {
  Tensor fc1_w, fc1_b;  // [mid, C], [mid]
  Tensor fc2_w, fc2_b;  // [C, mid], [C]
};

struct LaseWeights {
  LanetWeights lanet;
  SenetWeights senet;
};

struct TcnBlockWeights {
  Tensor conv_w, conv_b;  // [out, in, K], [out]
  Tensor proj_w, proj_b;  // [out, in], [out]; undefined when in == out
  std::size_t dilation = 1;
};

struct EncoderLayerWeights {
  Tensor ln1_g, ln1_b;
  Tensor q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Tensor ln2_g, ln2_b;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct TransformerWeights {
  std::vector<EncoderLayerWeights> layers;
  std::size_t heads = 1;
  double dropout = 0.0;
};

struct HeadWeights {
  Tensor fc1_w, fc1_b;
  Tensor bn_g, bn_b;
  Tensor fc2_w, fc2_b;  // [2, hidden]: valence, arousal
};

/// Spatial attention: x * sigmoid(conv2(relu(conv1(x)))), the single-channel
/// map broadcast over channels. x is [C,H,W] or [N,C,H,W].
Tensor lanet(const Tensor& x, const LanetWeights& w, Tensor* attention_map = nullptr);

/// Squeeze (spatial mean), excitation sigmoid(fc2(relu(fc1(z)))), and
/// per-channel rescale of x.
Tensor senet(const Tensor& x, const SenetWeights& w, Tensor* channel_scale = nullptr);

/// senet(lanet(x)).
Tensor lase(const Tensor& x, const LaseWeights& w);

/// Stack of causal dilated conv1d -> ReLU -> residual blocks over x[D,T].
Tensor tcn_stack(const Tensor& x, const std::vector<TcnBlockWeights>& blocks);

Tensor positional_encoding(std::size_t length, std::size_t d_model);

/// Pre-norm encoder over x[T, d_model] with sinusoidal positions added first.
/// `attention`, when given, receives each layer's per-head attention matrices.
Tensor transformer_encoder(const Tensor& x, const TransformerWeights& w, Mode mode, std::uint64_t seed,
                           std::vector<Tensor>* attention = nullptr);

struct VaPrediction {
  Tensor valence;  // [T]
  Tensor arousal;  // [T]
};

/// FC -> BN -> FC -> tanh over features[T, F].
VaPrediction prediction_head(const Tensor& features, const HeadWeights& w, BatchNormState& bn, Mode mode);

class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  /// Scalar count per top-level block ("stem", "lase", "tcn", "transformer", "head").
  std::map<std::string, std::size_t> parameter_breakdown() const;

  /// Visual branch embedding [T, visual_dim] from raw frames [T,3,48,48].
  Tensor visual_stem(const Tensor& frames) const;
  /// Per-branch encodings just before concatenation.
  std::array<Tensor, 3> encode_branches(const std::array<Tensor, 3>& branches) const;
  /// Concatenation, optional transformer, and prediction head.
  VaPrediction fusion_forward(const std::array<Tensor, 3>& encoded, Mode mode, std::uint64_t seed);
  VaPrediction forward(const std::array<Tensor, 3>& branches, Mode mode, std::uint64_t seed);
  VaPrediction forward(const data::TrialWindow& window, Mode mode, std::uint64_t seed);

  /// Parameters and batch-norm running moments.
  std::vector<NamedArray> state() const;
  /// Throws IncompatibleCheckpointError on any name or shape disagreement.
  void load_state(const std::vector<NamedArray>& state);

  /// Writes the tensor container and `<path>.json` holding the config.
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  BatchNormState& head_bn() { return head_bn_; }

 private:
  Tensor& add_param(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Tensor& add_constant_param(const std::string& name, Shape shape, double value);
  std::vector<TcnBlockWeights> build_tcn(const std::string& prefix, std::size_t in_dim);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<Tensor> stem_w_, stem_b_;
  Tensor stem_proj_w_, stem_proj_b_;
  LaseWeights lase_;
  std::array<std::vector<TcnBlockWeights>, 3> tcn_;
  Tensor input_proj_w_, input_proj_b_;
  TransformerWeights transformer_;
  HeadWeights head_;
  BatchNormState head_bn_;
};

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

}  // namespace vafuse::nn
