#include "vafuse/model.hpp"

#include "vafuse/config_io.hpp"
#include "vafuse/error.hpp"
#include "vafuse/rng.hpp"

#include <cmath>
#include <fstream>

namespace vafuse::nn {
namespace {

Tensor bias_3d(const Tensor& b) { return reshape(b, {b.size(), 1, 1}); }

std::size_t bottleneck(std::size_t channels, std::size_t reduction) { return std::max<std::size_t>(1, channels / reduction); }

std::uint64_t site_seed(std::uint64_t seed, std::size_t layer, std::size_t site) {
  return mix64(seed ^ mix64(layer * 16 + site + 1));
}

std::string block_of(const std::string& name) { return name.substr(0, name.find('.')); }

const char* kBranchNames[3] = {"visual", "vggish", "mfcc"};

}  // namespace

std::size_t TcnConfig::receptive_field() const {
  std::size_t dilation = 1, total = 0;
  for (std::size_t l = 0; l < levels; ++l) {
    total += dilation;
    dilation *= dilation_base;
  }
  return 1 + (kernel - 1) * total;
}

void ModelConfig::validate() const {
  if (visual_dim < 1 || audio_dim < 1 || mfcc_dim < 1) throw ConfigError("branch dimensions must be positive");
  if (use_lase && visual_input != VisualInput::Frames) {
    throw ConfigError("use_lase needs visual_input = frames (LA-SE acts on the stem's spatial maps)");
  }
  if (visual_input == VisualInput::Frames && stem.channels.empty()) throw ConfigError("stem needs at least one conv");
  for (auto c : stem.channels)
    if (c < 1) throw ConfigError("stem channels must be positive");
  if (lase.reduction < 1) throw ConfigError("lase.reduction must be >= 1");
  if (use_tcn && (tcn.levels < 1 || tcn.kernel < 1 || tcn.channels < 1 || tcn.dilation_base < 1)) {
    throw ConfigError("tcn levels, kernel, channels and dilation_base must be >= 1");
  }
  if (use_transformer) {
    if (transformer.layers < 1 || transformer.heads < 1 || transformer.d_model < 1 || transformer.ff_dim < 1) {
      throw ConfigError("transformer sizes must be >= 1");
    }
    if (transformer.d_model % transformer.heads != 0) {
      throw ConfigError("d_model " + std::to_string(transformer.d_model) + " is not divisible by heads " +
                        std::to_string(transformer.heads));
    }
  }
  if (!(transformer.dropout >= 0.0 && transformer.dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (head.hidden_dim < 1) throw ConfigError("head.hidden_dim must be >= 1");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0,1]");
  if (window_len < 2) throw ConfigError("window_len must be >= 2 (batch norm runs over the window)");
}

std::size_t ModelConfig::fused_dim() const {
  return use_tcn ? 3 * tcn.channels : visual_dim + audio_dim + mfcc_dim;
}

std::size_t ModelConfig::head_input_dim() const { return use_transformer ? transformer.d_model : fused_dim(); }

Tensor lanet(const Tensor& x, const LanetWeights& w, Tensor* attention_map) {
  const Tensor hidden = relu(add(conv2d_1x1(x, w.conv1_w), bias_3d(w.conv1_b)));
  const Tensor map = sigmoid(add(conv2d_1x1(hidden, w.conv2_w), bias_3d(w.conv2_b)));
  if (attention_map) *attention_map = map;
  return x * map;
}

Tensor senet(const Tensor& x, const SenetWeights& w, Tensor* channel_scale) {
  const bool batched = x.rank() == 4;
  const std::size_t channels = x.dim(batched ? 1 : 0);
  const std::size_t n = batched ? x.dim(0) : 1;
  const Tensor z = reshape(global_avg_pool(x), {n, channels});
  const Tensor s = sigmoid(linear(relu(linear(z, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b));
  if (channel_scale) *channel_scale = s;
  return x * (batched ? reshape(s, {n, channels, 1, 1}) : reshape(s, {channels, 1, 1}));
}

Tensor lase(const Tensor& x, const LaseWeights& w) { return senet(lanet(x, w.lanet), w.senet); }

Tensor tcn_stack(const Tensor& x, const std::vector<TcnBlockWeights>& blocks) {
  Tensor h = x;
  for (const auto& b : blocks) {
    const Tensor conv = relu(add(conv1d(h, b.conv_w, b.dilation), reshape(b.conv_b, {b.conv_b.size(), 1})));
    const Tensor skip = b.proj_w.defined()
                            ? add(matmul(b.proj_w, h), reshape(b.proj_b, {b.proj_b.size(), 1}))
                            : h;
    h = conv + skip;
  }
  return h;
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<double> pe(length * d_model);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(t) * freq;
      pe[t * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, d_model}, std::move(pe));
}

Tensor transformer_encoder(const Tensor& x, const TransformerWeights& w, Mode mode, std::uint64_t seed,
                           std::vector<Tensor>* attention) {
  if (x.rank() != 2) throw DimensionError("transformer_encoder expects [T, d_model], got " + to_string(x.shape()));
  const std::size_t t_len = x.dim(0), d_model = x.dim(1);
  if (d_model % w.heads != 0) throw ConfigError("d_model not divisible by heads");
  const std::size_t dk = d_model / w.heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor h = x + positional_encoding(t_len, d_model);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const Tensor xn = layer_norm(h, L.ln1_g, L.ln1_b);
    const Tensor q = linear(xn, L.q_w, L.q_b);
    const Tensor k = linear(xn, L.k_w, L.k_b);
    const Tensor v = linear(xn, L.v_w, L.v_b);
    std::vector<Tensor> heads;
    for (std::size_t hd = 0; hd < w.heads; ++hd) {
      const Tensor qh = slice_lastdim(q, hd * dk, dk);
      const Tensor kh = slice_lastdim(k, hd * dk, dk);
      const Tensor vh = slice_lastdim(v, hd * dk, dk);
      const Tensor probs = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));
      if (attention) attention->push_back(probs);
      heads.push_back(matmul(probs, vh));
    }
    const Tensor attn_out = linear(concat_lastdim(heads), L.o_w, L.o_b);
    h = h + dropout(attn_out, w.dropout, mode, site_seed(seed, l, 0));
    const Tensor hn = layer_norm(h, L.ln2_g, L.ln2_b);
    const Tensor ff = linear(relu(linear(hn, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
    h = h + dropout(ff, w.dropout, mode, site_seed(seed, l, 1));
  }
  return h;
}

VaPrediction prediction_head(const Tensor& features, const HeadWeights& w, BatchNormState& bn, Mode mode) {
  const Tensor hidden = batch_norm_1d(linear(features, w.fc1_w, w.fc1_b), w.bn_g, w.bn_b, bn, mode);
  const Tensor out = tanh(linear(hidden, w.fc2_w, w.fc2_b));
  const std::size_t t_len = out.dim(0);
  return {reshape(slice_lastdim(out, 0, 1), {t_len}), reshape(slice_lastdim(out, 1, 1), {t_len})};
}

// ---------------------------------------------------------------------------

Tensor& Model::add_param(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  for (const auto& p : params_)
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  params_.push_back({name, xavier_uniform(name, config_.seed, std::move(shape), fan_in, fan_out)});
  return params_.back().tensor;
}

Tensor& Model::add_constant_param(const std::string& name, Shape shape, double value) {
  for (const auto& p : params_)
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  params_.push_back({name, Tensor::full(std::move(shape), value, true)});
  return params_.back().tensor;
}

std::vector<TcnBlockWeights> Model::build_tcn(const std::string& prefix, std::size_t in_dim) {
  std::vector<TcnBlockWeights> blocks;
  const auto& cfg = config_.tcn;
  std::size_t dilation = 1, in = in_dim;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::string p = prefix + "." + std::to_string(l);
    TcnBlockWeights b;
    b.dilation = dilation;
    b.conv_w = add_param(p + ".conv.weight", {cfg.channels, in, cfg.kernel}, in * cfg.kernel, cfg.channels * cfg.kernel);
    b.conv_b = add_constant_param(p + ".conv.bias", {cfg.channels}, 0.0);
    if (in != cfg.channels) {
      b.proj_w = add_param(p + ".proj.weight", {cfg.channels, in}, in, cfg.channels);
      b.proj_b = add_constant_param(p + ".proj.bias", {cfg.channels}, 0.0);
    }
    blocks.push_back(std::move(b));
    in = cfg.channels;
    dilation *= cfg.dilation_base;
  }
  return blocks;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  params_.reserve(256);

  if (config_.visual_input == VisualInput::Frames) {
    std::size_t in = data::kFrameChannels, side = data::kFrameSide;
    for (std::size_t i = 0; i < config_.stem.channels.size(); ++i) {
      const std::size_t out = config_.stem.channels[i];
      const std::string p = "stem.conv" + std::to_string(i);
      stem_w_.push_back(add_param(p + ".weight", {out, in, 3, 3}, in * 9, out * 9));
      stem_b_.push_back(add_constant_param(p + ".bias", {out}, 0.0));
      in = out;
      side = (side + 2 - 3) / 2 + 1;
    }
    if (config_.use_lase) {
      const std::size_t mid = bottleneck(in, config_.lase.reduction);
      lase_.lanet.conv1_w = add_param("lase.lanet.conv1.weight", {mid, in}, in, mid);
      lase_.lanet.conv1_b = add_constant_param("lase.lanet.conv1.bias", {mid}, 0.0);
      lase_.lanet.conv2_w = add_param("lase.lanet.conv2.weight", {1, mid}, mid, 1);
      lase_.lanet.conv2_b = add_constant_param("lase.lanet.conv2.bias", {1}, 0.0);
      lase_.senet.fc1_w = add_param("lase.senet.fc1.weight", {mid, in}, in, mid);
      lase_.senet.fc1_b = add_constant_param("lase.senet.fc1.bias", {mid}, 0.0);
      lase_.senet.fc2_w = add_param("lase.senet.fc2.weight", {in, mid}, mid, in);
      lase_.senet.fc2_b = add_constant_param("lase.senet.fc2.bias", {in}, 0.0);
    }
    const std::size_t flat = in * side * side;
    stem_proj_w_ = add_param("stem.proj.weight", {config_.visual_dim, flat}, flat, config_.visual_dim);
    stem_proj_b_ = add_constant_param("stem.proj.bias", {config_.visual_dim}, 0.0);
  }

  if (config_.use_tcn) {
    const std::size_t dims[3] = {config_.visual_dim, config_.audio_dim, config_.mfcc_dim};
    for (std::size_t b = 0; b < 3; ++b) tcn_[b] = build_tcn(std::string("tcn.") + kBranchNames[b], dims[b]);
  }

  if (config_.use_transformer) {
    const auto& tc = config_.transformer;
    const std::size_t fused = config_.fused_dim(), d = tc.d_model;
    input_proj_w_ = add_param("transformer.input_proj.weight", {d, fused}, fused, d);
    input_proj_b_ = add_constant_param("transformer.input_proj.bias", {d}, 0.0);
    transformer_.heads = tc.heads;
    transformer_.dropout = tc.dropout;
    for (std::size_t l = 0; l < tc.layers; ++l) {
      const std::string p = "transformer." + std::to_string(l);
      EncoderLayerWeights L;
      L.ln1_g = add_constant_param(p + ".ln1.gamma", {d}, 1.0);
      L.ln1_b = add_constant_param(p + ".ln1.beta", {d}, 0.0);
      L.q_w = add_param(p + ".attn.q.weight", {d, d}, d, d);
      L.q_b = add_constant_param(p + ".attn.q.bias", {d}, 0.0);
      L.k_w = add_param(p + ".attn.k.weight", {d, d}, d, d);
      L.k_b = add_constant_param(p + ".attn.k.bias", {d}, 0.0);
      L.v_w = add_param(p + ".attn.v.weight", {d, d}, d, d);
      L.v_b = add_constant_param(p + ".attn.v.bias", {d}, 0.0);
      L.o_w = add_param(p + ".attn.out.weight", {d, d}, d, d);
      L.o_b = add_constant_param(p + ".attn.out.bias", {d}, 0.0);
      L.ln2_g = add_constant_param(p + ".ln2.gamma", {d}, 1.0);
      L.ln2_b = add_constant_param(p + ".ln2.beta", {d}, 0.0);
      L.ff1_w = add_param(p + ".ff1.weight", {tc.ff_dim, d}, d, tc.ff_dim);
      L.ff1_b = add_constant_param(p + ".ff1.bias", {tc.ff_dim}, 0.0);
      L.ff2_w = add_param(p + ".ff2.weight", {d, tc.ff_dim}, tc.ff_dim, d);
      L.ff2_b = add_constant_param(p + ".ff2.bias", {d}, 0.0);
      transformer_.layers.push_back(std::move(L));
    }
  }

  const std::size_t in = config_.head_input_dim(), hidden = config_.head.hidden_dim;
  head_.fc1_w = add_param("head.fc1.weight", {hidden, in}, in, hidden);
  head_.fc1_b = add_constant_param("head.fc1.bias", {hidden}, 0.0);
  head_.bn_g = add_constant_param("head.bn.gamma", {hidden}, 1.0);
  head_.bn_b = add_constant_param("head.bn.beta", {hidden}, 0.0);
  head_.fc2_w = add_param("head.fc2.weight", {2, hidden}, hidden, 2);
  head_.fc2_b = add_constant_param("head.fc2.bias", {2}, 0.0);
  head_bn_ = BatchNormState(hidden, config_.bn_momentum);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::map<std::string, std::size_t> Model::parameter_breakdown() const {
  std::map<std::string, std::size_t> out;
  for (const auto& p : params_) out[block_of(p.name)] += p.tensor.size();
  return out;
}

Tensor Model::visual_stem(const Tensor& frames) const {
  if (config_.visual_input != VisualInput::Frames) throw ContractError("model has no visual stem (features input)");
  const Shape expected{data::kFrameChannels, data::kFrameSide, data::kFrameSide};
  if (frames.rank() != 4 || Shape(frames.shape().begin() + 1, frames.shape().end()) != expected) {
    throw DimensionError("visual stem expects [T,3,48,48], got " + to_string(frames.shape()));
  }
  Tensor h = frames;
  for (std::size_t i = 0; i < stem_w_.size(); ++i) {
    const auto c = stem_b_[i].size();
    h = relu(add(conv2d(h, stem_w_[i], 2, 1), reshape(stem_b_[i], {c, 1, 1})));
  }
  if (config_.use_lase) h = lase(h, lase_);
  const std::size_t t_len = h.dim(0);
  return linear(reshape(h, {t_len, h.size() / t_len}), stem_proj_w_, stem_proj_b_);
}

std::array<Tensor, 3> Model::encode_branches(const std::array<Tensor, 3>& branches) const {
  std::array<Tensor, 3> out;
  out[0] = config_.visual_input == VisualInput::Frames ? visual_stem(branches[0]) : branches[0];
  out[1] = branches[1];
  out[2] = branches[2];
  const std::size_t dims[3] = {config_.visual_dim, config_.audio_dim, config_.mfcc_dim};
  const std::size_t t_len = out[0].dim(0);
  for (std::size_t b = 0; b < 3; ++b) {
    if (out[b].rank() != 2 || out[b].dim(1) != dims[b]) {
      throw DimensionError(std::string(kBranchNames[b]) + " branch expects [T," + std::to_string(dims[b]) + "], got " +
                           to_string(out[b].shape()));
    }
    if (out[b].dim(0) != t_len) {
      throw ContractError("branch lengths disagree (" + std::to_string(out[b].dim(0)) + " vs " +
                          std::to_string(t_len) + "): alignment bug upstream");
    }
  }
  if (config_.use_tcn) {
    for (std::size_t b = 0; b < 3; ++b) out[b] = transpose(tcn_stack(transpose(out[b]), tcn_[b]));
  }
  return out;
}

VaPrediction Model::fusion_forward(const std::array<Tensor, 3>& encoded, Mode mode, std::uint64_t seed) {
  for (const auto& e : encoded) {
    if (e.dim(0) != encoded[0].dim(0)) throw ContractError("fusion_forward: branch lengths disagree");
  }
  Tensor fused = concat_lastdim(encoded);
  if (config_.use_transformer) {
    fused = transformer_encoder(linear(fused, input_proj_w_, input_proj_b_), transformer_, mode, seed);
  }
  return prediction_head(fused, head_, head_bn_, mode);
}

VaPrediction Model::forward(const std::array<Tensor, 3>& branches, Mode mode, std::uint64_t seed) {
  return fusion_forward(encode_branches(branches), mode, seed);
}

VaPrediction Model::forward(const data::TrialWindow& window, Mode mode, std::uint64_t seed) {
  return forward(window.branches, mode, seed);
}

std::vector<NamedArray> Model::state() const {
  std::vector<NamedArray> out;
  out.reserve(params_.size() + 2);
  for (const auto& p : params_) out.push_back(to_named(p.name, p.tensor));
  out.push_back({"head.bn.running_mean", {head_bn_.running_mean.size()}, head_bn_.running_mean});
  out.push_back({"head.bn.running_var", {head_bn_.running_var.size()}, head_bn_.running_var});
  return out;
}

void Model::load_state(const std::vector<NamedArray>& state) {
  if (state.size() != params_.size() + 2) {
    throw IncompatibleCheckpointError("checkpoint holds " + std::to_string(state.size()) + " tensors, model expects " +
                                      std::to_string(params_.size() + 2));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (state[i].name != p.name || state[i].shape != p.tensor.shape()) {
      throw IncompatibleCheckpointError("checkpoint entry '" + state[i].name + "' " + to_string(state[i].shape) +
                                        " does not match parameter '" + p.name + "' " + to_string(p.tensor.shape()));
    }
  }
  const auto& rm = state[params_.size()];
  const auto& rv = state[params_.size() + 1];
  if (rm.name != "head.bn.running_mean" || rv.name != "head.bn.running_var" ||
      rm.values.size() != head_bn_.running_mean.size() || rv.values.size() != head_bn_.running_var.size()) {
    throw IncompatibleCheckpointError("checkpoint batch-norm statistics do not match the model");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    std::copy(state[i].values.begin(), state[i].values.end(), dst.begin());
    params_[i].tensor.zero_grad();
  }
  head_bn_.running_mean = rm.values;
  head_bn_.running_var = rv.values;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void Model::save(const std::filesystem::path& path) const {
  write_container(path, state());
  std::ofstream os(config_sidecar(path));
  if (!os) throw DataError("cannot write " + config_sidecar(path).string());
  os << to_json(config_).dump(2) << '\n';
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream is(config_sidecar(path));
  if (!is) throw IncompatibleCheckpointError("checkpoint config " + config_sidecar(path).string() + " is missing");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(config_sidecar(path).string() + ": " + e.what());
  }
  Model model(model_config_from_json(doc));
  model.load_state(read_container(path));
  return model;
}

}  // namespace vafuse::nn
