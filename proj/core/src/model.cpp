#include "s2tl/model.hpp"

#include <cmath>
#include <sstream>

#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"

namespace s2tl {

namespace {

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("model config: '" + key + "' expects an integer, got '" + value + "'");
  }
}

float parse_float(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const float v = std::stof(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("model config: '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("model config: '" + key + "' expects true/false, got '" + value + "'");
}

std::string float_text(float v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

void ModelConfig::validate(bool allow_unset_vocab) const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(encoder_layers, "encoder_layers");
  positive(decoder_layers, "decoder_layers");
  positive(heads, "heads");
  positive(embed_dim, "embed_dim");
  positive(ffn_dim, "ffn_dim");
  if (!(allow_unset_vocab && vocab_size == 0)) positive(vocab_size, "vocab_size");
  positive(mel_bins, "mel_bins");
  if (embed_dim % heads != 0) {
    throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("model config: dropout outside [0,1)");
  encoder_attention().validate();
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"encoder_layers", std::to_string(encoder_layers)},
      {"decoder_layers", std::to_string(decoder_layers)},
      {"heads", std::to_string(heads)},
      {"embed_dim", std::to_string(embed_dim)},
      {"ffn_dim", std::to_string(ffn_dim)},
      {"dropout", float_text(dropout)},
      {"encoder_pattern", to_string(encoder_pattern)},
      {"window_size", std::to_string(window.window_size)},
      {"dilation", std::to_string(window.dilation)},
      {"post_encoder_conv", post_encoder_conv ? "true" : "false"},
      {"encoder_pre_norm", encoder_pre_norm ? "true" : "false"},
      {"vocab_size", std::to_string(vocab_size)},
      {"mel_bins", std::to_string(mel_bins)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv,
                                  ModelConfig cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "encoder_layers") cfg.encoder_layers = parse_int(key, value);
    else if (key == "decoder_layers") cfg.decoder_layers = parse_int(key, value);
    else if (key == "heads") cfg.heads = parse_int(key, value);
    else if (key == "embed_dim") cfg.embed_dim = parse_int(key, value);
    else if (key == "ffn_dim") cfg.ffn_dim = parse_int(key, value);
    else if (key == "dropout") cfg.dropout = parse_float(key, value);
    else if (key == "encoder_pattern") cfg.encoder_pattern = parse_pattern_kind(value);
    else if (key == "window_size") cfg.window.window_size = parse_int(key, value);
    else if (key == "dilation") cfg.window.dilation = parse_int(key, value);
    else if (key == "post_encoder_conv") cfg.post_encoder_conv = parse_bool(key, value);
    else if (key == "encoder_pre_norm") cfg.encoder_pre_norm = parse_bool(key, value);
    else if (key == "vocab_size") cfg.vocab_size = parse_int(key, value);
    else if (key == "mel_bins") cfg.mel_bins = parse_int(key, value);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  return cfg;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  return from_map(kv, ModelConfig{});
}

std::string ModelConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return from_map(kv);
}

std::size_t conv_out_len(std::size_t n) {
  return (n + 2 * kConvPadding - kConvKernel) / kConvStride + 1;
}

Tensor sinusoidal_table(std::size_t n, std::size_t dim, std::size_t offset) {
  Tensor out = Tensor::zeros({n, dim});
  auto d = out.mutable_data();
  for (std::size_t p = 0; p < n; ++p) {
    const double pos = static_cast<double>(p + offset);
    for (std::size_t i = 0; 2 * i < dim; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / static_cast<double>(dim));
      d[p * dim + 2 * i] = static_cast<float>(std::sin(angle));
      if (2 * i + 1 < dim) d[p * dim + 2 * i + 1] = static_cast<float>(std::cos(angle));
    }
  }
  return out;
}

Tensor sinusoidal_pe(std::size_t pos, std::size_t dim) {
  return reshape(sinusoidal_table(1, dim, pos), {dim});
}

std::size_t count_parameters(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, f = cfg.ffn_dim, v = cfg.vocab_size, mel = cfg.mel_bins;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norm = 2 * d;
  std::size_t total = mel * d + d;
  total += cfg.encoder_layers * (attn + norm + ffn + norm);
  if (cfg.encoder_pre_norm) total += norm;
  if (cfg.post_encoder_conv) total += d * d * kConvKernel + d;
  total += v * d;
  total += cfg.decoder_layers * (2 * attn + 3 * norm + ffn);
  total += norm;
  total += d * v;
  return total;
}

Tensor Model::register_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

Model::Linear Model::make_linear(const std::string& name, std::size_t in, std::size_t out) {
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(in + out)));
  Tensor w = Tensor::zeros({in, out});
  for (auto& x : w.mutable_data()) x = rng_.uniform(-bound, bound);
  return {register_param(name + ".weight", w), register_param(name + ".bias", Tensor::zeros({out}))};
}

Model::Norm Model::make_norm(const std::string& name, std::size_t dim) {
  return {register_param(name + ".gain", Tensor::full({dim}, 1.0f)),
          register_param(name + ".bias", Tensor::zeros({dim}))};
}

Model::AttentionBlock Model::make_attention(const std::string& name) {
  const std::size_t d = cfg_.embed_dim;
  AttentionBlock a;
  a.q = make_linear(name + ".q_proj", d, d);
  a.k = make_linear(name + ".k_proj", d, d);
  a.v = make_linear(name + ".v_proj", d, d);
  a.out = make_linear(name + ".out_proj", d, d);
  return a;
}

Model::FeedForward Model::make_ffn(const std::string& name) {
  return {make_linear(name + ".fc1", cfg_.embed_dim, cfg_.ffn_dim),
          make_linear(name + ".fc2", cfg_.ffn_dim, cfg_.embed_dim)};
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim;
  input_proj_ = make_linear("encoder.input_proj", cfg_.mel_bins, d);
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l);
    EncoderLayer layer;
    layer.self_attn = make_attention(p + ".self_attn");
    layer.self_attn_norm = make_norm(p + ".self_attn_norm", d);
    layer.ffn = make_ffn(p + ".ffn");
    layer.ffn_norm = make_norm(p + ".ffn_norm", d);
    enc_layers_.push_back(std::move(layer));
  }
  if (cfg_.encoder_pre_norm) enc_final_norm_ = make_norm("encoder.final_norm", d);
  if (cfg_.post_encoder_conv) {
    const std::size_t fan = d * kConvKernel;
    const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(2 * fan)));
    Tensor w = Tensor::zeros({d, d, kConvKernel});
    for (auto& x : w.mutable_data()) x = rng_.uniform(-bound, bound);
    conv_weight_ = register_param("encoder.post_conv.weight", w);
    conv_bias_ = register_param("encoder.post_conv.bias", Tensor::zeros({d}));
  }

  {
    const float bound = static_cast<float>(std::sqrt(3.0 / static_cast<double>(d)));
    Tensor emb = Tensor::zeros({static_cast<std::size_t>(cfg_.vocab_size), d});
    for (auto& x : emb.mutable_data()) x = rng_.uniform(-bound, bound);
    token_embedding_ = register_param("decoder.embed_tokens.weight", emb);
  }
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "decoder.layers." + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = make_attention(p + ".self_attn");
    layer.self_attn_norm = make_norm(p + ".self_attn_norm", d);
    layer.cross_attn = make_attention(p + ".cross_attn");
    layer.cross_attn_norm = make_norm(p + ".cross_attn_norm", d);
    layer.ffn = make_ffn(p + ".ffn");
    layer.ffn_norm = make_norm(p + ".ffn_norm", d);
    dec_layers_.push_back(std::move(layer));
  }
  dec_final_norm_ = make_norm("decoder.final_norm", d);
  {
    const std::size_t v = cfg_.vocab_size;
    const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(d + v)));
    Tensor w = Tensor::zeros({d, v});
    for (auto& x : w.mutable_data()) x = rng_.uniform(-bound, bound);
    output_proj_ = register_param("decoder.output_proj.weight", w);
  }
}

const Tensor* Model::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

Tensor Model::apply(const Linear& lin, const Tensor& x) const {
  return add(matmul(x, lin.weight), lin.bias);
}

Tensor Model::apply(const Norm& norm, const Tensor& x) const {
  return layer_norm(x, norm.gain, norm.bias);
}

Tensor Model::split_heads(const Tensor& x) const {
  const std::size_t n = x.dim(0), h = cfg_.heads, dk = cfg_.embed_dim / cfg_.heads;
  return transpose(reshape(x, {n, h, dk}), 0, 1);
}

Tensor Model::merge_heads(const Tensor& x) const {
  const std::size_t n = x.dim(1);
  return reshape(transpose(x, 0, 1), {n, static_cast<std::size_t>(cfg_.embed_dim)});
}

Tensor Model::drop(const Tensor& x) { return dropout(x, cfg_.dropout, rng_, training_); }

AttentionDropout Model::attention_dropout() { return {cfg_.dropout, &rng_, training_}; }

Tensor Model::feed_forward(const FeedForward& ffn, const Tensor& x) {
  return apply(ffn.fc2, drop(relu(apply(ffn.fc1, x))));
}

Tensor Model::embed_frames(const Tensor& frames) {
  if (frames.rank() != 2 || frames.dim(1) != static_cast<std::size_t>(cfg_.mel_bins)) {
    throw DimensionError("encode: expected frames [n," + std::to_string(cfg_.mel_bins) +
                         "], got " + shape_str(frames.shape()));
  }
  if (frames.dim(0) == 0) throw ContractError("encode: spectrogram has no frames");
  const std::size_t n = frames.dim(0);
  Tensor x = add(apply(input_proj_, frames), sinusoidal_table(n, cfg_.embed_dim));
  return drop(x);
}

Tensor Model::encoder_layer(const EncoderLayer& layer, const Tensor& x) {
  const auto pattern = cfg_.encoder_attention();
  auto attend = [&](const Tensor& in) {
    Tensor q = split_heads(apply(layer.self_attn.q, in));
    Tensor k = split_heads(apply(layer.self_attn.k, in));
    Tensor v = split_heads(apply(layer.self_attn.v, in));
    return apply(layer.self_attn.out,
                 merge_heads(self_attention(q, k, v, pattern, attention_dropout())));
  };
  if (cfg_.encoder_pre_norm) {
    Tensor h = add(x, drop(attend(apply(layer.self_attn_norm, x))));
    return add(h, drop(feed_forward(layer.ffn, apply(layer.ffn_norm, h))));
  }
  Tensor h = apply(layer.self_attn_norm, add(x, drop(attend(x))));
  return apply(layer.ffn_norm, add(h, drop(feed_forward(layer.ffn, h))));
}

Tensor Model::conv_reduce(const Tensor& states) {
  if (!cfg_.post_encoder_conv) throw ContractError("conv_reduce: model has no post-encoder conv");
  if (states.rank() != 2 || states.dim(0) == 0) {
    throw DimensionError("conv_reduce: expected non-empty [n,d] states, got " +
                         shape_str(states.shape()));
  }
  return conv1d(states, conv_weight_, conv_bias_, kConvStride, kConvPadding);
}

EncoderOutput Model::encode(const Tensor& frames) {
  Tensor x = embed_frames(frames);
  for (const auto& layer : enc_layers_) x = encoder_layer(layer, x);
  if (cfg_.encoder_pre_norm) x = apply(enc_final_norm_, x);
  if (cfg_.post_encoder_conv) x = conv_reduce(x);
  EncoderOutput out;
  out.n_out = x.dim(0);
  out.states = std::move(x);
  return out;
}

CrossCache Model::prepare_cross(const EncoderOutput& enc) {
  CrossCache cache;
  for (const auto& layer : dec_layers_) {
    cache.keys.push_back(split_heads(apply(layer.cross_attn.k, enc.states)));
    cache.values.push_back(split_heads(apply(layer.cross_attn.v, enc.states)));
  }
  return cache;
}

Tensor Model::decoder_input(std::span<const int> prefix) {
  if (prefix.empty()) throw ContractError("decode: empty token prefix");
  const std::size_t t = prefix.size();
  const float embed_scale = std::sqrt(static_cast<float>(cfg_.embed_dim));
  Tensor x = add(scale(embedding(token_embedding_, prefix), embed_scale),
                 sinusoidal_table(t, cfg_.embed_dim));
  return drop(x);
}

Tensor Model::decoder_layer(const DecoderLayer& layer, const Tensor& x, const Tensor& cross_k,
                            const Tensor& cross_v) {
  // Pre-norm wiring: norm -> sublayer -> dropout -> residual.
  Tensor h = apply(layer.self_attn_norm, x);
  {
    Tensor q = split_heads(apply(layer.self_attn.q, h));
    Tensor k = split_heads(apply(layer.self_attn.k, h));
    Tensor v = split_heads(apply(layer.self_attn.v, h));
    h = apply(layer.self_attn.out, merge_heads(dense_attention(q, k, v, true, attention_dropout())));
  }
  Tensor y = add(x, drop(h));
  h = apply(layer.cross_attn_norm, y);
  {
    Tensor q = split_heads(apply(layer.cross_attn.q, h));
    h = apply(layer.cross_attn.out, merge_heads(cross_attention(q, cross_k, cross_v,
                                                                attention_dropout())));
  }
  y = add(y, drop(h));
  return add(y, drop(feed_forward(layer.ffn, apply(layer.ffn_norm, y))));
}

Tensor Model::decode(std::span<const int> prefix, const CrossCache& cross) {
  if (cross.keys.size() != dec_layers_.size()) {
    throw ContractError("decode: cross-attention cache does not match decoder depth");
  }
  Tensor x = decoder_input(prefix);
  for (std::size_t l = 0; l < dec_layers_.size(); ++l)
    x = decoder_layer(dec_layers_[l], x, cross.keys[l], cross.values[l]);
  return matmul(apply(dec_final_norm_, x), output_proj_);
}

Tensor Model::decode(std::span<const int> prefix, const EncoderOutput& enc) {
  return decode(prefix, prepare_cross(enc));
}

Tensor Model::decode_step(std::span<const int> prefix, const CrossCache& cross) {
  Tensor logits = decode(prefix, cross);
  return reshape(slice(logits, prefix.size() - 1, prefix.size()),
                 {static_cast<std::size_t>(cfg_.vocab_size)});
}

Tensor Model::decode_step(std::span<const int> prefix, const EncoderOutput& enc) {
  return decode_step(prefix, prepare_cross(enc));
}

BandedWeights Model::encoder_attention_weights(const Tensor& frames, std::size_t layer) {
  if (layer >= enc_layers_.size()) {
    throw ContractError("encoder layer " + std::to_string(layer) + " out of range (0.." +
                        std::to_string(enc_layers_.size() - 1) + ")");
  }
  if (cfg_.encoder_pattern == PatternKind::dense) {
    throw ContractError("encoder uses dense attention; no banded weights");
  }
  NoGradGuard no_grad;
  Tensor x = embed_frames(frames);
  for (std::size_t l = 0; l < layer; ++l) x = encoder_layer(enc_layers_[l], x);
  const auto& blk = enc_layers_[layer];
  Tensor in = cfg_.encoder_pre_norm ? apply(blk.self_attn_norm, x) : x;
  return windowed_attention_weights(split_heads(apply(blk.self_attn.q, in)),
                                    split_heads(apply(blk.self_attn.k, in)), cfg_.window);
}

Tensor Model::encoder_dense_attention_weights(const Tensor& frames, std::size_t layer) {
  if (layer >= enc_layers_.size()) {
    throw ContractError("encoder layer " + std::to_string(layer) + " out of range");
  }
  NoGradGuard no_grad;
  Tensor x = embed_frames(frames);
  for (std::size_t l = 0; l < layer; ++l) x = encoder_layer(enc_layers_[l], x);
  const auto& blk = enc_layers_[layer];
  Tensor in = cfg_.encoder_pre_norm ? apply(blk.self_attn_norm, x) : x;
  return dense_attention_weights(split_heads(apply(blk.self_attn.q, in)),
                                 split_heads(apply(blk.self_attn.k, in)), false);
}

Tensor Model::decoder_attention_weights(std::span<const int> prefix, const EncoderOutput& enc,
                                        std::size_t layer) {
  if (layer >= dec_layers_.size()) {
    throw ContractError("decoder layer " + std::to_string(layer) + " out of range (0.." +
                        std::to_string(dec_layers_.size() - 1) + ")");
  }
  NoGradGuard no_grad;
  CrossCache cross = prepare_cross(enc);
  Tensor x = decoder_input(prefix);
  for (std::size_t l = 0; l < layer; ++l)
    x = decoder_layer(dec_layers_[l], x, cross.keys[l], cross.values[l]);
  const auto& blk = dec_layers_[layer];
  Tensor h = apply(blk.self_attn_norm, x);
  return dense_attention_weights(split_heads(apply(blk.self_attn.q, h)),
                                 split_heads(apply(blk.self_attn.k, h)), true);
}

}  // namespace s2tl
