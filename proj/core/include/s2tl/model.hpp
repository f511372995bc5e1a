#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s2tl/attention.hpp"
#include "s2tl/rng.hpp"
#include "s2tl/tensor.hpp"

namespace s2tl {

/// Architecture of the speech-to-text model: a windowed-attention encoder
/// over spectrogram frames, an optional strided convolution after it, and a
/// pre-norm Transformer decoder. Defaults follow the 12/6-layer, 4-head,
/// 256/2048-dimensional configuration.
struct ModelConfig {
  int encoder_layers = 12;
  int decoder_layers = 6;
  int heads = 4;
  int embed_dim = 256;
  int ffn_dim = 2048;
  float dropout = 0.1f;
  PatternKind encoder_pattern = PatternKind::sliding;
  WindowConfig window{48, 1};
  bool post_encoder_conv = false;
  bool encoder_pre_norm = false;
  int vocab_size = 0;
  int mel_bins = 80;

  AttentionPattern encoder_attention() const { return {encoder_pattern, window}; }
  /// vocab_size 0 is accepted when `allow_unset_vocab` (filled from the
  /// vocabulary at training time).
  void validate(bool allow_unset_vocab = false) const;

  /// key=value lines, stable order.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  std::map<std::string, std::string> to_map() const;
  /// Applies the keys present in `kv` on top of `base`.
  static ModelConfig from_map(const std::map<std::string, std::string>& kv, ModelConfig base);
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kConvKernel = 5;
inline constexpr std::size_t kConvStride = 2;
inline constexpr std::size_t kConvPadding = 2;

/// Output length of the post-encoder convolution: ceil(n/2).
std::size_t conv_out_len(std::size_t n);

/// PE[2i] = sin(pos / 10000^(2i/dim)), PE[2i+1] = cos(pos / 10000^(2i/dim)).
Tensor sinusoidal_pe(std::size_t pos, std::size_t dim);
/// Rows offset..offset+n-1 of the sinusoidal table, shape [n, dim].
Tensor sinusoidal_table(std::size_t n, std::size_t dim, std::size_t offset = 0);

/// Exact parameter count implied by a configuration.
std::size_t count_parameters(const ModelConfig& cfg);

struct EncoderOutput {
  Tensor states;  // [n_out, embed_dim]
  std::size_t n_out = 0;
};

/// Cross-attention keys and values for every decoder layer, computed once
/// per encoder output and reused across decoding steps.
struct CrossCache {
  std::vector<Tensor> keys;    // per layer [h, n_enc, dk]
  std::vector<Tensor> values;  // per layer [h, n_enc, dk]
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  /// nullptr when absent.
  const Tensor* find(const std::string& name) const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  Rng& rng() { return rng_; }

  /// frames [n, mel_bins] -> encoder states, reduced by the convolution when
  /// configured.
  EncoderOutput encode(const Tensor& frames);
  /// Strided time convolution (kernel 5, stride 2, padding 2).
  Tensor conv_reduce(const Tensor& states);

  CrossCache prepare_cross(const EncoderOutput& enc);
  /// Logits [T, vocab] for every position of `prefix` (which starts with BOS).
  Tensor decode(std::span<const int> prefix, const EncoderOutput& enc);
  Tensor decode(std::span<const int> prefix, const CrossCache& cross);
  /// Next-token logits [vocab] after `prefix`.
  Tensor decode_step(std::span<const int> prefix, const EncoderOutput& enc);
  Tensor decode_step(std::span<const int> prefix, const CrossCache& cross);

  /// Banded self-attention weights of encoder layer `layer` (windowed only).
  BandedWeights encoder_attention_weights(const Tensor& frames, std::size_t layer);
  /// Dense encoder self-attention weights [h, n, n] of layer `layer`.
  Tensor encoder_dense_attention_weights(const Tensor& frames, std::size_t layer);
  /// Causal self-attention weights [h, T, T] of decoder layer `layer`.
  Tensor decoder_attention_weights(std::span<const int> prefix, const EncoderOutput& enc,
                                   std::size_t layer);

 private:
  struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
  };
  struct Norm {
    Tensor gain, bias;
  };
  struct AttentionBlock {
    Linear q, k, v, out;
  };
  struct FeedForward {
    Linear fc1, fc2;
  };
  struct EncoderLayer {
    AttentionBlock self_attn;
    Norm self_attn_norm;
    FeedForward ffn;
    Norm ffn_norm;
  };
  struct DecoderLayer {
    AttentionBlock self_attn;
    Norm self_attn_norm;
    AttentionBlock cross_attn;
    Norm cross_attn_norm;
    FeedForward ffn;
    Norm ffn_norm;
  };

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out);
  Norm make_norm(const std::string& name, std::size_t dim);
  AttentionBlock make_attention(const std::string& name);
  FeedForward make_ffn(const std::string& name);
  Tensor register_param(const std::string& name, Tensor t);

  Tensor apply(const Linear& lin, const Tensor& x) const;
  Tensor apply(const Norm& norm, const Tensor& x) const;
  Tensor split_heads(const Tensor& x) const;
  Tensor merge_heads(const Tensor& x) const;
  Tensor feed_forward(const FeedForward& ffn, const Tensor& x);
  Tensor drop(const Tensor& x);
  AttentionDropout attention_dropout();

  Tensor embed_frames(const Tensor& frames);
  Tensor encoder_layer(const EncoderLayer& layer, const Tensor& x);
  Tensor decoder_input(std::span<const int> prefix);
  Tensor decoder_layer(const DecoderLayer& layer, const Tensor& x, const Tensor& cross_k,
                       const Tensor& cross_v);

  ModelConfig cfg_;
  Rng rng_;
  bool training_ = false;
  std::vector<NamedParameter> params_;

  Linear input_proj_;
  std::vector<EncoderLayer> enc_layers_;
  Norm enc_final_norm_;
  Tensor conv_weight_, conv_bias_;
  Tensor token_embedding_;
  std::vector<DecoderLayer> dec_layers_;
  Norm dec_final_norm_;
  Tensor output_proj_;  // [embed_dim, vocab]
};

}  // namespace s2tl
