#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/nn.hpp"

namespace forgeloc {

struct EncoderConfig {
  int64_t d_model = 32;
  int64_t num_layers = 2;
  int64_t num_heads = 4;
  int64_t ffn_dim = 64;
  double dropout = 0.1;

  void validate() const;
};

/// 2D sine/cosine grid [d_model, h, w]. Rows are encoded in the first
/// d_model / 2 channels and columns in the rest; within each half, even
/// channels carry sin and odd channels cos of the same frequency.
/// Coordinates are normalized to (0, 2*pi] and frequencies use base 10000.
template <class T>
struct PositionalEncoding {
  Tensor<T> grid;
  int64_t height = 0, width = 0, d_model = 0;

  /// The grid as a [h*w, d_model] token matrix (row-major positions).
  Tensor<T> tokens() const;
};

template <class T>
PositionalEncoding<T> sine_positional_encoding(int64_t h, int64_t w, int64_t d_model);

/// Attention probabilities recorded during a forward pass, one
/// [B, heads, N, N] tensor per layer.
template <class T>
using AttentionTrace = std::vector<Tensor<T>>;

template <class T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const Initializer& init, const std::string& name,
                     int64_t d_model, int64_t num_heads);

  /// query/key: [B, N, d], value: [B, N, d]. Scaled dot-product attention with
  /// scale 1 / sqrt(d / heads).
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                    AttentionTrace<T>* trace = nullptr) const;

  Linear<T>& value_proj() { return v_; }
  Linear<T>& out_proj() { return o_; }

 private:
  int64_t d_model_ = 0, heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

/// Post-norm transformer encoder layer. The positional encoding is added to
/// queries and keys (not values) at every layer.
template <class T>
class EncoderLayer {
 public:
  EncoderLayer(ParameterStore<T>& store, const Initializer& init, const std::string& name,
               const EncoderConfig& cfg);

  /// src: [B, N, d]; pos: [N, d] (broadcast over the batch).
  Tensor<T> forward(const Tensor<T>& src, const Tensor<T>& pos, const ForwardContext& ctx,
                    AttentionTrace<T>* trace = nullptr) const;

 private:
  T dropout_p_;
  uint64_t drop_attn_, drop_ffn_, drop_out_;
  MultiHeadAttention<T> attn_;
  Linear<T> ffn1_, ffn2_;
  LayerNorm<T> norm1_, norm2_;
};

template <class T>
class TransformerEncoder {
 public:
  TransformerEncoder(ParameterStore<T>& store, const Initializer& init, const std::string& name,
                     const EncoderConfig& cfg);

  /// Token-level entry: src [B, N, d], pos [N, d].
  Tensor<T> forward_tokens(const Tensor<T>& src, const Tensor<T>& pos, const ForwardContext& ctx,
                           AttentionTrace<T>* trace = nullptr) const;

  /// feat: [B, d, h, w] -> [B, d, h, w].
  Tensor<T> forward(const Tensor<T>& feat, const PositionalEncoding<T>& pe,
                    const ForwardContext& ctx, AttentionTrace<T>* trace = nullptr) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<EncoderLayer<T>> layers_;
};

/// 1x1 channel reduction C -> d followed by a transformer encoder, applied to
/// one pyramid level.
template <class T>
class ScaleEncoder {
 public:
  ScaleEncoder(ParameterStore<T>& store, const Initializer& init, const std::string& name,
               int64_t in_channels, const EncoderConfig& cfg);

  Tensor<T> reduce_channels(const Tensor<T>& feat) const { return reduce_(feat); }
  Tensor<T> forward(const Tensor<T>& feat, const ForwardContext& ctx,
                    AttentionTrace<T>* trace = nullptr) const;

  Conv2d<T>& reducer() { return reduce_; }
  const TransformerEncoder<T>& encoder() const { return encoder_; }

 private:
  Conv2d<T> reduce_;
  TransformerEncoder<T> encoder_;
};

/// [B, d, h, w] -> [B, h*w, d] and back.
template <class T> Tensor<T> to_tokens(const Tensor<T>& feat);
template <class T> Tensor<T> from_tokens(const Tensor<T>& tokens, int64_t h, int64_t w);

}  // namespace forgeloc
