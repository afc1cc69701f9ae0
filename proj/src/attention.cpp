#include "forgeloc/attention.hpp"

#include <cmath>
#include <numbers>

namespace forgeloc {

void EncoderConfig::validate() const {
  if (d_model < 1 || num_layers < 1 || num_heads < 1 || ffn_dim < 1) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (d_model % num_heads != 0) {
    throw ConfigError("encoder.d_model (" + std::to_string(d_model) +
                      ") must be divisible by encoder.num_heads (" + std::to_string(num_heads) +
                      ")");
  }
  if (d_model % 4 != 0) throw ConfigError("encoder.d_model must be divisible by 4");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.dropout must lie in [0, 1)");
}

template <class T>
Tensor<T> PositionalEncoding<T>::tokens() const {
  return transpose(reshape(grid, {d_model, height * width}), 0, 1);
}

template <class T>
PositionalEncoding<T> sine_positional_encoding(int64_t h, int64_t w, int64_t d_model) {
  if (d_model % 4 != 0 || d_model <= 0) {
    throw ConfigError("positional encoding needs d_model divisible by 4, got " +
                      std::to_string(d_model));
  }
  if (h < 1 || w < 1) throw DimensionError("positional encoding grid must be non-empty");
  const int64_t half = d_model / 2;
  std::vector<double> inv_freq(static_cast<size_t>(half));
  for (int64_t i = 0; i < half; ++i) {
    inv_freq[i] = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
  }
  std::vector<T> grid(static_cast<size_t>(d_model * h * w));
  const double two_pi = 2.0 * std::numbers::pi;
  for (int64_t r = 0; r < h; ++r) {
    const double y = static_cast<double>(r + 1) / static_cast<double>(h) * two_pi;
    for (int64_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c + 1) / static_cast<double>(w) * two_pi;
      for (int64_t i = 0; i < half; ++i) {
        const double ay = y * inv_freq[i], ax = x * inv_freq[i];
        grid[(i * h + r) * w + c] = static_cast<T>(i % 2 == 0 ? std::sin(ay) : std::cos(ay));
        grid[((half + i) * h + r) * w + c] = static_cast<T>(i % 2 == 0 ? std::sin(ax) : std::cos(ax));
      }
    }
  }
  PositionalEncoding<T> pe;
  pe.grid = Tensor<T>({d_model, h, w}, std::move(grid));
  pe.height = h;
  pe.width = w;
  pe.d_model = d_model;
  return pe;
}

template <class T>
Tensor<T> to_tokens(const Tensor<T>& feat) {
  const int64_t b = feat.dim(0), d = feat.dim(1), n = feat.dim(2) * feat.dim(3);
  return transpose(reshape(feat, {b, d, n}), 1, 2);
}

template <class T>
Tensor<T> from_tokens(const Tensor<T>& tokens, int64_t h, int64_t w) {
  const int64_t b = tokens.dim(0), d = tokens.dim(2);
  if (tokens.dim(1) != h * w) {
    throw DimensionError("from_tokens: " + shape_str(tokens.shape()) + " has no " +
                         std::to_string(h) + "x" + std::to_string(w) + " layout");
  }
  return reshape(transpose(tokens, 1, 2), {b, d, h, w});
}

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const Initializer& init,
                                          const std::string& name, int64_t d_model,
                                          int64_t num_heads)
    : d_model_(d_model),
      heads_(num_heads),
      q_(store, init, name + ".q_proj", d_model, d_model),
      k_(store, init, name + ".k_proj", d_model, d_model),
      v_(store, init, name + ".v_proj", d_model, d_model),
      o_(store, init, name + ".out_proj", d_model, d_model) {
  if (d_model % num_heads != 0) throw ConfigError("d_model must be divisible by num_heads");
}

template <class T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& query, const Tensor<T>& key,
                                         const Tensor<T>& value, AttentionTrace<T>* trace) const {
  if (query.ndim() != 3 || query.dim(2) != d_model_ || key.shape() != query.shape() ||
      value.shape() != query.shape()) {
    throw DimensionError("attention expects matching [B,N," + std::to_string(d_model_) +
                         "] inputs, got " + shape_str(query.shape()));
  }
  const int64_t b = query.dim(0), n = query.dim(1), dh = d_model_ / heads_;
  auto split = [&](const Tensor<T>& t) {
    return permute(reshape(t, {b, n, heads_, dh}), {0, 2, 1, 3});  // [B, H, N, dh]
  };
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> q = split(mul_scalar(q_(query), scale));
  Tensor<T> k = split(k_(key));
  Tensor<T> v = split(v_(value));
  Tensor<T> weights = softmax(matmul(q, transpose(k, 2, 3)), -1);  // [B, H, N, N]
  if (trace) trace->push_back(weights.detach());
  Tensor<T> ctx = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {b, n, d_model_});
  return o_(ctx);
}

template <class T>
EncoderLayer<T>::EncoderLayer(ParameterStore<T>& store, const Initializer& init,
                              const std::string& name, const EncoderConfig& cfg)
    : dropout_p_(static_cast<T>(cfg.dropout)),
      drop_attn_(site_id(name + ".dropout_attn")),
      drop_ffn_(site_id(name + ".dropout_ffn")),
      drop_out_(site_id(name + ".dropout_out")),
      attn_(store, init, name + ".self_attn", cfg.d_model, cfg.num_heads),
      ffn1_(store, init, name + ".ffn1", cfg.d_model, cfg.ffn_dim),
      ffn2_(store, init, name + ".ffn2", cfg.ffn_dim, cfg.d_model),
      norm1_(store, name + ".norm1", cfg.d_model),
      norm2_(store, name + ".norm2", cfg.d_model) {}

template <class T>
Tensor<T> EncoderLayer<T>::forward(const Tensor<T>& src, const Tensor<T>& pos,
                                   const ForwardContext& ctx, AttentionTrace<T>* trace) const {
  auto drop = [&](const Tensor<T>& x, uint64_t site) {
    return dropout(x, dropout_p_, ctx.training, DropoutKey{ctx.seed, site, ctx.step});
  };
  Tensor<T> qk = add(src, pos);
  Tensor<T> h = norm1_(add(src, drop(attn_.forward(qk, qk, src, trace), drop_attn_)));
  Tensor<T> f = ffn2_(drop(relu(ffn1_(h)), drop_ffn_));
  return norm2_(add(h, drop(f, drop_out_)));
}

template <class T>
TransformerEncoder<T>::TransformerEncoder(ParameterStore<T>& store, const Initializer& init,
                                          const std::string& name, const EncoderConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  for (int64_t i = 0; i < cfg.num_layers; ++i)
    layers_.emplace_back(store, init, name + ".layer" + std::to_string(i), cfg);
}

template <class T>
Tensor<T> TransformerEncoder<T>::forward_tokens(const Tensor<T>& src, const Tensor<T>& pos,
                                                const ForwardContext& ctx,
                                                AttentionTrace<T>* trace) const {
  Tensor<T> h = src;
  for (const auto& layer : layers_) h = layer.forward(h, pos, ctx, trace);
  return h;
}

template <class T>
Tensor<T> TransformerEncoder<T>::forward(const Tensor<T>& feat, const PositionalEncoding<T>& pe,
                                         const ForwardContext& ctx,
                                         AttentionTrace<T>* trace) const {
  if (feat.ndim() != 4 || feat.dim(1) != cfg_.d_model || feat.dim(2) != pe.height ||
      feat.dim(3) != pe.width) {
    throw DimensionError("encoder input " + shape_str(feat.shape()) +
                         " does not match d_model/positional grid");
  }
  Tensor<T> out = forward_tokens(to_tokens(feat), pe.tokens(), ctx, trace);
  return from_tokens(out, feat.dim(2), feat.dim(3));
}

template <class T>
ScaleEncoder<T>::ScaleEncoder(ParameterStore<T>& store, const Initializer& init,
                              const std::string& name, int64_t in_channels,
                              const EncoderConfig& cfg)
    : reduce_(store, init, name + ".reduce", in_channels, cfg.d_model, 1, 1, 0, true),
      encoder_(store, init, name + ".encoder", cfg) {}

template <class T>
Tensor<T> ScaleEncoder<T>::forward(const Tensor<T>& feat, const ForwardContext& ctx,
                                   AttentionTrace<T>* trace) const {
  Tensor<T> reduced = reduce_(feat);
  auto pe = sine_positional_encoding<T>(feat.dim(2), feat.dim(3), encoder_.config().d_model);
  return encoder_.forward(reduced, pe, ctx, trace);
}

#define FORGELOC_INSTANTIATE_ATTN(T)                                                   \
  template struct PositionalEncoding<T>;                                               \
  template PositionalEncoding<T> sine_positional_encoding<T>(int64_t, int64_t, int64_t); \
  template Tensor<T> to_tokens(const Tensor<T>&);                                      \
  template Tensor<T> from_tokens(const Tensor<T>&, int64_t, int64_t);                  \
  template class MultiHeadAttention<T>;                                                \
  template class EncoderLayer<T>;                                                      \
  template class TransformerEncoder<T>;                                                \
  template class ScaleEncoder<T>;

FORGELOC_INSTANTIATE_ATTN(float)
FORGELOC_INSTANTIATE_ATTN(double)

}  // namespace forgeloc
