#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mattforge/tensor.hpp"

namespace mattforge {

/// Shape of the decoder-only transformer: pre-norm RMS normalization, rotary
/// positions on queries and keys, multi-head causal attention, GELU FFN, and an
/// LM head tied to the input embedding.
struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int head_dim = 32;
  int vocab_size = 512;
  int max_seq = 256;
  double ffn_mult = 4.0;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  int hidden() const { return n_heads * head_dim; }
  int ffn_dim() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Scalar>
struct LayerWeights {
  Matrix<Scalar> wq, wk, wv, wo;  // hidden x hidden, applied as x * W
  Vector<Scalar> attn_norm;
  Vector<Scalar> ffn_norm;
  Matrix<Scalar> w_up;    // hidden x ffn
  Matrix<Scalar> w_down;  // ffn x hidden
};

/// All model weights. `embedding` doubles as the LM head; there is no separate
/// output matrix. The same struct holds gradients during training.
template <typename Scalar>
struct Parameters {
  ModelConfig config;
  Matrix<Scalar> embedding;
  std::vector<LayerWeights<Scalar>> layers;
  Vector<Scalar> final_norm;

  template <typename Other>
  Parameters<Other> cast() const;

  bool all_finite() const;
};

/// A named, contiguous row-major tensor inside a Parameters object.
template <typename Scalar>
struct TensorRef {
  std::string name;
  Scalar* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

/// Tensors in canonical order: embedding, then per layer wq wk wv wo attn_norm
/// ffn_norm w_up w_down, then final_norm. Vectors report cols == 1.
template <typename Scalar>
std::vector<TensorRef<Scalar>> tensor_refs(Parameters<Scalar>& params);
template <typename Scalar>
std::vector<TensorRef<const Scalar>> tensor_refs(const Parameters<Scalar>& params);

/// Same shapes as `like`, all zeros.
template <typename Scalar>
Parameters<Scalar> zeros_like(const Parameters<Scalar>& like);

/// Deterministic init: normal(0, 0.02) for embedding and projections, ones for
/// norm scales.
Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed);

/// Read-only view used by every forward and backward pass. A student view
/// swaps in its own embedding matrix while reading every other weight from the
/// teacher's storage.
template <typename Scalar>
class ModelView {
 public:
  explicit ModelView(const Parameters<Scalar>& params) : params_(&params), embedding_(&params.embedding) {}
  ModelView(const Parameters<Scalar>& params, const Matrix<Scalar>& embedding);

  const ModelConfig& config() const { return params_->config; }
  const Matrix<Scalar>& embedding() const { return *embedding_; }
  const LayerWeights<Scalar>& layer(int index) const { return params_->layers[static_cast<std::size_t>(index)]; }
  const Vector<Scalar>& final_norm() const { return params_->final_norm; }
  const Parameters<Scalar>& shared() const { return *params_; }
  int vocab_size() const { return static_cast<int>(embedding_->rows()); }

 private:
  const Parameters<Scalar>* params_;
  const Matrix<Scalar>* embedding_;
};

enum class TraceLayers { LastOnly, AllUpToN };

/// Everything one layer computed, kept for the reverse pass. Q and K are
/// stored after the rotary encoding. `o` is the head-concatenated A*V before
/// the output projection. Fields after `o` are empty for the top layer of a
/// traced forward, which stops once attention is done.
template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> x_in;
  VectorD inv_rms_attn;
  Matrix<Scalar> xn;
  Matrix<Scalar> q, k, v;
  std::vector<Matrix<Scalar>> attn;  // per head, n x n, zero above the diagonal
  Matrix<Scalar> o;
  bool complete = false;
  Matrix<Scalar> x_mid;
  VectorD inv_rms_ffn;
  Matrix<Scalar> yn;
  Matrix<Scalar> u;  // FFN pre-activation
  Matrix<Scalar> x_out;
};

/// Per-layer attention internals of the first `depth` layers.
template <typename Scalar>
struct AttentionTrace {
  std::vector<TokenId> ids;
  int depth = 0;
  TraceLayers mode = TraceLayers::LastOnly;
  std::vector<LayerCache<Scalar>> layers;  // layers[0..depth-1]
  std::vector<int> traced;                 // indices into `layers`

  const LayerCache<Scalar>& traced_layer(std::size_t k) const { return layers[static_cast<std::size_t>(traced[k])]; }
  int length() const { return static_cast<int>(ids.size()); }
};

template <typename Scalar>
AttentionTrace<Scalar> forward_trace(const ModelView<Scalar>& model, std::span<const TokenId> ids, int depth,
                                     TraceLayers mode);

/// Full-depth forward with caches for the reverse pass.
template <typename Scalar>
struct FullForward {
  std::vector<TokenId> ids;
  std::vector<LayerCache<Scalar>> layers;
  VectorD inv_rms_final;
  Matrix<Scalar> hn;      // final-normed hidden states
  Matrix<Scalar> logits;  // n x V
};

template <typename Scalar>
FullForward<Scalar> forward_full(const ModelView<Scalar>& model, std::span<const TokenId> ids);

template <typename Scalar>
Matrix<Scalar> lm_logits(const ModelView<Scalar>& model, std::span<const TokenId> ids);

/// Gradient of some loss with respect to the traced states, one entry per
/// traced layer in trace order. Empty matrices mean zero.
template <typename Scalar>
struct TraceGrad {
  struct Layer {
    Matrix<Scalar> d_o;                  // n x hidden
    std::vector<Matrix<Scalar>> d_attn;  // per head, n x n
    Matrix<Scalar> d_v;                  // n x hidden
  };
  std::vector<Layer> layers;
};

/// Exact reverse-mode gradient of the traced states with respect to the input
/// embedding rows. Returns a vocab x hidden matrix; rows of ids absent from
/// the sequence are zero.
template <typename Scalar>
Matrix<Scalar> embedding_grad(const ModelView<Scalar>& model, const AttentionTrace<Scalar>& trace,
                              const TraceGrad<Scalar>& upstream);

/// Summed next-token cross entropy (nats) over positions 1..n-1. When `grads`
/// is given, accumulates `scale` times the gradient of that sum into it.
template <typename Scalar>
double lm_loss(const Parameters<Scalar>& params, std::span<const TokenId> ids, Parameters<Scalar>* grads = nullptr,
               double scale = 1.0);

/// Log-probabilities (natural log) of ids[1..n-1] given their prefixes.
template <typename Scalar>
std::vector<double> target_log_probs(const ModelView<Scalar>& model, std::span<const TokenId> ids);

}  // namespace mattforge
