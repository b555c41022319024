#include "mattforge/model.hpp"

#include <cmath>
#include <numbers>

#include "mattforge/error.hpp"
#include "mattforge/rng.hpp"

namespace mattforge {
namespace {

constexpr double kInitStd = 0.02;

template <typename S>
using Array = Eigen::Array<S, 1, Eigen::Dynamic>;
template <typename S>
using Array2 = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

struct RopeTable {
  int half = 0;
  std::vector<double> cos;
  std::vector<double> sin;
};

RopeTable rope_table(int n, int head_dim, double base) {
  RopeTable t;
  t.half = head_dim / 2;
  t.cos.resize(static_cast<std::size_t>(n) * t.half);
  t.sin.resize(t.cos.size());
  for (int p = 0; p < n; ++p) {
    for (int i = 0; i < t.half; ++i) {
      const double angle = p * std::pow(base, -2.0 * i / head_dim);
      t.cos[static_cast<std::size_t>(p) * t.half + i] = std::cos(angle);
      t.sin[static_cast<std::size_t>(p) * t.half + i] = std::sin(angle);
    }
  }
  return t;
}

// Rotates each (i, i + half) pair of every head; `inverse` applies the
// transpose rotation, which is what the reverse pass needs.
template <typename S>
void apply_rope(Matrix<S>& x, const RopeTable& t, int n_heads, int head_dim, bool inverse) {
  const double sign = inverse ? -1.0 : 1.0;
  for (Eigen::Index p = 0; p < x.rows(); ++p) {
    const double* cp = t.cos.data() + p * t.half;
    const double* sp = t.sin.data() + p * t.half;
    for (int h = 0; h < n_heads; ++h) {
      S* row = x.data() + p * x.cols() + h * head_dim;
      for (int i = 0; i < t.half; ++i) {
        const double a = row[i];
        const double b = row[i + t.half];
        const double c = cp[i];
        const double s = sign * sp[i];
        row[i] = static_cast<S>(a * c - b * s);
        row[i + t.half] = static_cast<S>(a * s + b * c);
      }
    }
  }
}

template <typename S>
void rms_forward(const Matrix<S>& x, const Vector<S>& gain, double eps, VectorD& inv, Matrix<S>& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index h = x.cols();
  inv.resize(n);
  out.resize(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    double ss = 0.0;
    for (Eigen::Index j = 0; j < h; ++j) ss += static_cast<double>(x(i, j)) * x(i, j);
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(h) + eps);
    inv(i) = r;
    for (Eigen::Index j = 0; j < h; ++j) out(i, j) = static_cast<S>(static_cast<double>(x(i, j)) * r * gain(j));
  }
}

// Accumulates into dx (and d_gain when given).
template <typename S>
void rms_backward(const Matrix<S>& x, const VectorD& inv, const Vector<S>& gain, const Matrix<S>& dout,
                  Matrix<S>& dx, Vector<S>* d_gain) {
  const Eigen::Index n = x.rows();
  const Eigen::Index h = x.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = inv(i);
    double dot = 0.0;
    for (Eigen::Index j = 0; j < h; ++j) dot += static_cast<double>(x(i, j)) * gain(j) * dout(i, j);
    const double coef = r * r * r * dot / static_cast<double>(h);
    for (Eigen::Index j = 0; j < h; ++j) {
      dx(i, j) += static_cast<S>(r * gain(j) * dout(i, j) - coef * x(i, j));
    }
    if (d_gain) {
      for (Eigen::Index j = 0; j < h; ++j) (*d_gain)(j) += static_cast<S>(static_cast<double>(dout(i, j)) * x(i, j) * r);
    }
  }
}

// Elementwise GELU in the working precision; Eigen vectorizes tanh for float.
template <typename S>
Matrix<S> gelu_matrix(const Matrix<S>& u) {
  const auto x = u.array();
  const Array2<S> t = (S(kGeluC) * (x + S(kGeluA) * x.cube())).tanh();
  return (S(0.5) * x * (S(1) + t)).matrix();
}

template <typename S>
Matrix<S> gelu_grad_matrix(const Matrix<S>& u) {
  const auto x = u.array();
  const Array2<S> t = (S(kGeluC) * (x + S(kGeluA) * x.cube())).tanh();
  return (S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * S(kGeluC) * (S(1) + S(3 * kGeluA) * x * x)).matrix();
}

// log(sum(exp(x))) over a contiguous row; exponentials in the working
// precision, the sum in double.
template <typename S>
double log_sum_exp(const S* data, Eigen::Index len) {
  const Eigen::Map<const Array<S>> x(data, len);
  const S peak = x.maxCoeff();
  return static_cast<double>(peak) + std::log((x - peak).exp().template cast<double>().sum());
}

void check_ids(std::span<const TokenId> ids, int vocab_size, int max_seq) {
  if (ids.empty()) throw Error("empty token sequence");
  if (static_cast<int>(ids.size()) > max_seq) {
    throw Error("sequence too long: " + std::to_string(ids.size()) + " > max_seq " + std::to_string(max_seq));
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab_size) throw Error("token id " + std::to_string(id) + " outside the embedding");
  }
}

template <typename S>
Matrix<S> embed(const ModelView<S>& model, std::span<const TokenId> ids) {
  Matrix<S> x(static_cast<Eigen::Index>(ids.size()), model.config().hidden());
  for (std::size_t p = 0; p < ids.size(); ++p) x.row(static_cast<Eigen::Index>(p)) = model.embedding().row(ids[p]);
  return x;
}

template <typename S>
void layer_forward(const LayerWeights<S>& w, const ModelConfig& cfg, const RopeTable& rope, LayerCache<S>& c,
                   bool complete) {
  const Eigen::Index n = c.x_in.rows();
  const int dk = cfg.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  rms_forward(c.x_in, w.attn_norm, cfg.norm_eps, c.inv_rms_attn, c.xn);
  c.q.noalias() = c.xn * w.wq;
  c.k.noalias() = c.xn * w.wk;
  c.v.noalias() = c.xn * w.wv;
  apply_rope(c.q, rope, cfg.n_heads, dk, false);
  apply_rope(c.k, rope, cfg.n_heads, dk, false);

  c.o.resize(n, cfg.hidden());
  c.attn.resize(static_cast<std::size_t>(cfg.n_heads));
  for (int head = 0; head < cfg.n_heads; ++head) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(head) * dk;
    Matrix<S> scores;
    scores.noalias() = c.q.middleCols(c0, dk) * c.k.middleCols(c0, dk).transpose();
    Matrix<S>& a = c.attn[static_cast<std::size_t>(head)];
    a.setZero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto x = scores.row(i).head(i + 1).array();
      x *= static_cast<S>(scale);
      const S peak = x.maxCoeff();
      const Array<S> e = (x - peak).exp();
      const double total = e.template cast<double>().sum();
      a.row(i).head(i + 1) = (e.template cast<double>() / total).template cast<S>().matrix();
    }
    c.o.middleCols(c0, dk).noalias() = a * c.v.middleCols(c0, dk);
  }
  if (!complete) return;

  c.x_mid = c.x_in;
  c.x_mid.noalias() += c.o * w.wo;
  rms_forward(c.x_mid, w.ffn_norm, cfg.norm_eps, c.inv_rms_ffn, c.yn);
  c.u.noalias() = c.yn * w.w_up;
  const Matrix<S> g = gelu_matrix(c.u);
  c.x_out = c.x_mid;
  c.x_out.noalias() += g * w.w_down;
  c.complete = true;
}

// Reverse pass through one layer. `d_out` is the gradient on the layer output
// (null for the top of a traced stack), `up` injects gradients directly on the
// attention internals. Returns the gradient on the layer input.
template <typename S>
Matrix<S> layer_backward(const LayerWeights<S>& w, const ModelConfig& cfg, const RopeTable& rope,
                         const LayerCache<S>& c, const Matrix<S>* d_out,
                         const typename TraceGrad<S>::Layer* up, LayerWeights<S>* gw) {
  const Eigen::Index n = c.x_in.rows();
  const Eigen::Index h = cfg.hidden();
  const int dk = cfg.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix<S> dx_in = Matrix<S>::Zero(n, h);
  Matrix<S> d_o = Matrix<S>::Zero(n, h);
  bool have_d_o = false;
  if (d_out) {
    if (!c.complete) throw Error("layer gradient requested past the traced depth");
    Matrix<S> d_mid = *d_out;
    const Matrix<S> g = gelu_matrix(c.u);
    Matrix<S> dg;
    dg.noalias() = (*d_out) * w.w_down.transpose();
    if (gw) gw->w_down.noalias() += g.transpose() * (*d_out);
    dg.array() *= gelu_grad_matrix(c.u).array();
    if (gw) gw->w_up.noalias() += c.yn.transpose() * dg;
    Matrix<S> dyn;
    dyn.noalias() = dg * w.w_up.transpose();
    rms_backward(c.x_mid, c.inv_rms_ffn, w.ffn_norm, dyn, d_mid, gw ? &gw->ffn_norm : nullptr);
    d_o.noalias() = d_mid * w.wo.transpose();
    if (gw) gw->wo.noalias() += c.o.transpose() * d_mid;
    dx_in = std::move(d_mid);
    have_d_o = true;
  }
  if (up && up->d_o.size() > 0) {
    if (up->d_o.rows() != n || up->d_o.cols() != h) throw Error("upstream d_o shape mismatch");
    d_o += up->d_o;
    have_d_o = true;
  }
  const bool have_d_attn = up && !up->d_attn.empty();
  if (have_d_attn && up->d_attn.size() != static_cast<std::size_t>(cfg.n_heads)) {
    throw Error("upstream attention gradient needs one matrix per head");
  }

  Matrix<S> dq = Matrix<S>::Zero(n, h);
  Matrix<S> dkm = Matrix<S>::Zero(n, h);
  Matrix<S> dv = Matrix<S>::Zero(n, h);
  Matrix<S> da(n, n);
  Matrix<S> ds(n, n);
  for (int head = 0; head < cfg.n_heads; ++head) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(head) * dk;
    const Matrix<S>& a = c.attn[static_cast<std::size_t>(head)];
    if (have_d_o) {
      da.noalias() = d_o.middleCols(c0, dk) * c.v.middleCols(c0, dk).transpose();
      dv.middleCols(c0, dk).noalias() = a.transpose() * d_o.middleCols(c0, dk);
    } else {
      da.setZero();
    }
    if (have_d_attn) {
      const Matrix<S>& ua = up->d_attn[static_cast<std::size_t>(head)];
      if (ua.rows() != n || ua.cols() != n) throw Error("upstream attention gradient shape mismatch");
      da += ua;
    }
    ds.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) dot += static_cast<double>(a(i, j)) * da(i, j);
      for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = static_cast<S>(a(i, j) * (da(i, j) - dot) * scale);
    }
    dq.middleCols(c0, dk).noalias() = ds * c.k.middleCols(c0, dk);
    dkm.middleCols(c0, dk).noalias() = ds.transpose() * c.q.middleCols(c0, dk);
  }
  if (up && up->d_v.size() > 0) {
    if (up->d_v.rows() != n || up->d_v.cols() != h) throw Error("upstream d_v shape mismatch");
    dv += up->d_v;
  }
  apply_rope(dq, rope, cfg.n_heads, dk, true);
  apply_rope(dkm, rope, cfg.n_heads, dk, true);

  Matrix<S> dxn;
  dxn.noalias() = dq * w.wq.transpose();
  dxn.noalias() += dkm * w.wk.transpose();
  dxn.noalias() += dv * w.wv.transpose();
  if (gw) {
    gw->wq.noalias() += c.xn.transpose() * dq;
    gw->wk.noalias() += c.xn.transpose() * dkm;
    gw->wv.noalias() += c.xn.transpose() * dv;
  }
  rms_backward(c.x_in, c.inv_rms_attn, w.attn_norm, dxn, dx_in, gw ? &gw->attn_norm : nullptr);
  return dx_in;
}

template <typename S>
std::vector<LayerCache<S>> run_layers(const ModelView<S>& model, std::span<const TokenId> ids, int depth,
                                      bool complete_top, const RopeTable& rope) {
  std::vector<LayerCache<S>> layers(static_cast<std::size_t>(depth));
  for (int l = 0; l < depth; ++l) {
    LayerCache<S>& c = layers[static_cast<std::size_t>(l)];
    c.x_in = l == 0 ? embed(model, ids) : layers[static_cast<std::size_t>(l - 1)].x_out;
    layer_forward(model.layer(l), model.config(), rope, c, complete_top || l + 1 < depth);
  }
  return layers;
}

template <typename S>
LayerWeights<S> zero_layer(const LayerWeights<S>& like) {
  LayerWeights<S> z;
  z.wq = Matrix<S>::Zero(like.wq.rows(), like.wq.cols());
  z.wk = Matrix<S>::Zero(like.wk.rows(), like.wk.cols());
  z.wv = Matrix<S>::Zero(like.wv.rows(), like.wv.cols());
  z.wo = Matrix<S>::Zero(like.wo.rows(), like.wo.cols());
  z.attn_norm = Vector<S>::Zero(like.attn_norm.size());
  z.ffn_norm = Vector<S>::Zero(like.ffn_norm.size());
  z.w_up = Matrix<S>::Zero(like.w_up.rows(), like.w_up.cols());
  z.w_down = Matrix<S>::Zero(like.w_down.rows(), like.w_down.cols());
  return z;
}

template <typename S, typename T>
LayerWeights<T> cast_layer(const LayerWeights<S>& w) {
  return {w.wq.template cast<T>(),        w.wk.template cast<T>(),       w.wv.template cast<T>(),
          w.wo.template cast<T>(),        w.attn_norm.template cast<T>(), w.ffn_norm.template cast<T>(),
          w.w_up.template cast<T>(),      w.w_down.template cast<T>()};
}

template <typename P, typename Ref>
std::vector<Ref> collect_refs(P& params) {
  std::vector<Ref> refs;
  auto add_m = [&](std::string name, auto& m) { refs.push_back({std::move(name), m.data(), m.rows(), m.cols()}); };
  add_m("embedding", params.embedding);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& w = params.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    add_m(p + "wq", w.wq);
    add_m(p + "wk", w.wk);
    add_m(p + "wv", w.wv);
    add_m(p + "wo", w.wo);
    add_m(p + "attn_norm", w.attn_norm);
    add_m(p + "ffn_norm", w.ffn_norm);
    add_m(p + "w_up", w.w_up);
    add_m(p + "w_down", w.w_down);
  }
  add_m("final_norm", params.final_norm);
  return refs;
}

}  // namespace

// ---------------------------------------------------------------------------

int ModelConfig::ffn_dim() const { return static_cast<int>(std::lround(ffn_mult * hidden())); }

void ModelConfig::validate() const {
  if (n_layers < 1) throw Error("n_layers must be >= 1");
  if (n_heads < 1) throw Error("n_heads must be >= 1");
  if (head_dim < 2 || head_dim % 2 != 0) throw Error("head_dim must be a positive even number");
  if (vocab_size < 257) throw Error("vocab_size must be >= 257");
  if (max_seq < 2) throw Error("max_seq must be >= 2");
  if (!(ffn_mult > 0.0) || ffn_dim() < 1) throw Error("ffn_mult must be positive");
  if (!(rope_base > 1.0)) throw Error("rope_base must be > 1");
  if (!(norm_eps > 0.0)) throw Error("norm_eps must be > 0");
}

template <typename S>
template <typename T>
Parameters<T> Parameters<S>::cast() const {
  Parameters<T> out;
  out.config = config;
  out.embedding = embedding.template cast<T>();
  for (const auto& w : layers) out.layers.push_back(cast_layer<S, T>(w));
  out.final_norm = final_norm.template cast<T>();
  return out;
}

template <typename S>
bool Parameters<S>::all_finite() const {
  for (const auto& ref : tensor_refs(*this)) {
    for (Eigen::Index i = 0; i < ref.size(); ++i) {
      if (!std::isfinite(static_cast<double>(ref.data[i]))) return false;
    }
  }
  return true;
}

template <typename S>
std::vector<TensorRef<S>> tensor_refs(Parameters<S>& params) {
  return collect_refs<Parameters<S>, TensorRef<S>>(params);
}

template <typename S>
std::vector<TensorRef<const S>> tensor_refs(const Parameters<S>& params) {
  return collect_refs<const Parameters<S>, TensorRef<const S>>(params);
}

template <typename S>
Parameters<S> zeros_like(const Parameters<S>& like) {
  Parameters<S> z;
  z.config = like.config;
  z.embedding = Matrix<S>::Zero(like.embedding.rows(), like.embedding.cols());
  for (const auto& w : like.layers) z.layers.push_back(zero_layer(w));
  z.final_norm = Vector<S>::Zero(like.final_norm.size());
  return z;
}

Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int h = config.hidden();
  const int f = config.ffn_dim();
  auto normal = [&](Eigen::Index rows, Eigen::Index cols) {
    MatrixF m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(kInitStd * rng.normal());
    return m;
  };
  Parameters<float> p;
  p.config = config;
  p.embedding = normal(config.vocab_size, h);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights<float> w;
    w.wq = normal(h, h);
    w.wk = normal(h, h);
    w.wv = normal(h, h);
    w.wo = normal(h, h);
    w.attn_norm = VectorF::Ones(h);
    w.ffn_norm = VectorF::Ones(h);
    w.w_up = normal(h, f);
    w.w_down = normal(f, h);
    p.layers.push_back(std::move(w));
  }
  p.final_norm = VectorF::Ones(h);
  return p;
}

template <typename S>
ModelView<S>::ModelView(const Parameters<S>& params, const Matrix<S>& embedding)
    : params_(&params), embedding_(&embedding) {
  if (embedding.cols() != params.config.hidden()) throw Error("embedding width does not match the model");
}

template <typename S>
AttentionTrace<S> forward_trace(const ModelView<S>& model, std::span<const TokenId> ids, int depth,
                                TraceLayers mode) {
  const ModelConfig& cfg = model.config();
  if (depth < 1 || depth > cfg.n_layers) throw Error("trace depth must be in [1, n_layers]");
  check_ids(ids, model.vocab_size(), cfg.max_seq);
  const RopeTable rope = rope_table(static_cast<int>(ids.size()), cfg.head_dim, cfg.rope_base);

  AttentionTrace<S> trace;
  trace.ids.assign(ids.begin(), ids.end());
  trace.depth = depth;
  trace.mode = mode;
  trace.layers = run_layers(model, ids, depth, false, rope);
  if (mode == TraceLayers::LastOnly) {
    trace.traced = {depth - 1};
  } else {
    for (int l = 0; l < depth; ++l) trace.traced.push_back(l);
  }
  return trace;
}

template <typename S>
FullForward<S> forward_full(const ModelView<S>& model, std::span<const TokenId> ids) {
  const ModelConfig& cfg = model.config();
  check_ids(ids, model.vocab_size(), cfg.max_seq);
  const RopeTable rope = rope_table(static_cast<int>(ids.size()), cfg.head_dim, cfg.rope_base);
  FullForward<S> out;
  out.ids.assign(ids.begin(), ids.end());
  out.layers = run_layers(model, ids, cfg.n_layers, true, rope);
  rms_forward(out.layers.back().x_out, model.final_norm(), cfg.norm_eps, out.inv_rms_final, out.hn);
  out.logits.noalias() = out.hn * model.embedding().transpose();
  return out;
}

template <typename S>
Matrix<S> lm_logits(const ModelView<S>& model, std::span<const TokenId> ids) {
  return forward_full(model, ids).logits;
}

template <typename S>
Matrix<S> embedding_grad(const ModelView<S>& model, const AttentionTrace<S>& trace, const TraceGrad<S>& upstream) {
  const ModelConfig& cfg = model.config();
  if (upstream.layers.size() != trace.traced.size()) throw Error("upstream gradient does not match the trace layers");
  const RopeTable rope = rope_table(trace.length(), cfg.head_dim, cfg.rope_base);

  std::vector<const typename TraceGrad<S>::Layer*> up(static_cast<std::size_t>(trace.depth), nullptr);
  for (std::size_t k = 0; k < trace.traced.size(); ++k) up[static_cast<std::size_t>(trace.traced[k])] = &upstream.layers[k];

  Matrix<S> dx;
  for (int l = trace.depth - 1; l >= 0; --l) {
    const auto& cache = trace.layers[static_cast<std::size_t>(l)];
    const Matrix<S>* d_out = l == trace.depth - 1 ? nullptr : &dx;
    Matrix<S> next = layer_backward<S>(model.layer(l), cfg, rope, cache, d_out, up[static_cast<std::size_t>(l)], nullptr);
    dx = std::move(next);
  }
  Matrix<S> grad = Matrix<S>::Zero(model.vocab_size(), cfg.hidden());
  for (std::size_t p = 0; p < trace.ids.size(); ++p) grad.row(trace.ids[p]) += dx.row(static_cast<Eigen::Index>(p));
  return grad;
}

template <typename S>
double lm_loss(const Parameters<S>& params, std::span<const TokenId> ids, Parameters<S>* grads, double scale) {
  const ModelView<S> model(params);
  const ModelConfig& cfg = params.config;
  FullForward<S> fwd = forward_full(model, ids);
  const Eigen::Index n = fwd.logits.rows();
  const Eigen::Index vocab = fwd.logits.cols();

  double loss = 0.0;
  Matrix<S> dlogits;
  if (grads) dlogits.setZero(n, vocab);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double log_z = log_sum_exp(fwd.logits.data() + i * vocab, vocab);
    const TokenId target = ids[static_cast<std::size_t>(i + 1)];
    loss -= fwd.logits(i, target) - log_z;
    if (grads) {
      dlogits.row(i) = ((fwd.logits.row(i).array() - static_cast<S>(log_z)).exp() * static_cast<S>(scale)).matrix();
      dlogits(i, target) -= static_cast<S>(scale);
    }
  }
  if (!grads) return loss;

  grads->embedding.noalias() += dlogits.transpose() * fwd.hn;
  Matrix<S> dhn;
  dhn.noalias() = dlogits * params.embedding;
  Matrix<S> dx = Matrix<S>::Zero(n, cfg.hidden());
  rms_backward(fwd.layers.back().x_out, fwd.inv_rms_final, params.final_norm, dhn, dx, &grads->final_norm);

  const RopeTable rope = rope_table(static_cast<int>(n), cfg.head_dim, cfg.rope_base);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    Matrix<S> next = layer_backward<S>(params.layers[static_cast<std::size_t>(l)], cfg, rope,
                                       fwd.layers[static_cast<std::size_t>(l)], &dx, nullptr,
                                       &grads->layers[static_cast<std::size_t>(l)]);
    dx = std::move(next);
  }
  for (Eigen::Index p = 0; p < n; ++p) grads->embedding.row(ids[static_cast<std::size_t>(p)]) += dx.row(p);
  return loss;
}

template <typename S>
std::vector<double> target_log_probs(const ModelView<S>& model, std::span<const TokenId> ids) {
  const FullForward<S> fwd = forward_full(model, ids);
  const Eigen::Index n = fwd.logits.rows();
  const Eigen::Index vocab = fwd.logits.cols();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max<Eigen::Index>(n - 1, 0)));
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double log_z = log_sum_exp(fwd.logits.data() + i * vocab, vocab);
    out.push_back(fwd.logits(i, ids[static_cast<std::size_t>(i + 1)]) - log_z);
  }
  return out;
}

#define MATTFORGE_INSTANTIATE_MODEL(S)                                                                            \
  template struct Parameters<S>;                                                                                 \
  template Parameters<double> Parameters<S>::cast<double>() const;                                               \
  template Parameters<float> Parameters<S>::cast<float>() const;                                                 \
  template std::vector<TensorRef<S>> tensor_refs(Parameters<S>&);                                                \
  template std::vector<TensorRef<const S>> tensor_refs(const Parameters<S>&);                                    \
  template Parameters<S> zeros_like(const Parameters<S>&);                                                       \
  template class ModelView<S>;                                                                                   \
  template AttentionTrace<S> forward_trace(const ModelView<S>&, std::span<const TokenId>, int, TraceLayers);     \
  template FullForward<S> forward_full(const ModelView<S>&, std::span<const TokenId>);                           \
  template Matrix<S> lm_logits(const ModelView<S>&, std::span<const TokenId>);                                   \
  template Matrix<S> embedding_grad(const ModelView<S>&, const AttentionTrace<S>&, const TraceGrad<S>&);         \
  template double lm_loss(const Parameters<S>&, std::span<const TokenId>, Parameters<S>*, double);               \
  template std::vector<double> target_log_probs(const ModelView<S>&, std::span<const TokenId>);

MATTFORGE_INSTANTIATE_MODEL(float)
MATTFORGE_INSTANTIATE_MODEL(double)

#undef MATTFORGE_INSTANTIATE_MODEL

}  // namespace mattforge
