#include "mattforge/aim.hpp"

#include <cmath>

#include "mattforge/error.hpp"

namespace mattforge {
namespace {

void check_segments(int length, std::span<const int> seg_ids, std::span<const int> ell) {
  if (static_cast<int>(seg_ids.size()) != length) throw Error("segment ids do not match the trace length");
  const int m = static_cast<int>(ell.size());
  for (int i = 0; i < m; ++i) {
    if (ell[i] < 0 || ell[i] >= length) throw Error("ell index out of range");
    if (i > 0 && ell[i] <= ell[i - 1]) throw Error("ell must be strictly increasing");
    if (seg_ids[ell[i]] != i || (ell[i] + 1 < length && seg_ids[ell[i] + 1] == i)) {
      throw Error("ell does not point at the last token of its segment");
    }
  }
  for (int t = 0; t < length; ++t) {
    if (seg_ids[t] < 0 || seg_ids[t] >= m) throw Error("segment id out of range");
    if (t > 0 && seg_ids[t] < seg_ids[t - 1]) throw Error("segment ids must be non-decreasing");
  }
}

// Adds scale * d kernel / d y into grad (when non-null); returns the kernel
// value. Accumulates in double regardless of Scalar.
template <typename S>
double kernel_eval(AimKernel kernel, const S* x, const S* y, int dim, S* grad, double scale, bool& degenerate) {
  if (kernel == AimKernel::Mse) {
    double sum = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double d = static_cast<double>(x[c]) - static_cast<double>(y[c]);
      sum += d * d;
    }
    if (grad) {
      const double g = 2.0 * scale / dim;
      for (int c = 0; c < dim; ++c) grad[c] += static_cast<S>(g * (static_cast<double>(y[c]) - x[c]));
    }
    return sum / dim;
  }
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (int c = 0; c < dim; ++c) {
    xx += static_cast<double>(x[c]) * x[c];
    yy += static_cast<double>(y[c]) * y[c];
    xy += static_cast<double>(x[c]) * y[c];
  }
  if (xx <= 0.0 || yy <= 0.0) {
    degenerate = true;
    return 1.0;
  }
  const double nx = std::sqrt(xx);
  const double ny = std::sqrt(yy);
  const double cosine = xy / (nx * ny);
  if (grad) {
    const double a = scale / (nx * ny);
    const double b = scale * cosine / yy;
    for (int c = 0; c < dim; ++c) grad[c] += static_cast<S>(-(a * x[c] - b * y[c]));
  }
  return 1.0 - cosine;
}

// Kernel over one hidden vector, honoring the head reduction.
template <typename S>
double reduced_kernel(AimKernel kernel, HeadReduction heads, int n_heads, const S* x, const S* y, int hidden,
                      S* grad, double scale, std::int64_t& degenerate) {
  bool bad = false;
  double value = 0.0;
  if (heads == HeadReduction::Concat || n_heads <= 1) {
    value = kernel_eval(kernel, x, y, hidden, grad, scale, bad);
  } else {
    const int dk = hidden / n_heads;
    for (int h = 0; h < n_heads; ++h) {
      value += kernel_eval(kernel, x + h * dk, y + h * dk, dk, grad ? grad + h * dk : nullptr, scale / n_heads, bad);
    }
    value /= n_heads;
  }
  if (bad) ++degenerate;
  return value;
}

void check_heads(HeadReduction heads, int n_heads, int hidden) {
  if (heads == HeadReduction::PerHeadMean && (n_heads < 1 || hidden % n_heads != 0)) {
    throw Error("per-head reduction needs hidden divisible by n_heads");
  }
}

}  // namespace

void AimConfig::validate(int n_layers) const {
  if (depth_n < 1 || depth_n > n_layers) throw Error("depth_n must be in [1, n_layers]");
}

template <typename S>
SegmentStates<S> segment_states(const AttentionTrace<S>& trace, std::span<const int> seg_ids, std::span<const int> ell) {
  check_segments(trace.length(), seg_ids, ell);
  const int m = static_cast<int>(ell.size());
  SegmentStates<S> out;
  out.m = m;
  if (trace.layers.empty()) return out;
  const auto& first = trace.traced_layer(0);
  const int hidden = static_cast<int>(first.v.cols());
  const int n_heads = static_cast<int>(first.attn.size());
  const int dk = hidden / n_heads;
  out.hidden = hidden;

  std::vector<double> buffer;
  for (std::size_t k = 0; k < trace.traced.size(); ++k) {
    const auto& layer = trace.traced_layer(k);
    Matrix<S> states(static_cast<Eigen::Index>(SegmentStates<S>::pair_count(m)), hidden);
    for (int i = 0; i < m; ++i) {
      const int r = ell[i];
      buffer.assign(static_cast<std::size_t>(i + 1) * hidden, 0.0);
      for (int t = 0; t <= r; ++t) {
        double* dst = buffer.data() + static_cast<std::size_t>(seg_ids[t]) * hidden;
        const S* v = layer.v.data() + static_cast<std::size_t>(t) * hidden;
        for (int h = 0; h < n_heads; ++h) {
          const double a = layer.attn[static_cast<std::size_t>(h)](r, t);
          for (int c = h * dk; c < (h + 1) * dk; ++c) dst[c] += a * v[c];
        }
      }
      for (int j = 0; j <= i; ++j) {
        S* row = states.data() + SegmentStates<S>::pair_index(i, j) * hidden;
        const double* src = buffer.data() + static_cast<std::size_t>(j) * hidden;
        for (int c = 0; c < hidden; ++c) row[c] = static_cast<S>(src[c]);
      }
    }
    out.layers.push_back(std::move(states));
  }
  return out;
}

template <typename S>
SegmentOutputs<S> segment_outputs(const AttentionTrace<S>& trace, std::span<const int> ell) {
  const int m = static_cast<int>(ell.size());
  for (int i = 0; i < m; ++i) {
    if (ell[i] < 0 || ell[i] >= trace.length()) throw Error("ell index out of range");
    if (i > 0 && ell[i] <= ell[i - 1]) throw Error("ell must be strictly increasing");
  }
  SegmentOutputs<S> out;
  out.m = m;
  for (std::size_t k = 0; k < trace.traced.size(); ++k) {
    const auto& layer = trace.traced_layer(k);
    out.hidden = static_cast<int>(layer.o.cols());
    Matrix<S> rows(m, layer.o.cols());
    for (int i = 0; i < m; ++i) rows.row(i) = layer.o.row(ell[i]);
    out.layers.push_back(std::move(rows));
  }
  return out;
}

template <typename S>
SegmentOutputs<S> outputs_from_states(const SegmentStates<S>& states) {
  SegmentOutputs<S> out;
  out.m = states.m;
  out.hidden = states.hidden;
  std::vector<double> sum(static_cast<std::size_t>(states.hidden));
  for (const auto& layer : states.layers) {
    Matrix<S> rows(states.m, states.hidden);
    for (int i = 0; i < states.m; ++i) {
      std::fill(sum.begin(), sum.end(), 0.0);
      for (int j = 0; j <= i; ++j) {
        const S* src = layer.data() + SegmentStates<S>::pair_index(i, j) * states.hidden;
        for (int c = 0; c < states.hidden; ++c) sum[c] += src[c];
      }
      for (int c = 0; c < states.hidden; ++c) rows(i, c) = static_cast<S>(sum[c]);
    }
    out.layers.push_back(std::move(rows));
  }
  return out;
}

KernelResult kernel_mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw Error("kernel inputs must have equal, nonzero length");
  KernelResult r;
  r.grad_y.assign(y.size(), 0.0);
  r.loss = kernel_eval(AimKernel::Mse, x.data(), y.data(), static_cast<int>(x.size()), r.grad_y.data(), 1.0,
                       r.degenerate);
  return r;
}

KernelResult kernel_cosine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw Error("kernel inputs must have equal, nonzero length");
  KernelResult r;
  r.grad_y.assign(y.size(), 0.0);
  r.loss = kernel_eval(AimKernel::Cosine, x.data(), y.data(), static_cast<int>(x.size()), r.grad_y.data(), 1.0,
                       r.degenerate);
  return r;
}

template <typename S>
AimResult<S> aim_loss(const SegmentStates<S>& teacher, const SegmentStates<S>& student, AimKernel kernel,
                      HeadReduction heads, int n_heads) {
  if (teacher.m != student.m) throw Error("segment count mismatch");
  if (teacher.layers.size() != student.layers.size() || teacher.hidden != student.hidden) {
    throw Error("teacher and student traces cover different layers");
  }
  check_heads(heads, n_heads, student.hidden);
  AimResult<S> out;
  out.grad.m = student.m;
  out.grad.hidden = student.hidden;
  const int m = student.m;
  const int hidden = student.hidden;
  if (m == 0 || student.layers.empty()) return out;

  const double layer_weight = 1.0 / static_cast<double>(student.layers.size());
  const double pair_weight = 2.0 / (static_cast<double>(m) * (m + 1));
  const double scale = layer_weight * pair_weight;
  const std::size_t pairs = SegmentStates<S>::pair_count(m);
  for (std::size_t k = 0; k < student.layers.size(); ++k) {
    Matrix<S> grad = Matrix<S>::Zero(static_cast<Eigen::Index>(pairs), hidden);
    double layer_sum = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
      layer_sum += reduced_kernel(kernel, heads, n_heads, teacher.layers[k].data() + p * hidden,
                                  student.layers[k].data() + p * hidden, hidden, grad.data() + p * hidden, scale,
                                  out.degenerate);
    }
    out.loss += scale * layer_sum;
    out.kernel_terms += static_cast<std::int64_t>(pairs);
    out.grad.layers.push_back(std::move(grad));
  }
  return out;
}

template <typename S>
AimStarResult<S> aim_star_loss(const SegmentOutputs<S>& teacher, const SegmentOutputs<S>& student, AimKernel kernel,
                               HeadReduction heads, int n_heads) {
  if (teacher.m != student.m) throw Error("segment count mismatch");
  if (teacher.layers.size() != student.layers.size() || teacher.hidden != student.hidden) {
    throw Error("teacher and student traces cover different layers");
  }
  check_heads(heads, n_heads, student.hidden);
  AimStarResult<S> out;
  out.grad.m = student.m;
  out.grad.hidden = student.hidden;
  const int m = student.m;
  const int hidden = student.hidden;
  if (m == 0 || student.layers.empty()) return out;

  const double scale = 1.0 / static_cast<double>(student.layers.size()) / m;
  for (std::size_t k = 0; k < student.layers.size(); ++k) {
    Matrix<S> grad = Matrix<S>::Zero(m, hidden);
    double layer_sum = 0.0;
    for (int i = 0; i < m; ++i) {
      layer_sum += reduced_kernel(kernel, heads, n_heads, teacher.layers[k].data() + static_cast<std::size_t>(i) * hidden,
                                  student.layers[k].data() + static_cast<std::size_t>(i) * hidden, hidden,
                                  grad.data() + static_cast<std::size_t>(i) * hidden, scale, out.degenerate);
    }
    out.loss += scale * layer_sum;
    out.kernel_terms += m;
    out.grad.layers.push_back(std::move(grad));
  }
  return out;
}

template <typename S>
AimStarResult<S> aim_star_loss(const SegmentStates<S>& teacher, const SegmentStates<S>& student, AimKernel kernel,
                               HeadReduction heads, int n_heads) {
  if (teacher.m != student.m) throw Error("segment count mismatch");
  return aim_star_loss(outputs_from_states(teacher), outputs_from_states(student), kernel, heads, n_heads);
}

template <typename S>
TraceGrad<S> segment_states_backward(const AttentionTrace<S>& trace, std::span<const int> seg_ids,
                                     std::span<const int> ell, const SegmentStates<S>& grad) {
  check_segments(trace.length(), seg_ids, ell);
  const int m = static_cast<int>(ell.size());
  if (grad.m != m || grad.layers.size() != trace.traced.size()) throw Error("segment gradient does not match the trace");
  const int n = trace.length();

  TraceGrad<S> out;
  for (std::size_t k = 0; k < trace.traced.size(); ++k) {
    const auto& layer = trace.traced_layer(k);
    const int hidden = static_cast<int>(layer.v.cols());
    const int n_heads = static_cast<int>(layer.attn.size());
    const int dk = hidden / n_heads;
    typename TraceGrad<S>::Layer g;
    g.d_attn.assign(static_cast<std::size_t>(n_heads), Matrix<S>::Zero(n, n));
    g.d_v = Matrix<S>::Zero(n, hidden);
    for (int i = 0; i < m; ++i) {
      const int r = ell[i];
      for (int t = 0; t <= r; ++t) {
        const S* gs = grad.layers[k].data() + SegmentStates<S>::pair_index(i, seg_ids[t]) * hidden;
        const S* v = layer.v.data() + static_cast<std::size_t>(t) * hidden;
        S* dv = g.d_v.data() + static_cast<std::size_t>(t) * hidden;
        for (int h = 0; h < n_heads; ++h) {
          const double a = layer.attn[static_cast<std::size_t>(h)](r, t);
          double dot = 0.0;
          for (int c = h * dk; c < (h + 1) * dk; ++c) {
            dot += static_cast<double>(gs[c]) * v[c];
            dv[c] += static_cast<S>(a * gs[c]);
          }
          g.d_attn[static_cast<std::size_t>(h)](r, t) += static_cast<S>(dot);
        }
      }
    }
    out.layers.push_back(std::move(g));
  }
  return out;
}

template <typename S>
TraceGrad<S> segment_outputs_backward(const AttentionTrace<S>& trace, std::span<const int> ell,
                                      const SegmentOutputs<S>& grad) {
  const int m = static_cast<int>(ell.size());
  if (grad.m != m || grad.layers.size() != trace.traced.size()) throw Error("output gradient does not match the trace");
  TraceGrad<S> out;
  for (std::size_t k = 0; k < trace.traced.size(); ++k) {
    const auto& layer = trace.traced_layer(k);
    typename TraceGrad<S>::Layer g;
    g.d_o = Matrix<S>::Zero(layer.o.rows(), layer.o.cols());
    for (int i = 0; i < m; ++i) g.d_o.row(ell[i]) += grad.layers[k].row(i);
    out.layers.push_back(std::move(g));
  }
  return out;
}

#define MATTFORGE_INSTANTIATE_AIM(S)                                                                              \
  template SegmentStates<S> segment_states(const AttentionTrace<S>&, std::span<const int>, std::span<const int>); \
  template SegmentOutputs<S> segment_outputs(const AttentionTrace<S>&, std::span<const int>);                      \
  template SegmentOutputs<S> outputs_from_states(const SegmentStates<S>&);                                        \
  template AimResult<S> aim_loss(const SegmentStates<S>&, const SegmentStates<S>&, AimKernel, HeadReduction, int); \
  template AimStarResult<S> aim_star_loss(const SegmentOutputs<S>&, const SegmentOutputs<S>&, AimKernel,          \
                                          HeadReduction, int);                                                    \
  template AimStarResult<S> aim_star_loss(const SegmentStates<S>&, const SegmentStates<S>&, AimKernel,            \
                                          HeadReduction, int);                                                    \
  template TraceGrad<S> segment_states_backward(const AttentionTrace<S>&, std::span<const int>,                    \
                                                std::span<const int>, const SegmentStates<S>&);                   \
  template TraceGrad<S> segment_outputs_backward(const AttentionTrace<S>&, std::span<const int>,                   \
                                                 const SegmentOutputs<S>&);

MATTFORGE_INSTANTIATE_AIM(float)
MATTFORGE_INSTANTIATE_AIM(double)

#undef MATTFORGE_INSTANTIATE_AIM

}  // namespace mattforge
