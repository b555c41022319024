#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mattforge/model.hpp"

namespace mattforge {

enum class AimObjective { Full, Star };
enum class AimKernel { Mse, Cosine };

/// How per-head states enter the kernel. Concat treats the head-concatenated
/// hidden vector as one sample; PerHeadMean averages the kernel over heads.
enum class HeadReduction { Concat, PerHeadMean };

struct AimConfig {
  int depth_n = 1;
  TraceLayers layer_mode = TraceLayers::LastOnly;
  AimObjective objective = AimObjective::Full;
  AimKernel kernel = AimKernel::Mse;
  HeadReduction heads = HeadReduction::Concat;

  void validate(int n_layers) const;
};

/// Segment-level weighted value states, per traced layer. For query segment i
/// (represented by the query row of its last token) and key segment j <= i,
/// row `pair_index(i, j)` holds the sum over tokens t of segment j of
/// A[ell(i)][t] * v_t, heads concatenated. Pairs with j > i are masked by
/// causality and not stored.
template <typename Scalar>
struct SegmentStates {
  int m = 0;
  int hidden = 0;
  std::vector<Matrix<Scalar>> layers;  // m(m+1)/2 x hidden each

  static std::size_t pair_index(int i, int j) {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(i + 1) / 2 + static_cast<std::size_t>(j);
  }
  static std::size_t pair_count(int m) { return pair_index(m, 0); }
};

/// Segment output states: row i is the attention output (before the output
/// projection) at the last token of segment i.
template <typename Scalar>
struct SegmentOutputs {
  int m = 0;
  int hidden = 0;
  std::vector<Matrix<Scalar>> layers;  // m x hidden each
};

template <typename Scalar>
SegmentStates<Scalar> segment_states(const AttentionTrace<Scalar>& trace, std::span<const int> seg_ids,
                                     std::span<const int> ell);

template <typename Scalar>
SegmentOutputs<Scalar> segment_outputs(const AttentionTrace<Scalar>& trace, std::span<const int> ell);

/// Sums each query row's segment states; equals `segment_outputs` on the same
/// trace up to rounding.
template <typename Scalar>
SegmentOutputs<Scalar> outputs_from_states(const SegmentStates<Scalar>& states);

struct KernelResult {
  double loss = 0.0;
  std::vector<double> grad_y;
  bool degenerate = false;  // cosine with a zero-norm input
};

/// mean over dims of (x - y)^2, with its gradient in y.
KernelResult kernel_mse(std::span<const double> x, std::span<const double> y);

/// 1 - cos(x, y), with its gradient in y. A zero-norm input yields loss 1,
/// zero gradient, and `degenerate` set.
KernelResult kernel_cosine(std::span<const double> x, std::span<const double> y);

template <typename Scalar>
struct AimResult {
  double loss = 0.0;
  SegmentStates<Scalar> grad;  // d loss / d student states
  std::int64_t kernel_terms = 0;
  std::int64_t degenerate = 0;
};

template <typename Scalar>
struct AimStarResult {
  double loss = 0.0;
  SegmentOutputs<Scalar> grad;  // d loss / d student outputs
  std::int64_t kernel_terms = 0;
  std::int64_t degenerate = 0;
};

/// Full objective: 2 / (m (m+1)) times the kernel summed over all causal
/// segment pairs, averaged uniformly over traced layers. The teacher side is a
/// constant.
template <typename Scalar>
AimResult<Scalar> aim_loss(const SegmentStates<Scalar>& teacher, const SegmentStates<Scalar>& student,
                           AimKernel kernel, HeadReduction heads = HeadReduction::Concat, int n_heads = 1);

/// Simplified objective over segment outputs: (1 / m) sum_i kernel(o_i, o'_i),
/// averaged over traced layers.
template <typename Scalar>
AimStarResult<Scalar> aim_star_loss(const SegmentOutputs<Scalar>& teacher, const SegmentOutputs<Scalar>& student,
                                    AimKernel kernel, HeadReduction heads = HeadReduction::Concat, int n_heads = 1);

/// Simplified objective evaluated from pairwise states (sums them first).
template <typename Scalar>
AimStarResult<Scalar> aim_star_loss(const SegmentStates<Scalar>& teacher, const SegmentStates<Scalar>& student,
                                    AimKernel kernel, HeadReduction heads = HeadReduction::Concat, int n_heads = 1);

/// Chains a gradient on segment states back to the attention matrices and
/// value states of the trace.
template <typename Scalar>
TraceGrad<Scalar> segment_states_backward(const AttentionTrace<Scalar>& trace, std::span<const int> seg_ids,
                                          std::span<const int> ell, const SegmentStates<Scalar>& grad);

/// Chains a gradient on segment outputs back to the attention outputs.
template <typename Scalar>
TraceGrad<Scalar> segment_outputs_backward(const AttentionTrace<Scalar>& trace, std::span<const int> ell,
                                           const SegmentOutputs<Scalar>& grad);

}  // namespace mattforge
