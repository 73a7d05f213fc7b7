// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode gradients for the cells in cells.hpp, plus a central
// finite-difference checker that only uses the forward pass.

#ifndef SLSTM_GRAD_HPP
#define SLSTM_GRAD_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slstm/cells.hpp"

namespace slstm {

template <typename T>
struct LossAndGrad {
  double loss;
  Vector<T> dlogits;
};

/// -log softmax(logits)[target] and its gradient softmax - onehot.
template <typename T>
LossAndGrad<T> softmax_xent(const Vector<T>& logits, Index target);

template <typename T>
struct BatchLoss {
  /// Mean cross-entropy over the batch.
  double loss;
  /// Gradient of the mean loss, one row per sample.
  Matrix<T> dlogits;
};

template <typename T>
BatchLoss<T> softmax_xent(const Matrix<T>& logits, std::span<const int> targets);

/// Row-wise softmax, max-subtracted.
template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

template <typename T>
struct CellGrad {
  Matrix<T> d_h_prev;
  Matrix<T> d_c_prev;
};

/// Backpropagates one timestep. Parameter gradients are added into `grads`,
/// which must have the layout of `params`.
template <typename T>
CellGrad<T> cell_backward(const CellParams<T>& params, GateActivations acts,
                          const ForwardTapeEntry<T>& entry, const Matrix<T>& d_h,
                          const Matrix<T>& d_c, CellParams<T>& grads);

/// Adds the gradients of the whole sequence into `grads`.
template <typename T>
void bptt_accumulate(const Network<T>& net, GateActivations acts,
                     const ForwardTape<T>& tape, const Matrix<T>& dlogits,
                     GradBundle<T>& grads);

template <typename T>
GradBundle<T> bptt(const Network<T>& net, GateActivations acts,
                   const ForwardTape<T>& tape, const Matrix<T>& dlogits);

struct GradCheckOptions {
  VariantKind variant = VariantKind::BaseLSTM;
  GateActivations acts{};
  Dims dims{3, 3, 4};
  Index steps = 4;
  Index batch = 2;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  int max_resamples = 200;
};

struct TensorCheck {
  std::string name;
  std::size_t scalars = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t scalars_checked = 0;
  int resamples = 0;
  std::vector<TensorCheck> tensors;
};

/// Builds a random double-precision instance and compares every BPTT
/// gradient entry with (L(+eps) - L(-eps)) / 2eps, the two losses being
/// evaluated in long double so rounding does not swamp small gradients.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8). With
/// relu anywhere, instances whose relu inputs come within 10 * eps of the
/// kink are redrawn.
GradCheckReport finite_difference_check(const GradCheckOptions& options);

}  // namespace slstm

#endif  // SLSTM_GRAD_HPP
