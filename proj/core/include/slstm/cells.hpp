// SPDX-License-Identifier: Apache-2.0
//
// The four recurrent cells and their parameter bundles.
//
//   BaseLSTM  gates  g = s_in(W_g x + U_g h + b_g)          g in {i, f, o}
//             cand   = s(W_c x + U_c h + b_c)
//   LSTM6     gates are the constants i = 1, f = 0.59, o = 1
//             cand   = s(W_c x + U_c h + b_c)
//   LSTM10    gates  g = s_in(u_g * h)                       (* is Hadamard)
//             cand   = s(W_c x + u_c * h + b_c)
//   LSTM11    gates  g = s_in(u_g * h + b_g)
//             cand   = s(W_c x + u_c * h + b_c)
//
// and for every variant
//             c_t = f * c_{t-1} + i * cand,   h_t = o * s(c_t).
//
// Everything is batched: x, h and c carry one sample per row.

#ifndef SLSTM_CELLS_HPP
#define SLSTM_CELLS_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slstm/tensor.hpp"

namespace slstm {

enum class VariantKind { BaseLSTM, LSTM6, LSTM10, LSTM11 };

inline constexpr std::array<VariantKind, 4> kAllVariants = {
    VariantKind::BaseLSTM, VariantKind::LSTM6, VariantKind::LSTM10,
    VariantKind::LSTM11};

/// "lstm", "lstm6", "lstm10", "lstm11"
std::string_view to_string(VariantKind kind);
VariantKind parse_variant(std::string_view name);

/// Fixed gate values of LSTM6. The forget constant must stay below one in
/// magnitude, otherwise the cell state is not bounded.
struct Lstm6Gates {
  double input = 1.0;
  double forget = 0.59;
  double output = 1.0;
};

inline constexpr Lstm6Gates kLstm6Gates{};

struct Dims {
  Index input = 28;
  Index hidden = 100;
  Index out = 10;
};

enum class Slot : std::uint8_t {
  W_i, U_i, u_i, b_i,
  W_f, U_f, u_f, b_f,
  W_o, U_o, u_o, b_o,
  W_c, U_c, u_c, b_c,
  W_hy, b_y,
  Count
};

inline constexpr std::size_t kSlotCount = static_cast<std::size_t>(Slot::Count);

std::string_view slot_name(Slot slot);

struct TensorSpec {
  Slot slot;
  Index rows;
  Index cols;
  /// Vectors are stored as a single row (1 x n) so they broadcast over batches.
  bool is_vector;
  std::string_view name() const { return slot_name(slot); }
  Index size() const { return rows * cols; }
};

/// Tensors of a cell in declaration order.
std::vector<TensorSpec> cell_layout(VariantKind kind, Index input, Index hidden);
std::vector<TensorSpec> head_layout(Index hidden, Index out);

/// Named, shaped tensors addressed by slot. Slots absent from the layout do
/// not exist in the bundle at all.
template <typename T>
class TensorBundle {
 public:
  TensorBundle() { index_.fill(-1); }
  explicit TensorBundle(std::vector<TensorSpec> specs);

  bool has(Slot slot) const { return index_[static_cast<std::size_t>(slot)] >= 0; }
  Matrix<T>& operator[](Slot slot);
  const Matrix<T>& operator[](Slot slot) const;

  std::span<const TensorSpec> specs() const { return specs_; }
  std::span<Matrix<T>> tensors() { return tensors_; }
  std::span<const Matrix<T>> tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  /// Total scalars held by the realized tensors.
  std::size_t scalar_count() const;
  void set_zero();

 private:
  std::vector<TensorSpec> specs_;
  std::vector<Matrix<T>> tensors_;
  std::array<int, kSlotCount> index_{};
};

template <typename T>
class CellParams : public TensorBundle<T> {
 public:
  CellParams() = default;
  CellParams(VariantKind kind, Index input, Index hidden,
             Lstm6Gates gates = kLstm6Gates);

  VariantKind variant() const { return variant_; }
  Index input_dim() const { return input_; }
  Index hidden_dim() const { return hidden_; }
  const Lstm6Gates& gates() const { return gates_; }

 private:
  VariantKind variant_ = VariantKind::BaseLSTM;
  Index input_ = 0;
  Index hidden_ = 0;
  Lstm6Gates gates_{};
};

template <typename T>
class OutputHead : public TensorBundle<T> {
 public:
  OutputHead() = default;
  OutputHead(Index hidden, Index out);

  Index hidden_dim() const { return hidden_; }
  Index out_dim() const { return out_; }

 private:
  Index hidden_ = 0;
  Index out_ = 0;
};

/// Cell plus classifier head. Gradients use the same type (GradBundle).
template <typename T>
struct Network {
  CellParams<T> cell;
  OutputHead<T> head;

  Dims dims() const { return {cell.input_dim(), cell.hidden_dim(), head.out_dim()}; }
  VariantKind variant() const { return cell.variant(); }
  std::size_t scalar_count() const { return cell.scalar_count() + head.scalar_count(); }

  /// Same variant and shapes, all zeros.
  Network zeros_like() const;

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for_each_impl(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for_each_impl(*this, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void for_each_impl(Self& self, Fn& fn) {
    for (std::size_t k = 0; k < self.cell.size(); ++k) {
      fn(self.cell.specs()[k], self.cell.tensors()[k]);
    }
    for (std::size_t k = 0; k < self.head.size(); ++k) {
      fn(self.head.specs()[k], self.head.tensors()[k]);
    }
  }
};

template <typename T>
using GradBundle = Network<T>;

/// s_in (gates) and s (candidate and cell output).
struct GateActivations {
  Activation gate = Activation::Sigmoid;
  Activation body = Activation::Tanh;
};

template <typename T>
struct CellState {
  Matrix<T> h;
  Matrix<T> c;

  static CellState zeros(Index batch, Index hidden) {
    return {Matrix<T>::Zero(batch, hidden), Matrix<T>::Zero(batch, hidden)};
  }
};

/// Everything the backward pass needs from one timestep. Gate matrices are
/// empty for LSTM6.
template <typename T>
struct ForwardTapeEntry {
  Matrix<T> x;
  Matrix<T> h_prev;
  Matrix<T> c_prev;
  Matrix<T> i_pre, f_pre, o_pre;
  Matrix<T> i, f, o;
  Matrix<T> cand_pre;
  Matrix<T> cand;
  Matrix<T> c;
  Matrix<T> c_act;
  Matrix<T> h;
};

template <typename T>
struct ForwardTape {
  std::vector<ForwardTapeEntry<T>> steps;
};

/// A non-finite value appeared in the forward pass.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(Index step, long epoch = -1);
  Index step() const { return step_; }
  long epoch() const { return epoch_; }

 private:
  Index step_;
  long epoch_;
};

/// Glorot-uniform W and U matrices, u vectors uniform in +-1/sqrt(hidden),
/// zero biases. Deterministic in `seed`.
template <typename T>
CellParams<T> init_params(VariantKind kind, Index input, Index hidden,
                          std::uint64_t seed);

template <typename T>
OutputHead<T> init_head(Index hidden, Index out, std::uint64_t seed);

template <typename T>
Network<T> init_network(VariantKind kind, const Dims& dims, std::uint64_t seed);

template <typename T>
struct CellStep {
  CellState<T> next;
  ForwardTapeEntry<T> tape;
};

/// One timestep for a batch. `step` is only used to label divergence errors;
/// with check_finite off, non-finite values pass through silently.
template <typename T>
CellStep<T> cell_forward(const CellParams<T>& params, GateActivations acts,
                         const Matrix<T>& x, const CellState<T>& prev,
                         Index step = 0, bool check_finite = true);

template <typename T>
struct SequenceOutput {
  Matrix<T> logits;
  ForwardTape<T> tape;
};

/// Runs the cell over xs from h_0 = c_0 = 0 and applies the head to the last
/// hidden state. Each xs[t] is batch x input.
template <typename T>
SequenceOutput<T> sequence_forward(const Network<T>& net, GateActivations acts,
                                   std::span<const Matrix<T>> xs,
                                   bool check_finite = true);

/// Closed-form number of trainable scalars, output head included.
std::size_t param_count(VariantKind kind, Index input, Index hidden, Index out);

template <typename T>
std::size_t count_actual(const CellParams<T>& params, const OutputHead<T>& head) {
  return params.scalar_count() + head.scalar_count();
}

}  // namespace slstm

#endif  // SLSTM_CELLS_HPP
