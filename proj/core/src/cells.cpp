// SPDX-License-Identifier: Apache-2.0

#include "slstm/cells.hpp"

#include <cmath>
#include <sstream>

#include "slstm/rng.hpp"

namespace slstm {

namespace {

constexpr std::array<std::string_view, kSlotCount> kSlotNames = {
    "W_i", "U_i", "u_i", "b_i", "W_f", "U_f", "u_f", "b_f", "W_o",
    "U_o", "u_o", "b_o", "W_c", "U_c", "u_c", "b_c", "W_hy", "b_y"};

TensorSpec matrix_spec(Slot s, Index rows, Index cols) {
  return {s, rows, cols, false};
}
TensorSpec vector_spec(Slot s, Index n) { return {s, 1, n, true}; }

std::string divergence_message(Index step, long epoch) {
  std::ostringstream os;
  os << "non-finite value in forward pass at step " << step;
  if (epoch >= 0) os << " (epoch " << epoch << ")";
  return os.str();
}

template <typename T>
void fill_uniform(Matrix<T>& m, double limit, Rng& rng) {
  for (Index k = 0; k < m.size(); ++k) {
    m.data()[k] = static_cast<T>(rng.uniform(-limit, limit));
  }
}

double glorot_limit(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

std::string_view to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::BaseLSTM:
      return "lstm";
    case VariantKind::LSTM6:
      return "lstm6";
    case VariantKind::LSTM10:
      return "lstm10";
    case VariantKind::LSTM11:
      return "lstm11";
  }
  return "?";
}

VariantKind parse_variant(std::string_view name) {
  for (auto kind : kAllVariants) {
    if (name == to_string(kind)) return kind;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected lstm, lstm6, lstm10 or lstm11)");
}

std::string_view slot_name(Slot slot) {
  return kSlotNames.at(static_cast<std::size_t>(slot));
}

std::vector<TensorSpec> cell_layout(VariantKind kind, Index input, Index hidden) {
  const Index h = hidden;
  switch (kind) {
    case VariantKind::BaseLSTM:
      return {matrix_spec(Slot::W_i, h, input), matrix_spec(Slot::U_i, h, h),
              vector_spec(Slot::b_i, h),        matrix_spec(Slot::W_f, h, input),
              matrix_spec(Slot::U_f, h, h),     vector_spec(Slot::b_f, h),
              matrix_spec(Slot::W_o, h, input), matrix_spec(Slot::U_o, h, h),
              vector_spec(Slot::b_o, h),        matrix_spec(Slot::W_c, h, input),
              matrix_spec(Slot::U_c, h, h),     vector_spec(Slot::b_c, h)};
    case VariantKind::LSTM6:
      return {matrix_spec(Slot::W_c, h, input), matrix_spec(Slot::U_c, h, h),
              vector_spec(Slot::b_c, h)};
    case VariantKind::LSTM10:
      return {vector_spec(Slot::u_i, h),        vector_spec(Slot::u_f, h),
              vector_spec(Slot::u_o, h),        matrix_spec(Slot::W_c, h, input),
              vector_spec(Slot::u_c, h),        vector_spec(Slot::b_c, h)};
    case VariantKind::LSTM11:
      return {vector_spec(Slot::u_i, h), vector_spec(Slot::b_i, h),
              vector_spec(Slot::u_f, h), vector_spec(Slot::b_f, h),
              vector_spec(Slot::u_o, h), vector_spec(Slot::b_o, h),
              matrix_spec(Slot::W_c, h, input), vector_spec(Slot::u_c, h),
              vector_spec(Slot::b_c, h)};
  }
  throw std::logic_error("unknown variant");
}

std::vector<TensorSpec> head_layout(Index hidden, Index out) {
  return {matrix_spec(Slot::W_hy, out, hidden), vector_spec(Slot::b_y, out)};
}

template <typename T>
TensorBundle<T>::TensorBundle(std::vector<TensorSpec> specs)
    : specs_(std::move(specs)) {
  index_.fill(-1);
  tensors_.reserve(specs_.size());
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    const auto& s = specs_[k];
    index_[static_cast<std::size_t>(s.slot)] = static_cast<int>(k);
    tensors_.push_back(Matrix<T>::Zero(s.rows, s.cols));
  }
}

template <typename T>
Matrix<T>& TensorBundle<T>::operator[](Slot slot) {
  const int k = index_[static_cast<std::size_t>(slot)];
  if (k < 0) {
    throw std::out_of_range("tensor " + std::string(slot_name(slot)) +
                            " is not part of this bundle");
  }
  return tensors_[static_cast<std::size_t>(k)];
}

template <typename T>
const Matrix<T>& TensorBundle<T>::operator[](Slot slot) const {
  return const_cast<TensorBundle&>(*this)[slot];
}

template <typename T>
std::size_t TensorBundle<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename T>
void TensorBundle<T>::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

template <typename T>
CellParams<T>::CellParams(VariantKind kind, Index input, Index hidden,
                          Lstm6Gates gates)
    : TensorBundle<T>(cell_layout(kind, input, hidden)),
      variant_(kind),
      input_(input),
      hidden_(hidden),
      gates_(gates) {
  if (input < 1 || hidden < 1) {
    throw std::invalid_argument("cell dimensions must be >= 1");
  }
  if (!(std::abs(gates.forget) < 1.0)) {
    throw std::invalid_argument("LSTM6 forget constant must satisfy |f| < 1");
  }
}

template <typename T>
OutputHead<T>::OutputHead(Index hidden, Index out)
    : TensorBundle<T>(head_layout(hidden, out)), hidden_(hidden), out_(out) {
  if (hidden < 1 || out < 1) {
    throw std::invalid_argument("head dimensions must be >= 1");
  }
}

template <typename T>
Network<T> Network<T>::zeros_like() const {
  Network z{CellParams<T>(cell.variant(), cell.input_dim(), cell.hidden_dim(),
                          cell.gates()),
            OutputHead<T>(head.hidden_dim(), head.out_dim())};
  return z;
}

DivergenceError::DivergenceError(Index step, long epoch)
    : std::runtime_error(divergence_message(step, epoch)),
      step_(step),
      epoch_(epoch) {}

template <typename T>
CellParams<T> init_params(VariantKind kind, Index input, Index hidden,
                          std::uint64_t seed) {
  CellParams<T> params(kind, input, hidden);
  Rng rng(derive_seed(seed, 0x63656c6c));  // "cell"
  const double u_limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& spec = params.specs()[k];
    auto& t = params.tensors()[k];
    switch (spec.slot) {
      case Slot::W_i: case Slot::W_f: case Slot::W_o: case Slot::W_c:
        fill_uniform(t, glorot_limit(input, hidden), rng);
        break;
      case Slot::U_i: case Slot::U_f: case Slot::U_o: case Slot::U_c:
        fill_uniform(t, glorot_limit(hidden, hidden), rng);
        break;
      case Slot::u_i: case Slot::u_f: case Slot::u_o: case Slot::u_c:
        fill_uniform(t, u_limit, rng);
        break;
      default:
        t.setZero();
        break;
    }
  }
  return params;
}

template <typename T>
OutputHead<T> init_head(Index hidden, Index out, std::uint64_t seed) {
  OutputHead<T> head(hidden, out);
  Rng rng(derive_seed(seed, 0x68656164));  // "head"
  fill_uniform(head[Slot::W_hy], glorot_limit(hidden, out), rng);
  head[Slot::b_y].setZero();
  return head;
}

template <typename T>
Network<T> init_network(VariantKind kind, const Dims& dims, std::uint64_t seed) {
  return {init_params<T>(kind, dims.input, dims.hidden, seed),
          init_head<T>(dims.hidden, dims.out, seed)};
}

template <typename T>
CellStep<T> cell_forward(const CellParams<T>& p, GateActivations acts,
                         const Matrix<T>& x, const CellState<T>& prev,
                         Index step, bool check_finite) {
  if (x.cols() != p.input_dim()) {
    throw ShapeError("cell_forward input", x.rows(), x.cols(), x.rows(),
                     p.input_dim());
  }
  if (prev.h.rows() != x.rows() || prev.h.cols() != p.hidden_dim() ||
      prev.c.rows() != prev.h.rows() || prev.c.cols() != prev.h.cols()) {
    throw ShapeError("cell_forward state", prev.h.rows(), prev.h.cols(),
                     x.rows(), p.hidden_dim());
  }

  CellStep<T> out;
  auto& e = out.tape;
  e.x = x;
  e.h_prev = prev.h;
  e.c_prev = prev.c;
  const auto kind = p.variant();

  auto full_gate = [&](Slot w, Slot u, Slot b) {
    Matrix<T> z = matmul_nt(x, p[w]);
    matmul_nt_acc(prev.h, p[u], z);
    add_row(z, p[b]);
    return z;
  };
  auto pointwise_gate = [&](Slot u, Slot b, bool with_bias) {
    Matrix<T> z = hadamard_rows(prev.h, p[u]);
    if (with_bias) add_row(z, p[b]);
    return z;
  };

  switch (kind) {
    case VariantKind::BaseLSTM:
      e.i_pre = full_gate(Slot::W_i, Slot::U_i, Slot::b_i);
      e.f_pre = full_gate(Slot::W_f, Slot::U_f, Slot::b_f);
      e.o_pre = full_gate(Slot::W_o, Slot::U_o, Slot::b_o);
      break;
    case VariantKind::LSTM10:
    case VariantKind::LSTM11: {
      const bool bias = kind == VariantKind::LSTM11;
      e.i_pre = pointwise_gate(Slot::u_i, Slot::b_i, bias);
      e.f_pre = pointwise_gate(Slot::u_f, Slot::b_f, bias);
      e.o_pre = pointwise_gate(Slot::u_o, Slot::b_o, bias);
      break;
    }
    case VariantKind::LSTM6:
      break;
  }

  e.cand_pre = matmul_nt(x, p[Slot::W_c]);
  if (p.has(Slot::U_c)) {
    matmul_nt_acc(prev.h, p[Slot::U_c], e.cand_pre);
  } else {
    e.cand_pre += hadamard_rows(prev.h, p[Slot::u_c]);
  }
  add_row(e.cand_pre, p[Slot::b_c]);
  e.cand = apply_activation(acts.body, e.cand_pre);

  if (kind == VariantKind::LSTM6) {
    const auto& g = p.gates();
    e.c = T(g.forget) * prev.c + T(g.input) * e.cand;
    e.c_act = apply_activation(acts.body, e.c);
    e.h = T(g.output) * e.c_act;
  } else {
    e.i = apply_activation(acts.gate, e.i_pre);
    e.f = apply_activation(acts.gate, e.f_pre);
    e.o = apply_activation(acts.gate, e.o_pre);
    e.c = e.f.cwiseProduct(prev.c) + e.i.cwiseProduct(e.cand);
    e.c_act = apply_activation(acts.body, e.c);
    e.h = e.o.cwiseProduct(e.c_act);
  }

  if (check_finite && !(all_finite(e.c) && all_finite(e.h))) {
    throw DivergenceError(step);
  }
  out.next = {e.h, e.c};
  return out;
}

template <typename T>
SequenceOutput<T> sequence_forward(const Network<T>& net, GateActivations acts,
                                   std::span<const Matrix<T>> xs,
                                   bool check_finite) {
  if (xs.empty()) {
    throw std::invalid_argument("sequence_forward: empty sequence");
  }
  const Index batch = xs.front().rows();
  SequenceOutput<T> out;
  out.tape.steps.reserve(xs.size());
  auto state = CellState<T>::zeros(batch, net.cell.hidden_dim());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto step = cell_forward(net.cell, acts, xs[t], state,
                             static_cast<Index>(t), check_finite);
    state = std::move(step.next);
    out.tape.steps.push_back(std::move(step.tape));
  }
  out.logits = matmul_nt(state.h, net.head[Slot::W_hy]);
  add_row(out.logits, net.head[Slot::b_y]);
  return out;
}

std::size_t param_count(VariantKind kind, Index input, Index hidden, Index out) {
  const auto i = static_cast<std::size_t>(input);
  const auto h = static_cast<std::size_t>(hidden);
  const auto o = static_cast<std::size_t>(out);
  const std::size_t head = h * o + o;
  const std::size_t dense_block = h * (i + h) + h;
  switch (kind) {
    case VariantKind::BaseLSTM:
      return 4 * dense_block + head;
    case VariantKind::LSTM6:
      return dense_block + head;
    case VariantKind::LSTM10:
      return 3 * h + h * i + h + h + head;
    case VariantKind::LSTM11:
      return 3 * h + h * i + h + h + 3 * h + head;
  }
  return 0;
}

#define SLSTM_INSTANTIATE_CELLS(T)                                            \
  template class TensorBundle<T>;                                             \
  template class CellParams<T>;                                               \
  template class OutputHead<T>;                                               \
  template struct Network<T>;                                                 \
  template CellParams<T> init_params<T>(VariantKind, Index, Index,            \
                                        std::uint64_t);                       \
  template OutputHead<T> init_head<T>(Index, Index, std::uint64_t);           \
  template Network<T> init_network<T>(VariantKind, const Dims&,               \
                                      std::uint64_t);                         \
  template CellStep<T> cell_forward(const CellParams<T>&, GateActivations,    \
                                    const Matrix<T>&, const CellState<T>&,    \
                                    Index, bool);                             \
  template SequenceOutput<T> sequence_forward(                                \
      const Network<T>&, GateActivations, std::span<const Matrix<T>>, bool);

SLSTM_INSTANTIATE_CELLS(float)
SLSTM_INSTANTIATE_CELLS(double)
// Extended precision is only used by the finite-difference reference.
SLSTM_INSTANTIATE_CELLS(long double)

#undef SLSTM_INSTANTIATE_CELLS

}  // namespace slstm
