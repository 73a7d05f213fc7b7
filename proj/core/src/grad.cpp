// SPDX-License-Identifier: Apache-2.0

#include "slstm/grad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "slstm/rng.hpp"

namespace slstm {

namespace {

// tanh and sigmoid differentiate through their output, relu through its input.
template <typename T>
Matrix<T> local_derivative(Activation kind, const Matrix<T>& pre,
                           const Matrix<T>& post) {
  return activation_derivative(kind, kind == Activation::Relu ? pre : post);
}

template <typename T>
void require_shape(const char* what, const Matrix<T>& m, Index rows, Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what, m.rows(), m.cols(), rows, cols);
  }
}

// Gradient wrt a gate pre-activation, routed into the gate's parameters.
template <typename T>
void gate_backward(const CellParams<T>& p, const ForwardTapeEntry<T>& e,
                   const Matrix<T>& dz, Slot w, Slot u_mat, Slot u_vec,
                   Slot b, CellParams<T>& g, Matrix<T>& d_h_prev) {
  if (p.has(w)) {
    matmul_tn_acc(dz, e.x, g[w]);
  }
  if (p.has(u_mat)) {
    matmul_tn_acc(dz, e.h_prev, g[u_mat]);
    matmul_nn_acc(dz, p[u_mat], d_h_prev);
  } else {
    add_col_sums(hadamard(dz, e.h_prev), g[u_vec]);
    d_h_prev += hadamard_rows(dz, p[u_vec]);
  }
  if (p.has(b)) {
    add_col_sums(dz, g[b]);
  }
}

}  // namespace

template <typename T>
LossAndGrad<T> softmax_xent(const Vector<T>& logits, Index target) {
  if (target < 0 || target >= logits.size()) {
    throw std::out_of_range("softmax_xent: target class out of range");
  }
  Matrix<T> row = logits.transpose();
  const int t = static_cast<int>(target);
  auto batch = softmax_xent<T>(row, std::span<const int>(&t, 1));
  return {batch.loss, batch.dlogits.row(0).transpose()};
}

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

template <typename T>
BatchLoss<T> softmax_xent(const Matrix<T>& logits, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("softmax_xent targets", logits.rows(), logits.cols(),
                     static_cast<Index>(targets.size()), 1);
  }
  const Index n = logits.rows();
  BatchLoss<T> out{0.0, Matrix<T>(n, logits.cols())};
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= logits.cols()) {
      throw std::out_of_range("softmax_xent: target class out of range");
    }
    const double m = static_cast<double>(logits.row(r).maxCoeff());
    double sum = 0.0;
    for (Index k = 0; k < logits.cols(); ++k) {
      sum += std::exp(static_cast<double>(logits(r, k)) - m);
    }
    const double log_z = m + std::log(sum);
    total += log_z - static_cast<double>(logits(r, target));
    for (Index k = 0; k < logits.cols(); ++k) {
      const double prob = std::exp(static_cast<double>(logits(r, k)) - log_z);
      out.dlogits(r, k) = static_cast<T>((prob - (k == target ? 1.0 : 0.0)) /
                                         static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

template <typename T>
CellGrad<T> cell_backward(const CellParams<T>& p, GateActivations acts,
                          const ForwardTapeEntry<T>& e, const Matrix<T>& d_h,
                          const Matrix<T>& d_c, CellParams<T>& g) {
  const Index batch = e.x.rows();
  const Index hidden = p.hidden_dim();
  require_shape("cell_backward d_h", d_h, batch, hidden);
  require_shape("cell_backward d_c", d_c, batch, hidden);
  if (g.variant() != p.variant() || g.hidden_dim() != hidden ||
      g.input_dim() != p.input_dim()) {
    throw ShapeError("cell_backward grads", g.hidden_dim(), g.input_dim(),
                     hidden, p.input_dim());
  }

  CellGrad<T> out;
  out.d_h_prev = Matrix<T>::Zero(batch, hidden);
  const Matrix<T> c_deriv = local_derivative(acts.body, e.c, e.c_act);

  Matrix<T> d_cand;
  if (p.variant() == VariantKind::LSTM6) {
    const auto& k = p.gates();
    const Matrix<T> d_c_total =
        d_c + (T(k.output) * d_h).cwiseProduct(c_deriv);
    d_cand = T(k.input) * d_c_total;
    out.d_c_prev = T(k.forget) * d_c_total;
  } else {
    const Matrix<T> d_c_total = d_c + d_h.cwiseProduct(e.o).cwiseProduct(c_deriv);
    d_cand = d_c_total.cwiseProduct(e.i);
    out.d_c_prev = d_c_total.cwiseProduct(e.f);

    const Matrix<T> dz_i = d_c_total.cwiseProduct(e.cand).cwiseProduct(
        local_derivative(acts.gate, e.i_pre, e.i));
    const Matrix<T> dz_f = d_c_total.cwiseProduct(e.c_prev).cwiseProduct(
        local_derivative(acts.gate, e.f_pre, e.f));
    const Matrix<T> dz_o = d_h.cwiseProduct(e.c_act).cwiseProduct(
        local_derivative(acts.gate, e.o_pre, e.o));
    gate_backward(p, e, dz_i, Slot::W_i, Slot::U_i, Slot::u_i, Slot::b_i, g,
                  out.d_h_prev);
    gate_backward(p, e, dz_f, Slot::W_f, Slot::U_f, Slot::u_f, Slot::b_f, g,
                  out.d_h_prev);
    gate_backward(p, e, dz_o, Slot::W_o, Slot::U_o, Slot::u_o, Slot::b_o, g,
                  out.d_h_prev);
  }

  const Matrix<T> dz_c =
      d_cand.cwiseProduct(local_derivative(acts.body, e.cand_pre, e.cand));
  gate_backward(p, e, dz_c, Slot::W_c, Slot::U_c, Slot::u_c, Slot::b_c, g,
                out.d_h_prev);
  return out;
}

template <typename T>
void bptt_accumulate(const Network<T>& net, GateActivations acts,
                     const ForwardTape<T>& tape, const Matrix<T>& dlogits,
                     GradBundle<T>& grads) {
  if (tape.steps.empty()) {
    throw std::invalid_argument("bptt: empty tape");
  }
  const auto& last = tape.steps.back();
  require_shape("bptt dlogits", dlogits, last.h.rows(), net.head.out_dim());

  matmul_tn_acc(dlogits, last.h, grads.head[Slot::W_hy]);
  add_col_sums(dlogits, grads.head[Slot::b_y]);

  Matrix<T> d_h = Matrix<T>::Zero(last.h.rows(), last.h.cols());
  matmul_nn_acc(dlogits, net.head[Slot::W_hy], d_h);
  Matrix<T> d_c = Matrix<T>::Zero(last.h.rows(), last.h.cols());
  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
    auto step = cell_backward(net.cell, acts, *it, d_h, d_c, grads.cell);
    d_h = std::move(step.d_h_prev);
    d_c = std::move(step.d_c_prev);
  }
}

template <typename T>
GradBundle<T> bptt(const Network<T>& net, GateActivations acts,
                   const ForwardTape<T>& tape, const Matrix<T>& dlogits) {
  auto grads = net.zeros_like();
  bptt_accumulate(net, acts, tape, dlogits, grads);
  return grads;
}

namespace {

struct Instance {
  Network<double> net;
  std::vector<Matrix<double>> xs;
  std::vector<int> targets;
};

Instance draw_instance(const GradCheckOptions& o, std::uint64_t seed) {
  Rng rng(seed);
  Instance inst{init_network<double>(o.variant, o.dims, seed), {}, {}};
  // Matrices are scaled by fan-in so relu states cannot blow up over the
  // sequence; a saturated softmax leaves gradients below the error floor.
  inst.net.for_each_tensor([&](const TensorSpec& spec, Matrix<double>& t) {
    const double scale =
        spec.is_vector ? 0.8 : 1.0 / std::sqrt(static_cast<double>(spec.cols));
    for (Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(-scale, scale);
  });
  for (Index s = 0; s < o.steps; ++s) {
    Matrix<double> x(o.batch, o.dims.input);
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform(-1.0, 1.0);
    inst.xs.push_back(std::move(x));
  }
  for (Index b = 0; b < o.batch; ++b) {
    inst.targets.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(o.dims.out))));
  }
  return inst;
}

bool near_kink(const Matrix<double>& pre, double band) {
  for (Index k = 0; k < pre.size(); ++k) {
    const double v = std::abs(pre.data()[k]);
    if (v > 0.0 && v < band) return true;
  }
  return false;
}

// Inputs to relu that sit exactly on zero are structural (a zero state fed by
// a dead candidate) and stay there under small perturbations.
bool touches_kink(const Instance& inst, const GradCheckOptions& o) {
  const auto out = sequence_forward<double>(inst.net, o.acts, inst.xs, false);
  const double band = 10.0 * o.epsilon;
  for (const auto& e : out.tape.steps) {
    if (o.acts.body == Activation::Relu &&
        (near_kink(e.cand_pre, band) || near_kink(e.c, band))) {
      return true;
    }
    if (o.acts.gate == Activation::Relu && o.variant != VariantKind::LSTM6 &&
        (near_kink(e.i_pre, band) || near_kink(e.f_pre, band) ||
         near_kink(e.o_pre, band))) {
      return true;
    }
  }
  return false;
}

// The reference losses are evaluated in long double. In double, rounding of
// L alone puts ~1e-11 of noise on (L+ - L-) / 2eps, which exceeds the
// tolerance for the small gradients of nearly dead relu units.
using Wide = long double;

Network<Wide> widen(const Network<double>& net) {
  Network<Wide> wide{CellParams<Wide>(net.variant(), net.cell.input_dim(), net.cell.hidden_dim(),
                                      net.cell.gates()),
                     OutputHead<Wide>(net.head.hidden_dim(), net.head.out_dim())};
  std::vector<const Matrix<double>*> src;
  net.for_each_tensor([&](const TensorSpec&, const Matrix<double>& t) { src.push_back(&t); });
  std::size_t k = 0;
  wide.for_each_tensor(
      [&](const TensorSpec&, Matrix<Wide>& t) { t = src[k++]->cast<Wide>(); });
  return wide;
}

Wide wide_loss(const Network<Wide>& net, const std::vector<Matrix<Wide>>& xs,
               const std::vector<int>& targets, const GradCheckOptions& o) {
  const auto out = sequence_forward<Wide>(net, o.acts, xs, false);
  Wide total = 0;
  for (Index r = 0; r < out.logits.rows(); ++r) {
    const Wide m = out.logits.row(r).maxCoeff();
    Wide sum = 0;
    for (Index k = 0; k < out.logits.cols(); ++k) sum += std::exp(out.logits(r, k) - m);
    total += m + std::log(sum) - out.logits(r, targets[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<Wide>(out.logits.rows());
}

}  // namespace

GradCheckReport finite_difference_check(const GradCheckOptions& o) {
  const bool uses_relu =
      o.acts.body == Activation::Relu || o.acts.gate == Activation::Relu;
  GradCheckReport report;
  Instance inst = draw_instance(o, derive_seed(o.seed, 0));
  while (uses_relu && touches_kink(inst, o) && report.resamples < o.max_resamples) {
    ++report.resamples;
    inst = draw_instance(o, derive_seed(o.seed, static_cast<std::uint64_t>(report.resamples)));
  }

  const auto fwd = sequence_forward<double>(inst.net, o.acts, inst.xs, false);
  const auto loss = softmax_xent<double>(fwd.logits, inst.targets);
  const auto grads = bptt<double>(inst.net, o.acts, fwd.tape, loss.dlogits);

  std::vector<const Matrix<double>*> analytic;
  grads.for_each_tensor(
      [&](const TensorSpec&, const Matrix<double>& t) { analytic.push_back(&t); });

  auto wide = widen(inst.net);
  std::vector<Matrix<Wide>> wide_xs;
  for (const auto& x : inst.xs) wide_xs.push_back(x.cast<Wide>());
  const Wide eps = static_cast<Wide>(o.epsilon);

  std::size_t k = 0;
  wide.for_each_tensor([&](const TensorSpec& spec, Matrix<Wide>& param) {
    TensorCheck tc{std::string(spec.name()), static_cast<std::size_t>(param.size()), 0.0};
    const Matrix<double>& ga = *analytic[k++];
    for (Index j = 0; j < param.size(); ++j) {
      const Wide saved = param.data()[j];
      param.data()[j] = saved + eps;
      const Wide up = wide_loss(wide, wide_xs, inst.targets, o);
      param.data()[j] = saved - eps;
      const Wide down = wide_loss(wide, wide_xs, inst.targets, o);
      param.data()[j] = saved;
      const double numeric = static_cast<double>((up - down) / (2 * eps));
      const double a = ga.data()[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      tc.max_rel_err = std::max(tc.max_rel_err, std::abs(a - numeric) / denom);
    }
    report.scalars_checked += tc.scalars;
    if (report.worst_param.empty() || tc.max_rel_err > report.max_rel_err) {
      report.worst_param = tc.name;
      report.max_rel_err = tc.max_rel_err;
    }
    report.tensors.push_back(std::move(tc));
  });
  return report;
}

#define SLSTM_INSTANTIATE_GRAD(T)                                              \
  template LossAndGrad<T> softmax_xent(const Vector<T>&, Index);               \
  template BatchLoss<T> softmax_xent(const Matrix<T>&, std::span<const int>);  \
  template Matrix<T> softmax(const Matrix<T>&);                                \
  template CellGrad<T> cell_backward(const CellParams<T>&, GateActivations,    \
                                     const ForwardTapeEntry<T>&,               \
                                     const Matrix<T>&, const Matrix<T>&,       \
                                     CellParams<T>&);                          \
  template void bptt_accumulate(const Network<T>&, GateActivations,            \
                                const ForwardTape<T>&, const Matrix<T>&,       \
                                GradBundle<T>&);                               \
  template GradBundle<T> bptt(const Network<T>&, GateActivations,              \
                              const ForwardTape<T>&, const Matrix<T>&);

SLSTM_INSTANTIATE_GRAD(float)
SLSTM_INSTANTIATE_GRAD(double)

#undef SLSTM_INSTANTIATE_GRAD

}  // namespace slstm
