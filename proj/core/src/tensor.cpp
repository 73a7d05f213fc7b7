// SPDX-License-Identifier: Apache-2.0

#include "slstm/tensor.hpp"

#include <sstream>

namespace slstm {

namespace {

std::string shape_message(std::string_view op, Eigen::Index lr, Eigen::Index lc,
                          Eigen::Index rr, Eigen::Index rc) {
  std::ostringstream os;
  os << op << ": shape mismatch (" << lr << "x" << lc << ") vs (" << rr << "x"
     << rc << ")";
  return os.str();
}

template <typename A, typename B>
void require_same_shape(std::string_view op, const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(op, a.rows(), a.cols(), b.rows(), b.cols());
  }
}

template <typename Derived>
auto activate(Activation kind, const Eigen::ArrayBase<Derived>& x) {
  using T = typename Derived::Scalar;
  using Plain = typename Derived::PlainObject;
  switch (kind) {
    case Activation::Tanh:
      return Plain(x.tanh());
    case Activation::Sigmoid:
      return Plain(T(1) / (T(1) + (-x).exp()));
    case Activation::Relu:
      return Plain(x.max(T(0)));
  }
  throw std::logic_error("unknown activation");
}

template <typename Derived>
auto derivative(Activation kind, const Eigen::ArrayBase<Derived>& v) {
  using T = typename Derived::Scalar;
  using Plain = typename Derived::PlainObject;
  switch (kind) {
    case Activation::Tanh:
      return Plain(T(1) - v.square());
    case Activation::Sigmoid:
      return Plain(v * (T(1) - v));
    case Activation::Relu:
      return Plain((v > T(0)).select(Plain::Ones(v.rows(), v.cols()), T(0)));
  }
  throw std::logic_error("unknown activation");
}

}  // namespace

ShapeError::ShapeError(std::string_view op, Eigen::Index lhs_rows,
                       Eigen::Index lhs_cols, Eigen::Index rhs_rows,
                       Eigen::Index rhs_cols)
    : std::invalid_argument(
          shape_message(op, lhs_rows, lhs_cols, rhs_rows, rhs_cols)) {}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Relu:
      return "relu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(name) +
                              "' (expected tanh, sigmoid or relu)");
}

template <typename T>
Vector<T> matvec(const Matrix<T>& a, const Vector<T>& x) {
  if (a.cols() != x.rows()) {
    throw ShapeError("matvec", a.rows(), a.cols(), x.rows(), 1);
  }
  return a * x;
}

template <typename T>
Vector<T> hadamard(const Vector<T>& a, const Vector<T>& b) {
  require_same_shape("hadamard", a, b);
  return a.cwiseProduct(b);
}

template <typename T>
Vector<T> apply_activation(Activation kind, const Vector<T>& x) {
  return activate(kind, x.array()).matrix();
}

template <typename T>
Vector<T> activation_derivative(Activation kind, const Vector<T>& y_or_x) {
  return derivative(kind, y_or_x.array()).matrix();
}

template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& w) {
  if (a.cols() != w.cols()) {
    throw ShapeError("matmul_nt", a.rows(), a.cols(), w.rows(), w.cols());
  }
  Matrix<T> out(a.rows(), w.rows());
  out.noalias() = a * w.transpose();
  return out;
}

template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& w, Matrix<T>& out) {
  if (a.cols() != w.cols() || out.rows() != a.rows() ||
      out.cols() != w.rows()) {
    throw ShapeError("matmul_nt_acc", a.rows(), a.cols(), w.rows(), w.cols());
  }
  out.noalias() += a * w.transpose();
}

template <typename T>
void matmul_nn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() ||
      out.cols() != b.cols()) {
    throw ShapeError("matmul_nn_acc", a.rows(), a.cols(), b.rows(), b.cols());
  }
  out.noalias() += a * b;
}

template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() ||
      out.cols() != b.cols()) {
    throw ShapeError("matmul_tn_acc", a.rows(), a.cols(), b.rows(), b.cols());
  }
  out.noalias() += a.transpose() * b;
}

template <typename T>
Matrix<T> hadamard_rows(const Matrix<T>& m, const Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("hadamard_rows", m.rows(), m.cols(), row.rows(),
                     row.cols());
  }
  return (m.array().rowwise() * row.row(0).array()).matrix();
}

template <typename T>
void add_row(Matrix<T>& m, const Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_row", m.rows(), m.cols(), row.rows(), row.cols());
  }
  m.rowwise() += row.row(0);
}

template <typename T>
void add_col_sums(const Matrix<T>& m, Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_col_sums", m.rows(), m.cols(), row.rows(),
                     row.cols());
  }
  row.row(0) += m.colwise().sum();
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape("hadamard", a, b);
  return a.cwiseProduct(b);
}

template <typename T>
Matrix<T> apply_activation(Activation kind, const Matrix<T>& x) {
  return activate(kind, x.array()).matrix();
}

template <typename T>
Matrix<T> activation_derivative(Activation kind, const Matrix<T>& y_or_x) {
  return derivative(kind, y_or_x.array()).matrix();
}

#define SLSTM_INSTANTIATE_TENSOR(T)                                          \
  template Vector<T> matvec(const Matrix<T>&, const Vector<T>&);             \
  template Vector<T> hadamard(const Vector<T>&, const Vector<T>&);           \
  template Vector<T> apply_activation(Activation, const Vector<T>&);         \
  template Vector<T> activation_derivative(Activation, const Vector<T>&);    \
  template Matrix<T> matmul_nt(const Matrix<T>&, const Matrix<T>&);          \
  template void matmul_nt_acc(const Matrix<T>&, const Matrix<T>&,            \
                              Matrix<T>&);                                   \
  template void matmul_nn_acc(const Matrix<T>&, const Matrix<T>&,            \
                              Matrix<T>&);                                   \
  template void matmul_tn_acc(const Matrix<T>&, const Matrix<T>&,            \
                              Matrix<T>&);                                   \
  template Matrix<T> hadamard_rows(const Matrix<T>&, const Matrix<T>&);      \
  template void add_row(Matrix<T>&, const Matrix<T>&);                       \
  template void add_col_sums(const Matrix<T>&, Matrix<T>&);                  \
  template Matrix<T> hadamard(const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> apply_activation(Activation, const Matrix<T>&);         \
  template Matrix<T> activation_derivative(Activation, const Matrix<T>&);

SLSTM_INSTANTIATE_TENSOR(float)
SLSTM_INSTANTIATE_TENSOR(double)
// Extended precision is only used by the finite-difference reference.
SLSTM_INSTANTIATE_TENSOR(long double)

#undef SLSTM_INSTANTIATE_TENSOR

}  // namespace slstm
