// SPDX-License-Identifier: Apache-2.0
//
// Dense kernel layer. Every weight, activation and gradient in the library is
// one of the two types below. Batched code keeps one sample per matrix row.

#ifndef SLSTM_TENSOR_HPP
#define SLSTM_TENSOR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace slstm {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Row vector used for per-feature broadcasts over a batch.
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, Eigen::Index lhs_rows, Eigen::Index lhs_cols,
             Eigen::Index rhs_rows, Eigen::Index rhs_cols);
};

enum class Activation { Tanh, Sigmoid, Relu };

std::string_view to_string(Activation kind);
/// Accepts "tanh", "sigmoid" and "relu"; throws std::invalid_argument otherwise.
Activation parse_activation(std::string_view name);

template <typename T>
Vector<T> matvec(const Matrix<T>& a, const Vector<T>& x);

template <typename T>
Vector<T> hadamard(const Vector<T>& a, const Vector<T>& b);

template <typename T>
Vector<T> apply_activation(Activation kind, const Vector<T>& x);

/// Tanh and Sigmoid take the forward output y; Relu takes the forward input x.
/// The Relu derivative at exactly zero is zero.
template <typename T>
Vector<T> activation_derivative(Activation kind, const Vector<T>& y_or_x);

// Batched kernels used by the cells. Shapes are checked; all results are
// freshly allocated or accumulated in place as named.

/// out = a * w^T, i.e. every row of `a` mapped through w (rows x cols).
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& w);

/// out += a * w^T
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& w, Matrix<T>& out);

/// out += a * b
template <typename T>
void matmul_nn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

/// out += a^T * b
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

/// Row-wise Hadamard product with a 1 x n row: out[r, j] = m[r, j] * row[j].
template <typename T>
Matrix<T> hadamard_rows(const Matrix<T>& m, const Matrix<T>& row);

template <typename T>
void add_row(Matrix<T>& m, const Matrix<T>& row);

/// Adds the column sums of m into the 1 x n row.
template <typename T>
void add_col_sums(const Matrix<T>& m, Matrix<T>& row);

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> apply_activation(Activation kind, const Matrix<T>& x);

template <typename T>
Matrix<T> activation_derivative(Activation kind, const Matrix<T>& y_or_x);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

}  // namespace slstm

#endif  // SLSTM_TENSOR_HPP
