#ifndef TDPFED_TENSOR_HPP_
#define TDPFED_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tdpfed {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

/**
 * Dense row-major matrix of doubles.
 *
 * Holds factor matrices, unfoldings, Gram products and mini-batches.
 */
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transpose() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/**
 * N-mode dense tensor, row-major (last index fastest).
 */
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Shape shape, double fill = 0.0);
  DenseTensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::size_t extent(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& at(std::span<const std::size_t> index);
  double at(std::span<const std::size_t> index) const;

  bool operator==(const DenseTensor&) const = default;

 private:
  std::size_t offset(std::span<const std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/**
 * CP factors of a tensor: factors[n] is I_n x R.
 */
struct KruskalFactors {
  std::vector<Matrix> factors;

  KruskalFactors() = default;
  explicit KruskalFactors(std::vector<Matrix> f);

  std::size_t order() const { return factors.size(); }
  std::size_t rank() const { return factors.empty() ? 0 : factors.front().cols(); }
  Shape target_shape() const;
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument if ranks disagree or a factor is empty.
  void validate() const;

  bool operator==(const KruskalFactors&) const = default;
};

// Mode indices are zero-based throughout: mode 0 is the first mode.

/**
 * Mode-n unfolding X_(n), I_n rows by prod_{m != n} I_m columns.
 *
 * Column order: the remaining indices are linearized with the lowest
 * remaining mode varying fastest, i.e. column = sum_{m != n} i_m * J_m with
 * J_m = prod_{k < m, k != n} I_k. With this order
 * X_(n) = A^(n) (A^(N) kr ... kr A^(n+1) kr A^(n-1) kr ... kr A^(1))^T
 * holds for CP tensors.
 */
Matrix unfold(const DenseTensor& t, std::size_t mode);

/// Inverse of unfold.
DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

Matrix khatri_rao(const Matrix& a, const Matrix& b);
Matrix kronecker(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Y = T x_n U, so that Y_(n) = U T_(n).
DenseTensor mode_n_product(const DenseTensor& t, const Matrix& u, std::size_t mode);

double inner_product(const DenseTensor& a, const DenseTensor& b);
double frobenius_norm(const DenseTensor& t);

/// A^(N) kr ... kr A^(n+1) kr A^(n-1) kr ... kr A^(1).
Matrix khatri_rao_except(const KruskalFactors& f, std::size_t mode);

/// Hadamard product of the Gram matrices A^(m)^T A^(m) over m != mode.
Matrix gram_hadamard_except(const KruskalFactors& f, std::size_t mode);

DenseTensor kruskal_reconstruct(const KruskalFactors& f);

/// Mode-n unfolding of the reconstruction, computed from the factors.
Matrix kruskal_unfold(const KruskalFactors& f, std::size_t mode);

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues below
/// cutoff * max|eigenvalue| are dropped.
Matrix pinv_symmetric(const Matrix& m, double cutoff = 1e-12);

struct CpAlsResult {
  KruskalFactors factors;
  /// Relative reconstruction error ||t - [[A]]|| / ||t|| after each iteration.
  std::vector<double> errors;
};

/**
 * Alternating least squares CP fit with seeded uniform(-0.5, 0.5) init.
 */
CpAlsResult cp_als(const DenseTensor& t, std::size_t rank, std::size_t iters, std::uint64_t seed);

}  // namespace tdpfed

#endif  // TDPFED_TENSOR_HPP_
