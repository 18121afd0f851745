#include "tdpfed/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tdpfed/rng.hpp"

namespace tdpfed {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Matrix& m) { return MapC(m.data().data(), m.rows(), m.cols()); }
Map view(Matrix& m) { return Map(m.data().data(), m.rows(), m.cols()); }

void check_mode(std::size_t mode, std::size_t order) {
  if (mode >= order)
    throw std::out_of_range("mode " + std::to_string(mode) + " out of range for order " +
                            std::to_string(order));
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor must have at least one mode");
  for (auto e : shape)
    if (e == 0) throw std::invalid_argument("tensor extents must be positive");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                " != " + std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                " and " + std::to_string(b.rows()) + " differ");
  Matrix c(a.rows(), b.cols());
  view(c).noalias() = view(a) * view(b);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  view(c).noalias() = view(a) * view(b).transpose();
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: inner dimensions differ");
  Matrix c(a.cols(), b.cols());
  view(c).noalias() = view(a).transpose() * view(b);
  return c;
}

// ---------------------------------------------------------------------------
// DenseTensor

DenseTensor::DenseTensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " != product of extents " + std::to_string(shape_size(shape_)));
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::invalid_argument("index order mismatch");
  std::size_t off = 0;
  for (std::size_t n = 0; n < shape_.size(); ++n) {
    if (index[n] >= shape_[n]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[n] + index[n];
  }
  return off;
}

double& DenseTensor::at(std::span<const std::size_t> index) { return data_[offset(index)]; }
double DenseTensor::at(std::span<const std::size_t> index) const { return data_[offset(index)]; }

// ---------------------------------------------------------------------------
// KruskalFactors

KruskalFactors::KruskalFactors(std::vector<Matrix> f) : factors(std::move(f)) { validate(); }

Shape KruskalFactors::target_shape() const {
  Shape s;
  s.reserve(factors.size());
  for (const auto& a : factors) s.push_back(a.rows());
  return s;
}

std::size_t KruskalFactors::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : factors) n += a.size();
  return n;
}

void KruskalFactors::validate() const {
  if (factors.empty()) throw std::invalid_argument("kruskal factors: no modes");
  const std::size_t r = factors.front().cols();
  if (r == 0) throw std::invalid_argument("kruskal factors: rank must be >= 1");
  for (std::size_t n = 0; n < factors.size(); ++n) {
    if (factors[n].rows() == 0)
      throw std::invalid_argument("kruskal factors: mode " + std::to_string(n) + " is empty");
    if (factors[n].cols() != r)
      throw std::invalid_argument("kruskal factors: mode " + std::to_string(n) + " has rank " +
                                  std::to_string(factors[n].cols()) + ", expected " +
                                  std::to_string(r));
  }
}

// ---------------------------------------------------------------------------
// Unfolding

namespace {

/// Column strides J_m of the mode-n unfolding (zero for m == mode).
std::vector<std::size_t> unfold_strides(const Shape& shape, std::size_t mode) {
  std::vector<std::size_t> stride(shape.size(), 0);
  std::size_t j = 1;
  for (std::size_t m = 0; m < shape.size(); ++m) {
    if (m == mode) continue;
    stride[m] = j;
    j *= shape[m];
  }
  return stride;
}

/// Calls fn(linear_offset, row, col) for every entry, walking the tensor in
/// row-major order.
template <typename Fn>
void for_each_unfold_entry(const Shape& shape, std::size_t mode, Fn&& fn) {
  const auto stride = unfold_strides(shape, mode);
  const std::size_t order = shape.size();
  std::vector<std::size_t> idx(order, 0);
  const std::size_t total = shape_size(shape);
  std::size_t col = 0;
  for (std::size_t off = 0; off < total; ++off) {
    fn(off, idx[mode], col);
    for (std::size_t m = order; m-- > 0;) {
      if (++idx[m] < shape[m]) {
        col += stride[m];
        break;
      }
      col -= stride[m] * (shape[m] - 1);
      idx[m] = 0;
    }
  }
}

}  // namespace

Matrix unfold(const DenseTensor& t, std::size_t mode) {
  check_mode(mode, t.order());
  const std::size_t rows = t.extent(mode);
  Matrix m(rows, t.size() / rows);
  const auto& src = t.data();
  for_each_unfold_entry(t.shape(), mode,
                        [&](std::size_t off, std::size_t r, std::size_t c) { m(r, c) = src[off]; });
  return m;
}

DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
  check_shape(shape);
  check_mode(mode, shape.size());
  const std::size_t total = shape_size(shape);
  if (m.rows() != shape[mode] || m.rows() * m.cols() != total)
    throw std::invalid_argument("fold: " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + " matrix does not match shape at mode " +
                                std::to_string(mode));
  DenseTensor t(shape);
  auto& dst = t.data();
  for_each_unfold_entry(shape, mode,
                        [&](std::size_t off, std::size_t r, std::size_t c) { dst[off] = m(r, c); });
  return t;
}

// ---------------------------------------------------------------------------
// Matrix products

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("khatri_rao: column counts " + std::to_string(a.cols()) +
                                " and " + std::to_string(b.cols()) + " differ");
  const std::size_t r = a.cols();
  Matrix out(a.rows() * b.rows(), r);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto dst = out.row(i * b.rows() + j);
      auto ar = a.row(i);
      auto br = b.row(j);
      for (std::size_t c = 0; c < r; ++c) dst[c] = ar[c] * br[c];
    }
  return out;
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("hadamard: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

DenseTensor mode_n_product(const DenseTensor& t, const Matrix& u, std::size_t mode) {
  check_mode(mode, t.order());
  if (u.cols() != t.extent(mode))
    throw std::invalid_argument("mode_n_product: matrix has " + std::to_string(u.cols()) +
                                " columns, mode extent is " + std::to_string(t.extent(mode)));
  Shape out_shape = t.shape();
  out_shape[mode] = u.rows();
  return fold(matmul(u, unfold(t, mode)), mode, out_shape);
}

double inner_product(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("inner_product: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

double frobenius_norm(const DenseTensor& t) { return std::sqrt(inner_product(t, t)); }

// ---------------------------------------------------------------------------
// Kruskal operator

Matrix khatri_rao_except(const KruskalFactors& f, std::size_t mode) {
  f.validate();
  check_mode(mode, f.order());
  Matrix acc;
  bool first = true;
  for (std::size_t m = f.order(); m-- > 0;) {
    if (m == mode) continue;
    if (first) {
      acc = f.factors[m];
      first = false;
    } else {
      acc = khatri_rao(acc, f.factors[m]);
    }
  }
  if (first) acc = Matrix(1, f.rank(), 1.0);  // order-1 tensor
  return acc;
}

Matrix gram_hadamard_except(const KruskalFactors& f, std::size_t mode) {
  f.validate();
  check_mode(mode, f.order());
  Matrix v(f.rank(), f.rank(), 1.0);
  for (std::size_t m = 0; m < f.order(); ++m) {
    if (m == mode) continue;
    v = hadamard(v, matmul_tn(f.factors[m], f.factors[m]));
  }
  return v;
}

DenseTensor kruskal_reconstruct(const KruskalFactors& f) {
  f.validate();
  const std::size_t order = f.order();
  if (order == 2) {
    Matrix w = matmul_nt(f.factors[0], f.factors[1]);
    return DenseTensor(f.target_shape(), std::move(w.data()));
  }
  // Rows of khatri_rao(A^(1), ..., A^(N)) follow row-major tensor order.
  Matrix acc = f.factors[order - 1];
  for (std::size_t m = order - 1; m-- > 0;) acc = khatri_rao(f.factors[m], acc);
  std::vector<double> data(acc.rows(), 0.0);
  for (std::size_t i = 0; i < acc.rows(); ++i) {
    double s = 0.0;
    for (double v : acc.row(i)) s += v;
    data[i] = s;
  }
  return DenseTensor(f.target_shape(), std::move(data));
}

Matrix kruskal_unfold(const KruskalFactors& f, std::size_t mode) {
  return matmul_nt(f.factors.at(mode), khatri_rao_except(f, mode));
}

Matrix pinv_symmetric(const Matrix& m, double cutoff) {
  if (m.rows() != m.cols()) throw std::invalid_argument("pinv_symmetric: matrix not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(view(m)));
  const auto& vals = eig.eigenvalues();
  const auto& vecs = eig.eigenvectors();
  const double vmax = vals.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(vals.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (std::abs(vals[i]) > cutoff * vmax && vals[i] != 0.0) inv[i] = 1.0 / vals[i];
  Matrix out(m.rows(), m.cols());
  view(out) = vecs * inv.asDiagonal() * vecs.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// CP-ALS

CpAlsResult cp_als(const DenseTensor& t, std::size_t rank, std::size_t iters, std::uint64_t seed) {
  if (rank == 0) throw std::invalid_argument("cp_als: rank must be >= 1");
  if (iters == 0) throw std::invalid_argument("cp_als: iters must be >= 1");
  const std::size_t order = t.order();

  Rng rng(derive_seed(seed, "cp_als"));
  std::uniform_real_distribution<double> init(-0.5, 0.5);
  std::vector<Matrix> factors;
  for (std::size_t n = 0; n < order; ++n) {
    Matrix a(t.extent(n), rank);
    for (auto& v : a.data()) v = init(rng);
    factors.push_back(std::move(a));
  }
  CpAlsResult result{KruskalFactors(std::move(factors)), {}};
  auto& f = result.factors;

  std::vector<Matrix> unfoldings;
  unfoldings.reserve(order);
  for (std::size_t n = 0; n < order; ++n) unfoldings.push_back(unfold(t, n));

  const double tnorm = frobenius_norm(t);
  const double scale = tnorm > 0.0 ? tnorm : 1.0;

  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t n = 0; n < order; ++n) {
      const Matrix mttkrp = matmul(unfoldings[n], khatri_rao_except(f, n));
      f.factors[n] = matmul(mttkrp, pinv_symmetric(gram_hadamard_except(f, n)));
    }
    DenseTensor rec = kruskal_reconstruct(f);
    double err = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      const double d = t.data()[i] - rec.data()[i];
      err += d * d;
    }
    result.errors.push_back(std::sqrt(err) / scale);
  }
  return result;
}

}  // namespace tdpfed
