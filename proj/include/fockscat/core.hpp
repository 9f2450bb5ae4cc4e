#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstddef>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace fockscat {

using cplx = std::complex<double>;
using Vector = Eigen::VectorXcd;
using DenseMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

/// Operator on a truncated Fock space. Row-major so matrix-vector products
/// stream over rows.
using SparseOperator = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

inline constexpr cplx imag_unit{0.0, 1.0};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or input value failed validation; `field()` names it.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class BasisLimitError : public Error {
 public:
  BasisLimitError(std::size_t required, std::size_t limit)
      : Error("basis requires " + std::to_string(required) + " states, hard limit is " +
              std::to_string(limit)),
        required_(required),
        limit_(limit) {}
  std::size_t required() const noexcept { return required_; }
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t required_;
  std::size_t limit_;
};

/// An iterative method gave up; `residual()` is the best error estimate reached.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double residual)
      : Error(message + " (achieved residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline double max_abs(const SparseOperator& m) {
  double out = 0.0;
  for (Eigen::Index r = 0; r < m.outerSize(); ++r)
    for (SparseOperator::InnerIterator it(m, r); it; ++it) out = std::max(out, std::abs(it.value()));
  return out;
}

inline DenseMatrix to_dense(const SparseOperator& m) { return DenseMatrix(m); }

inline SparseOperator to_sparse(const DenseMatrix& m, double drop = 0.0) {
  return m.sparseView(1.0, drop);
}

/// max |A - A^dagger| entrywise.
inline double hermiticity_defect(const SparseOperator& a) {
  SparseOperator diff = a - SparseOperator(a.adjoint());
  return max_abs(diff);
}

template <class Derived>
double hermiticity_defect(const Eigen::MatrixBase<Derived>& a) {
  return max_abs(a - a.adjoint());
}

/// Runs body(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <class Body>
void parallel_for(std::size_t count, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(count);
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace fockscat
