#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace swfqe {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class PreconditionError : public Error {
public:
  using Error::Error;
};

class SingularityError : public Error {
public:
  using Error::Error;
};

class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

private:
  double residual_;
};

/// Raised when a distribution places mass where the reference has none.
class CoverageError : public Error {
public:
  CoverageError(const std::string& what, std::vector<std::pair<Index, Index>> pairs)
      : Error(what), pairs_(std::move(pairs)) {}
  const std::vector<std::pair<Index, Index>>& pairs() const { return pairs_; }

private:
  std::vector<std::pair<Index, Index>> pairs_;
};

class DataError : public Error {
public:
  using Error::Error;
};

class DiagnosticError : public Error {
public:
  DiagnosticError(const std::string& what, int first_violation)
      : Error(what), first_violation_(first_violation) {}
  int first_violation() const { return first_violation_; }

private:
  int first_violation_;
};

class ConfigError : public Error {
public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

inline void require_dims(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

/// True when an LDLT factorization of a PSD matrix is numerically rank deficient.
template <typename Factor>
bool near_singular(const Factor& ldlt, double rel_tol = 1e-12) {
  if (ldlt.info() != Eigen::Success) return true;
  const auto pivots = ldlt.vectorD().cwiseAbs();
  return !(pivots.minCoeff() > rel_tol * pivots.maxCoeff());
}

// splitmix64 finalizer
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-dependent combination of a running hash with one more 64-bit word.
inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (splitmix64(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/// FNV-1a over bytes; used for string keys and config hashes.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace swfqe
