#pragma once

#include "lady/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>

namespace lady
{

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Row-major dense matrix. Token sequences use one row per token.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Tokens = Mat<T>;

/// Row-vector times matrix (x W), returned as a column vector.
template <typename T>
Vec<T> row_times(const Vec<T> & x, const Mat<T> & w)
{
  if (x.size() != w.rows()) {
    throw DimensionError(
      "row_times: vector of length " + std::to_string(x.size()) + " against matrix with " +
      std::to_string(w.rows()) + " rows");
  }
  return (x.transpose() * w).transpose();
}

template <typename T>
T sigmoid(T x)
{
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Vec<T> sigmoid(const Vec<T> & x)
{
  return x.unaryExpr([](T v) { return sigmoid(v); });
}

inline constexpr double kNormEps = 1e-5;

/// Affine layer normalisation over a contiguous slice.
template <typename T, typename In, typename Gamma, typename Beta>
Vec<T> layer_norm(const In & x, const Gamma & gamma, const Beta & beta)
{
  const auto n = static_cast<T>(x.size());
  const T mean = x.sum() / n;
  const T var = (x.array() - mean).square().sum() / n;
  const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
  return ((x.array() - mean) * inv * gamma.array() + beta.array()).matrix();
}

inline void require_same_size(std::ptrdiff_t a, std::ptrdiff_t b, const char * what)
{
  if (a != b) {
    throw DimensionError(
      std::string(what) + ": size mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace lady
