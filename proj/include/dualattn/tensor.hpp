#pragma once

#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "dualattn/common.hpp"
#include "dualattn/rng.hpp"

namespace dualattn {

// Dense row-major tensor over a flat Eigen array. Rank is carried by `shape`;
// most ops treat data as flat and only matmul/conv interpret structure.
template <typename S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  std::vector<int> shape;
  Array data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
    data = Array::Constant(numel_of(shape), fill);
  }

  static long numel_of(const std::vector<int>& shp) {
    long n = 1;
    for (int d : shp) n *= d;
    return n;
  }

  long numel() const { return data.size(); }
  int dim(int i) const { return shape[i]; }
  int rank() const { return static_cast<int>(shape.size()); }

  S& operator[](long i) { return data[i]; }
  S operator[](long i) const { return data[i]; }

  MatMap mat(int rows, int cols) {
    return MatMap(data.data(), rows, cols);
  }
  ConstMatMap mat(int rows, int cols) const {
    return ConstMatMap(data.data(), rows, cols);
  }

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
  static Tensor full(std::vector<int> shp, S v) { return Tensor(std::move(shp), v); }

  static Tensor scalar(S v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static Tensor from_vector(std::vector<int> shp, const std::vector<S>& v) {
    Tensor t(std::move(shp));
    require(static_cast<long>(v.size()) == t.numel(), "from_vector size mismatch");
    for (long i = 0; i < t.numel(); ++i) t.data[i] = v[i];
    return t;
  }

  static Tensor uniform(std::vector<int> shp, S lo, S hi, Rng& rng) {
    Tensor t(std::move(shp));
    for (long i = 0; i < t.numel(); ++i)
      t.data[i] = static_cast<S>(rng.uniform_in(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  template <typename T2>
  Tensor<T2> cast() const {
    Tensor<T2> out;
    out.shape = shape;
    out.data = data.template cast<T2>();
    return out;
  }
};

}  // namespace dualattn
