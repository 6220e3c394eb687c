#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ttd/error.hpp"

namespace ttd {

/// Extent per axis. Every dim is at least 1 and the element count fits in size_t.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t numel() const noexcept { return numel_; }

  /// Row-major strides (last axis fastest).
  std::vector<std::size_t> strides() const;

  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 1;
};

std::size_t multi_to_flat(std::span<const std::size_t> idx, const Shape& shape);
std::vector<std::size_t> flat_to_multi(std::size_t flat, const Shape& shape);

/// Validate that `perm` is a permutation of 0..rank-1; throws InvalidArgument otherwise.
void check_permutation(std::span<const std::size_t> perm, std::size_t rank);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm);

/// Row-major n-dimensional tensor owning its elements.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel()) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  const T& operator[](std::size_t flat) const { return data_[flat]; }
  T& operator[](std::size_t flat) { return data_[flat]; }

  const T& at(std::initializer_list<std::size_t> idx) const {
    return data_[multi_to_flat(std::span<const std::size_t>(idx.begin(), idx.size()), shape_)];
  }
  T& at(std::initializer_list<std::size_t> idx) {
    return data_[multi_to_flat(std::span<const std::size_t>(idx.begin(), idx.size()), shape_)];
  }
  const T& at(std::span<const std::size_t> idx) const { return data_[multi_to_flat(idx, shape_)]; }
  T& at(std::span<const std::size_t> idx) { return data_[multi_to_flat(idx, shape_)]; }

  std::vector<T> release() && { return std::move(data_); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using DenseTensor = BasicTensor<double>;

/// d-way split of `total`; product(factors) == total.
struct DimFactorization {
  std::size_t total = 1;
  std::vector<std::size_t> factors;
};

/// Most balanced d-way divisor split of `total` (minimal max/min ratio, then
/// lexicographically smallest). Throws InvalidArgument for d < 2.
DimFactorization factorize_dim(std::size_t total, std::size_t d);

/// Checks a caller-supplied factor list against `total` and returns it.
DimFactorization factorize_dim(std::size_t total, std::vector<std::size_t> override_factors);

/// Relabel the flat data with a new shape of the same element count.
template <typename T>
BasicTensor<T> tensorize(BasicTensor<T> t, const Shape& target) {
  if (t.numel() != target.numel()) {
    throw ShapeError("cannot tensorize " + t.shape().str() + " into " + target.str() +
                     ": element counts differ");
  }
  return BasicTensor<T>(target, std::move(t).release());
}

/// out[idx permuted by perm] = in[idx]: output axis a has extent in.shape[perm[a]].
template <typename T>
BasicTensor<T> permute_axes(const BasicTensor<T>& in, std::span<const std::size_t> perm) {
  const std::size_t rank = in.rank();
  check_permutation(perm, rank);

  std::vector<std::size_t> out_dims(rank);
  for (std::size_t a = 0; a < rank; ++a) out_dims[a] = in.shape()[perm[a]];
  Shape out_shape(out_dims);

  // Stride of the input tensor along each output axis.
  const auto in_strides = in.shape().strides();
  std::vector<std::size_t> step(rank);
  for (std::size_t a = 0; a < rank; ++a) step[a] = in_strides[perm[a]];

  std::vector<T> out(in.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  const auto src_data = in.data();
  for (std::size_t dst = 0; dst < out.size(); ++dst) {
    out[dst] = src_data[src];
    // Odometer increment over the output index, tracking the input offset.
    for (std::size_t a = rank; a-- > 0;) {
      if (++counter[a] < out_dims[a]) {
        src += step[a];
        break;
      }
      src -= step[a] * (out_dims[a] - 1);
      counter[a] = 0;
    }
  }
  return BasicTensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
BasicTensor<T> permute_axes(const BasicTensor<T>& in, std::initializer_list<std::size_t> perm) {
  return permute_axes(in, std::span<const std::size_t>(perm.begin(), perm.size()));
}

std::size_t product(std::span<const std::size_t> v);

}  // namespace ttd
