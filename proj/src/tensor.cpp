#include "ttd/tensor.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace ttd {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) {
    if (d == 0) throw ShapeError("shape dims must be >= 1");
    if (n > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("shape element count overflows");
    }
    n *= d;
  }
  return n;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), numel_(checked_product(dims_)) {}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t a = dims_.size(); a-- > 1;) s[a - 1] = s[a] * dims_[a];
  return s;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

std::size_t product(std::span<const std::size_t> v) {
  return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t multi_to_flat(std::span<const std::size_t> idx, const Shape& shape) {
  if (idx.size() != shape.rank()) {
    throw IndexError("index rank " + std::to_string(idx.size()) + " != tensor rank " +
                     std::to_string(shape.rank()));
  }
  std::size_t flat = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (idx[a] >= shape[a]) {
      throw IndexError("index " + std::to_string(idx[a]) + " out of range on axis " +
                       std::to_string(a) + " of shape " + shape.str());
    }
    flat = flat * shape[a] + idx[a];
  }
  return flat;
}

std::vector<std::size_t> flat_to_multi(std::size_t flat, const Shape& shape) {
  if (flat >= shape.numel()) {
    throw IndexError("flat index " + std::to_string(flat) + " out of range for shape " +
                     shape.str());
  }
  std::vector<std::size_t> idx(shape.rank());
  for (std::size_t a = shape.rank(); a-- > 0;) {
    idx[a] = flat % shape[a];
    flat /= shape[a];
  }
  return idx;
}

void check_permutation(std::span<const std::size_t> perm, std::size_t rank) {
  if (perm.size() != rank) {
    throw InvalidArgument("permutation length " + std::to_string(perm.size()) +
                          " != rank " + std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw InvalidArgument("not a permutation of 0..rank-1");
    seen[p] = true;
  }
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  check_permutation(perm, perm.size());
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t a = 0; a < perm.size(); ++a) inv[perm[a]] = a;
  return inv;
}

namespace {

// ratio a_max/a_min < b_max/b_min, compared without division
bool more_balanced(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const auto lhs = static_cast<unsigned __int128>(*amax) * *bmin;
  const auto rhs = static_cast<unsigned __int128>(*bmax) * *amin;
  if (lhs != rhs) return lhs < rhs;
  return a < b;
}

void search_splits(std::size_t remaining, std::size_t slots, std::vector<std::size_t>& partial,
                   std::vector<std::size_t>& best) {
  if (slots == 1) {
    partial.push_back(remaining);
    if (best.empty() || more_balanced(partial, best)) best = partial;
    partial.pop_back();
    return;
  }
  for (std::size_t f = 1; f <= remaining; ++f) {
    if (remaining % f != 0) continue;
    partial.push_back(f);
    search_splits(remaining / f, slots - 1, partial, best);
    partial.pop_back();
  }
}

}  // namespace

DimFactorization factorize_dim(std::size_t total, std::size_t d) {
  if (d < 2) throw InvalidArgument("factorize_dim requires d >= 2");
  if (total < 1) throw InvalidArgument("factorize_dim requires total >= 1");
  std::vector<std::size_t> partial, best;
  search_splits(total, d, partial, best);
  return {total, best};
}

DimFactorization factorize_dim(std::size_t total, std::vector<std::size_t> override_factors) {
  if (override_factors.size() < 2) throw InvalidArgument("factorization needs d >= 2 factors");
  for (auto f : override_factors) {
    if (f == 0) throw InvalidArgument("factors must be positive");
  }
  if (product(override_factors) != total) {
    throw ShapeError("factors do not multiply to " + std::to_string(total));
  }
  return {total, std::move(override_factors)};
}

}  // namespace ttd
