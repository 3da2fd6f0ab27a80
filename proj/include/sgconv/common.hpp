#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sgconv
{

inline void require(bool condition, const std::string& message)
{
  if (!condition)
    throw std::invalid_argument(message);
}

/// Dense row-major rank-3 array. Used as B x H x L for sequence batches.
template <typename T>
class Tensor3
{
public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T(0))
      : dims_{d0, d1, d2}, data_(d0 * d1 * d2, fill)
  {
  }

  std::size_t dim(std::size_t axis) const { return dims_[axis]; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * dims_[1] + j) * dims_[2] + k]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const
  {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  std::span<T> row(std::size_t i, std::size_t j) { return {data_.data() + (i * dims_[1] + j) * dims_[2], dims_[2]}; }
  std::span<const T> row(std::size_t i, std::size_t j) const
  {
    return {data_.data() + (i * dims_[1] + j) * dims_[2], dims_[2]};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Tensor3& other) const
  {
    return dims_[0] == other.dims_[0] && dims_[1] == other.dims_[1] && dims_[2] == other.dims_[2];
  }

  bool operator==(const Tensor3&) const = default;

private:
  std::size_t dims_[3] = {0, 0, 0};
  std::vector<T> data_;
};

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// thread. Callers must only write to slots owned by index i so that results
/// do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
  if (threads <= 1 || n <= 1)
  {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t)
  {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end)
      break;
    pool.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i)
        fn(i);
    });
  }
}

/// splitmix64 finalizer, used to derive independent seeds from (seed, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace sgconv
