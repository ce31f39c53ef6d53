// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssladd {

// Error categories surface unchanged through the C API and the CLI exit code.
enum class ErrorCategory {
  kInvalidArgument = 1,
  kIo = 2,
  kFormat = 3,
  kState = 4,
  kNumeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void Fail(ErrorCategory c, const std::string& msg) { throw Error(c, msg); }

inline void Require(bool cond, const std::string& msg) {
  if (!cond) throw Error(ErrorCategory::kInvalidArgument, msg);
}

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Eigen's vectorized kernels peel a different
// number of leading elements depending on the address alignment, which
// changes the summation order; fixed alignment keeps results bit-identical
// from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

// Dense row-major tensor of doubles. Shape extents are positive and their
// product always equals data.size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Vector(std::initializer_list<double> values);
  static Tensor Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Returns a copy with a new shape of identical element count.
  Tensor Reshaped(Shape shape) const;
  void Fill(double v);
  bool AllFinite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Storage data_;
};

// Deterministic generator: mt19937_64 with distribution code written out here,
// because the std:: distributions are not specified bit-for-bit across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Independent stream keyed by (seed, tags...). Used for per-utterance and
  // per-epoch streams so that results do not depend on visiting order.
  static Rng Derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);
  static std::uint64_t Mix(std::uint64_t a, std::uint64_t b);
  static std::uint64_t HashString(const std::string& s);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of randomness.
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t Index(std::uint64_t n);
  double Normal();

  template <class T>
  void Shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(Index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

Tensor UniformTensor(Shape shape, double bound, Rng& rng);
Tensor NormalTensor(Shape shape, double stddev, Rng& rng);

}  // namespace ssladd
