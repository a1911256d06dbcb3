#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/rng.hpp"

namespace sgspen {

/// Dense row-major array of 64-bit reals.
class Array {
 public:
  Array() = default;

  explicit Array(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Array(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw DataError("Array: data length " + std::to_string(data_.size()) +
                      " does not match shape product " + std::to_string(count(shape_)));
  }

  static Array vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Array({n}, std::move(data));
  }

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : size() / shape_[0]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reshape in place, reusing storage when the element count is unchanged.
  void reset(const std::vector<std::size_t>& shape) {
    if (shape != shape_) {
      shape_ = shape;
      data_.assign(count(shape_), 0.0);
    }
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double squared_norm() const {
    return std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0);
  }

  friend bool operator==(const Array&, const Array&) = default;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Numerically stabilized softmax (max subtraction).
inline void softmax_into(std::span<const double> v, std::span<double> out) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& o : out) o /= z;
}

inline std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  softmax_into(v, out);
  return out;
}

inline Array softmax(const Array& v) { return Array(v.shape(), softmax(v.span())); }

/// Named parameter arrays in insertion order. Names are unique; shapes are
/// fixed once added.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Array value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  Array& add(std::string name, Array value) {
    if (find(name) != nullptr) throw ContractError("ParamSet: duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
    return entries_.back().value;
  }

  const Array* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }
  Array* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }

  const Array& at(const std::string& name) const {
    const Array* a = find(name);
    if (!a) throw DataError("ParamSet: missing parameter '" + name + "'");
    return *a;
  }
  Array& at(const std::string& name) {
    Array* a = find(name);
    if (!a) throw DataError("ParamSet: missing parameter '" + name + "'");
    return *a;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    throw DataError("ParamSet: missing parameter '" + name + "'");
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& e : entries_) z.add(e.name, Array(e.value.shape()));
    return z;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) s += e.value.squared_norm();
    return s;
  }

  /// this += scale * other (matching layout required).
  void axpy(double scale, const ParamSet& other) {
    require_same_layout(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& a = entries_[i].value.values();
      const auto& b = other.entries_[i].value.values();
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += scale * b[j];
    }
  }

  void scale(double s) {
    for (auto& e : entries_)
      for (auto& v : e.value.values()) v *= s;
  }

  bool all_finite() const {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](const Entry& e) { return e.value.all_finite(); });
  }

  void require_same_layout(const ParamSet& other) const {
    if (other.entries_.size() != entries_.size())
      throw DataError("ParamSet: layout mismatch (entry count)");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].value.shape() != other.entries_[i].value.shape())
        throw DataError("ParamSet: layout mismatch at '" + entries_[i].name + "'");
    }
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline Array glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  Array w({fan_out, fan_in});
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : w.values()) v = dist(rng);
  return w;
}

// ---------------------------------------------------------------------------
// Binary ParamSet container.
//
//   magic    8 bytes  "SGSPPAR\0"
//   version  u32      1
//   count    u32      number of entries
//   per entry:
//     name_len u32, name bytes (utf-8, no terminator)
//     rank u32, dims u64 * rank
//     data f64 * prod(dims)
// All integers and reals little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kParamMagic[8] = {'S', 'G', 'S', 'P', 'P', 'A', 'R', '\0'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw DataError("unexpected end of binary stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_params(std::ostream& os, const ParamSet& params) {
  os.write(kParamMagic, sizeof(kParamMagic));
  detail::write_le<std::uint32_t>(os, kParamVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.shape().size()));
    for (auto d : e.value.shape()) detail::write_le<std::uint64_t>(os, d);
    for (double v : e.value.values()) detail::write_le<double>(os, v);
  }
}

inline ParamSet read_params(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0)
    throw DataError("parameter container: bad magic bytes");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kParamVersion)
    throw DataError("parameter container: unsupported version " + std::to_string(version));
  const auto n = detail::read_le<std::uint32_t>(is);
  ParamSet params;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = detail::read_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("parameter container: truncated name");
    const auto rank = detail::read_le<std::uint32_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_le<std::uint64_t>(is));
    Array a(shape);
    for (auto& v : a.values()) v = detail::read_le<double>(is);
    params.add(std::move(name), std::move(a));
  }
  return params;
}

}  // namespace sgspen
