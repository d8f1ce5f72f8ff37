#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "lobcal/core/error.hpp"
#include "lobcal/nn/matrix.hpp"

namespace lobcal::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Owns named parameters. Addresses of stored parameters stay valid for the store's lifetime,
/// including across moves of the store itself.
class ParamStore {
public:
  Parameter& add(std::string name, std::size_t rows, std::size_t cols) {
    for (const auto& p : params_) {
      if (p->name == name) throw ContractError("duplicate parameter name '" + name + "'");
    }
    params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), Matrix(rows, cols), Matrix(rows, cols)}));
    return *params_.back();
  }

  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  [[nodiscard]] Parameter* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  [[nodiscard]] std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
  }

  [[nodiscard]] std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Matrix>& values) {
    if (values.size() != params_.size()) throw ContractError("parameter snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!values[i].same_shape(params_[i]->value)) throw ContractError("parameter snapshot shape mismatch");
      params_[i]->value = values[i];
    }
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& p : params_)
      for (double v : p->value.storage())
        if (!std::isfinite(v)) return false;
    return true;
  }

  /// FNV-1a over names, shapes and the raw bytes of every value.
  [[nodiscard]] std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : params_) {
      mix(p->name.data(), p->name.size());
      const std::uint64_t shape[2] = {p->value.rows(), p->value.cols()};
      mix(shape, sizeof shape);
      mix(p->value.data(), p->value.size() * sizeof(double));
    }
    return h;
  }

private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// ---------------------------------------------------------------------------------------
// Binary parameter file, version 1. All integers and floats little-endian.
//
//   magic    8 bytes  "LOBCALPS"
//   version  u32      1
//   count    u32      number of tensors
//   table    count x { u32 name_len, name bytes, u32 rows, u32 cols }
//   data     for each tensor in table order: rows*cols f64, row-major

inline constexpr char kParamMagic[8] = {'L', 'O', 'B', 'C', 'A', 'L', 'P', 'S'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("parameter file truncated");
  return v;
}

}  // namespace detail

inline void write_params(std::ostream& os, const ParamStore& store) {
  os.write(kParamMagic, 8);
  detail::put_u32(os, kParamVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store[i].value;
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

/// Loads values into an already-constructed store; names and shapes must match exactly.
inline void read_params(std::istream& is, ParamStore& store) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kParamMagic, 8) != 0) throw DataError("not a parameter file (bad magic)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kParamVersion) throw DataError("unsupported parameter file version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  if (count != store.size()) {
    throw DataError("parameter file holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(store.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("parameter file truncated");
    const std::uint32_t rows = detail::get_u32(is), cols = detail::get_u32(is);
    const auto& p = store[i];
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw DataError("parameter table mismatch at '" + name + "' (expected '" + p.name + "' " +
                      shape_string(p.value) + ")");
    }
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& v = store[i].value;
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw DataError("parameter file truncated");
    }
  }
}

}  // namespace lobcal::nn
