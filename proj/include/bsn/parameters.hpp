#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "bsn/graph.hpp"
#include "bsn/rng.hpp"
#include "bsn/tensor.hpp"

namespace bsn {

/// All module weights theta, each with a gradient slot of the same shape.
/// Keys are "<module slot>/<param name>", e.g. "e3-7/conv1.w".
template <typename Scalar>
class ParameterStore {
 public:
  struct Slot {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
  };

  Slot& declare(const std::string& name, const Shape& shape) {
    auto it = slots_.find(name);
    if (it != slots_.end()) {
      if (it->second.value.shape != shape) {
        throw Error(Errc::ShapeMismatch, "parameter '" + name + "' redeclared with a different shape");
      }
      return it->second;
    }
    return slots_.emplace(name, Slot{Tensor<Scalar>(shape), Tensor<Scalar>(shape)}).first->second;
  }

  bool contains(const std::string& name) const { return slots_.count(name) != 0; }

  Slot& at(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error(Errc::InvalidGraph, "unknown parameter '" + name + "'");
    return it->second;
  }
  const Slot& at(const std::string& name) const { return const_cast<ParameterStore*>(this)->at(name); }

  void zero_grad() {
    for (auto& [name, slot] : slots_) slot.grad.data.setZero();
  }

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::size_t size() const { return slots_.size(); }

  template <typename To>
  ParameterStore<To> cast() const {
    ParameterStore<To> out;
    for (const auto& [name, slot] : slots_) {
      auto& s = out.declare(name, slot.value.shape);
      s.value = slot.value.template cast<To>();
      s.grad = slot.grad.template cast<To>();
    }
    return out;
  }

 private:
  std::map<std::string, Slot> slots_;
};

inline std::string param_name(const ModuleSpec& m, const std::string& suffix) { return m.slot + "/" + suffix; }

/// Declares every parameter used by g. Weights get a Kaiming-uniform draw
/// (bound sqrt(6 / fan_in)); biases start at zero. Each slot has its own
/// stream derived from the seed and the slot name, so the values do not
/// depend on declaration order.
template <typename Scalar>
void init_parameters(const SuperNetGraph& g, ParameterStore<Scalar>& params, std::uint64_t seed) {
  for (const auto& e : g.edges()) {
    for (const auto& decl : module_params(e.module)) {
      const std::string name = param_name(e.module, decl.name);
      if (params.contains(name)) continue;
      auto& slot = params.declare(name, decl.shape);
      const bool is_bias = decl.name.ends_with("b");
      if (is_bias) continue;
      Rng rng(derive_seed(seed, fnv1a(name)));
      const double bound = std::sqrt(6.0 / decl.fan_in);
      for (Eigen::Index i = 0; i < slot.value.size(); ++i) slot.value[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  }
}

// Checkpoint layout (little endian):
//   "BSNP" u32 version=1 u32 slot_count
//   per slot: u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 payload
namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::ParseError, "truncated parameter checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void write_checkpoint(std::ostream& out, const ParameterStore<Scalar>& params) {
  out.write("BSNP", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, slot] : params.slots()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(slot.value.shape.size()));
    for (int d : slot.value.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < slot.value.size(); ++i) {
      const float f = static_cast<float>(slot.value[i]);
      detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
}

inline ParameterStore<float> read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "BSNP", 4) != 0) throw Error(Errc::ParseError, "not a parameter checkpoint");
  const auto version = detail::get_u32(in);
  if (version != kCheckpointVersion) throw Error(Errc::ParseError, "unsupported checkpoint version " + std::to_string(version));
  ParameterStore<float> params;
  const auto count = detail::get_u32(in);
  for (std::uint32_t s = 0; s < count; ++s) {
    std::string name(detail::get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw Error(Errc::ParseError, "truncated slot name");
    Shape shape(detail::get_u32(in));
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(in));
    auto& slot = params.declare(name, shape);
    for (Eigen::Index i = 0; i < slot.value.size(); ++i) slot.value[i] = std::bit_cast<float>(detail::get_u32(in));
  }
  return params;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Scalar>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  write_checkpoint(out, params);
}

inline ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace bsn
