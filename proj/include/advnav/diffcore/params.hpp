#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advnav/diffcore/tape.hpp"

namespace advnav {

/// Named parameter tensors of one or more models, ordered by name.
template <class T>
class BasicParamStore {
 public:
  using TensorT = BasicTensor<T>;

  /// Adds a rows x cols tensor initialised uniformly in
  /// [-1/sqrt(rows), 1/sqrt(rows)].
  TensorT& add(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    TensorT t(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values) v = static_cast<T>(dist(rng));
    return insert(name, std::move(t));
  }

  TensorT& add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
    return insert(name, TensorT(rows, cols));
  }

  TensorT& insert(const std::string& name, TensorT t) {
    t.zero_grad();
    auto [it, fresh] = tensors_.insert_or_assign(name, std::move(t));
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  TensorT& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  const TensorT& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  Var bind(BasicTape<T>& tape, const std::string& name) { return tape.param(name, at(name)); }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

  bool grads_finite() const {
    for (const auto& [_, t] : tensors_) {
      for (T g : t.grad) {
        if (!std::isfinite(static_cast<double>(g))) return false;
      }
    }
    return true;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [_, t] : tensors_) {
      for (T g : t.grad) s += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(s);
  }

  void scale_grads(double f) {
    for (auto& [_, t] : tensors_) {
      for (auto& g : t.grad) g = static_cast<T>(g * f);
    }
  }

  /// Copies every tensor whose name starts with `prefix` from `other`.
  void assign_prefix(const BasicParamStore& other, const std::string& prefix) {
    for (const auto& [name, t] : other.tensors_) {
      if (name.rfind(prefix, 0) == 0) insert(name, t);
    }
  }

  template <class U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, t] : tensors_) out.insert(name, t.template cast<U>());
    return out;
  }

  std::map<std::string, TensorT>& tensors() { return tensors_; }
  const std::map<std::string, TensorT>& tensors() const { return tensors_; }
  std::size_t count() const { return tensors_.size(); }

  /// Bitwise equality of all values under names starting with `prefix`.
  bool values_equal(const BasicParamStore& other, const std::string& prefix = {}) const {
    auto pick = [&](const BasicParamStore& s) {
      std::vector<const std::pair<const std::string, TensorT>*> v;
      for (const auto& kv : s.tensors_) {
        if (kv.first.rfind(prefix, 0) == 0) v.push_back(&kv);
      }
      return v;
    };
    const auto a = pick(*this);
    const auto b = pick(other);
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->first != b[i]->first || a[i]->second.shape != b[i]->second.shape) return false;
      if (std::memcmp(a[i]->second.values.data(), b[i]->second.values.data(),
                      a[i]->second.values.size() * sizeof(T)) != 0) {
        return false;
      }
    }
    return true;
  }

 private:
  std::map<std::string, TensorT> tensors_;
};

using ParamStore = BasicParamStore<float>;

// ---- checkpoint files --------------------------------------------------------
//
// <prefix>.json : {"format": "advnav-checkpoint/1", "meta": {...},
//                  "tensors": [{"name", "shape": [r, c], "offset", "count"}]}
// <prefix>.bin  : concatenated little-endian IEEE-754 binary32 values.

inline constexpr const char* kCheckpointFormat = "advnav-checkpoint/1";

inline void save_checkpoint(const std::filesystem::path& prefix, const ParamStore& store,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<unsigned char> blob;
  for (const auto& [name, t] : store.tensors()) {
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", t.shape},
                                   {"offset", blob.size()},
                                   {"count", t.values.size()}});
    for (float v : t.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + prefix.string() + ".bin");
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(prefix.string() + ".json");
  if (!js) throw std::runtime_error("cannot write " + prefix.string() + ".json");
  js << manifest.dump(2) << '\n';
}

inline bool checkpoint_exists(const std::filesystem::path& prefix) {
  return std::filesystem::exists(prefix.string() + ".json") &&
         std::filesystem::exists(prefix.string() + ".bin");
}

struct LoadedCheckpoint {
  ParamStore params;
  nlohmann::json meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix) {
  std::ifstream js(prefix.string() + ".json");
  if (!js) throw std::runtime_error("checkpoint manifest not found: " + prefix.string() + ".json");
  const auto manifest = nlohmann::json::parse(js);
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("unsupported checkpoint format in " + prefix.string() + ".json");
  }
  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint blob not found: " + prefix.string() + ".bin");
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)),
                                  std::istreambuf_iterator<char>());
  LoadedCheckpoint out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& rec : manifest.at("tensors")) {
    const auto shape = rec.at("shape").get<std::vector<std::size_t>>();
    const auto offset = rec.at("offset").get<std::size_t>();
    const auto count = rec.at("count").get<std::size_t>();
    if (shape.size() != 2 || shape[0] * shape[1] != count) {
      throw std::runtime_error("checkpoint tensor '" + rec.at("name").get<std::string>() +
                               "' has inconsistent shape");
    }
    if (offset + 4 * count > blob.size()) {
      throw std::runtime_error("checkpoint blob truncated at '" +
                               rec.at("name").get<std::string>() + "'");
    }
    Tensor t(shape[0], shape[1]);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(blob[offset + 4 * i + static_cast<std::size_t>(b)])
                << (8 * b);
      }
      std::memcpy(&t.values[i], &bits, sizeof bits);
    }
    out.params.insert(rec.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace advnav
