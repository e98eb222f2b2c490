// Copyright 2026 The pass-reid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pass/params.hpp"
#include "pass/tensor.hpp"

namespace pass {

// Binary layout (little-endian host order):
//   "PASSCKPT" u32 version
//   u32 n_meta   { str key, str value } * n_meta
//   u32 n_tensor { str name, u32 rank, u64 dims[rank], f64 data[numel] } * n_tensor
// where str = u32 length + bytes.

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  }
  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::out_of_range("checkpoint has no metadata '" + key + "'");
    return it->second;
  }
  void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }

  void put_store(const std::string& prefix, const ParamStore& store) {
    for (const Parameter& p : store.items()) add(prefix + p.name, p.value);
  }
  /// Copies values into an existing store with the same names and shapes.
  void get_store(const std::string& prefix, ParamStore& store) const {
    for (Parameter& p : store.items()) {
      const Tensor& t = tensor(prefix + p.name);
      if (t.shape() != p.value.shape())
        throw std::runtime_error("checkpoint tensor '" + prefix + p.name + "' has shape " + shape_str(t.shape()) +
                                 ", expected " + shape_str(p.value.shape()));
      p.value = t;
    }
  }
};

namespace detail {

template <class T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get_raw(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(path + ": truncated checkpoint");
  return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_raw(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is, const std::string& path) {
  const auto n = get_raw<std::uint32_t>(is, path);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw std::runtime_error(path + ": truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_raw(os, kCheckpointVersion);
    detail::put_raw(os, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
      detail::put_str(os, k);
      detail::put_str(os, v);
    }
    detail::put_raw(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::put_str(os, name);
      detail::put_raw(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) detail::put_raw(os, static_cast<std::uint64_t>(d));
      os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const auto version = detail::get_raw<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError(path + ": checkpoint version " + std::to_string(version) +
                                 " is not supported (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const auto n_meta = detail::get_raw<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_str(is, path);
    ck.meta[k] = detail::get_str(is, path);
  }
  const auto n_tensor = detail::get_raw<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_tensor; ++i) {
    std::string name = detail::get_str(is, path);
    const auto rank = detail::get_raw<std::uint32_t>(is, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get_raw<std::uint64_t>(is, path));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw std::runtime_error(path + ": truncated checkpoint");
    ck.add(std::move(name), std::move(t));
  }
  return ck;
}

inline void put_optimizer(Checkpoint& ck, const std::string& prefix, const AdamW& opt) {
  ck.meta[prefix + "steps"] = std::to_string(opt.steps());
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    ck.add(prefix + "m." + std::to_string(i), opt.first_moments()[i]);
    ck.add(prefix + "v." + std::to_string(i), opt.second_moments()[i]);
  }
}

inline void get_optimizer(const Checkpoint& ck, const std::string& prefix, AdamW& opt) {
  const std::size_t steps = std::stoull(ck.get(prefix + "steps"));
  std::vector<Tensor> m, v;
  for (std::size_t i = 0; ck.has(prefix + "m." + std::to_string(i)); ++i) {
    m.push_back(ck.tensor(prefix + "m." + std::to_string(i)));
    v.push_back(ck.tensor(prefix + "v." + std::to_string(i)));
  }
  opt.restore(std::move(m), std::move(v), steps);
}

}  // namespace pass
