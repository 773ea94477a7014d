// Copyright 2026 The pfrpn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "pfrpn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pfrpn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'F', 'R', 'P'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(source_ + ": truncated while reading " + what);
    }
  }

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_arrays(const NamedArrays& arrays, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<double>(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(path.string() + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError(path.string() + ": write failed");
}

NamedArrays read_arrays(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(path.string() + ": cannot open");
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path.string());
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) {
    throw CheckpointError(path.string() + ": bad magic (not a PFRP checkpoint, format version " +
                          std::to_string(kCheckpointVersion) + " expected)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("array count");
  NamedArrays arrays;
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw CheckpointError(path.string() + ": array " + name + " has bad rank");
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
      n *= shape.back();
    }
    std::vector<double> data(n);
    for (double& v : data) v = r.get<double>("data");
    arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after the last array");
  return arrays;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  NamedArrays arrays;
  for (const auto& [name, t] : named_tensors(params)) arrays.emplace_back(name, *t);
  write_arrays(arrays, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const NamedArrays arrays = read_arrays(path);
  ModelParams params = init_params(config, 0);
  auto slots = named_tensors(params);
  if (slots.size() != arrays.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(slots.size()) + " arrays, found " +
                          std::to_string(arrays.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, t] = arrays[i];
    if (name != slots[i].first) {
      throw CheckpointError(path.string() + ": expected array " + slots[i].first + ", found " + name);
    }
    if (t.shape() != slots[i].second->shape()) {
      throw CheckpointError(path.string() + ": array " + name + " has shape " + t.shape_string() +
                            ", model expects " + slots[i].second->shape_string());
    }
    *slots[i].second = t;
  }
  return params;
}

}  // namespace pfrpn
