// Copyright 2026 The zsdistill Authors
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

// Binary checkpoint format, little-endian throughout:
//
//   "ZSDK"  u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
//   u32 n_rec    { u32 len, name bytes, u32 ndim, u64 dims[ndim], f32 data[] } * n_rec
//
// Metadata and records are written in key order, so equal contents give equal
// bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/optim.hpp"

namespace zsd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'Z', 'S', 'D', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class UnknownParameterError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ArchitectureMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  struct Record {
    Shape shape;
    std::vector<float> data;
  };
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Record> records;
};

inline Checkpoint make_checkpoint(const ParamStore& params, std::map<std::string, std::string> metadata = {}) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& [name, e] : params.entries()) {
    ck.records[name] = {e.value.shape(), std::vector<float>(e.value.data().begin(), e.value.data().end())};
  }
  return ck;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  void take(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw TruncatedCheckpointError("checkpoint: truncated file at offset " + std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    take(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u32();
    require(n);
    std::string s(n, '\0');
    take(s.data(), s.size());
    return s;
  }
  // Length fields are checked against the bytes left before allocating.
  void require(std::size_t n) const {
    if (n > remaining()) throw TruncatedCheckpointError("checkpoint: truncated file at offset " + std::to_string(pos_));
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, ck.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& [name, rec] : ck.records) {
    if (shape_numel(rec.shape) != rec.data.size()) {
      throw CheckpointError("checkpoint: record '" + name + "' has inconsistent shape");
    }
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) detail::put_u64(out, d);
    out.append(reinterpret_cast<const char*>(rec.data.data()), rec.data.size() * sizeof(float));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader in(bytes);
  char magic[4];
  if (bytes.size() < 4) throw TruncatedCheckpointError("checkpoint: truncated file (no header)");
  in.take(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw BadMagicError("checkpoint: bad magic");
  Checkpoint ck;
  ck.version = in.u32();
  if (ck.version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint: version mismatch (file " + std::to_string(ck.version) +
                               ", expected " + std::to_string(kCheckpointVersion) + ")");
  }
  for (auto n = in.u32(); n > 0; --n) {
    auto k = in.str();
    ck.metadata[k] = in.str();
  }
  for (auto n = in.u32(); n > 0; --n) {
    auto name = in.str();
    Checkpoint::Record rec;
    const auto rank = in.u32();
    if (rank == 0) throw CheckpointError("checkpoint: record '" + name + "' has rank 0");
    in.require(std::size_t{rank} * 8);
    rec.shape.resize(rank);
    std::size_t numel = 1;
    for (auto& d : rec.shape) {
      d = static_cast<std::size_t>(in.u64());
      if (d == 0) throw CheckpointError("checkpoint: record '" + name + "' has a zero dimension");
      if (d > in.remaining() / sizeof(float) || numel > in.remaining() / sizeof(float) / d) {
        throw TruncatedCheckpointError("checkpoint: truncated record '" + name + "'");
      }
      numel *= d;
    }
    rec.data.resize(numel);
    in.take(rec.data.data(), numel * sizeof(float));
    ck.records[std::move(name)] = std::move(rec);
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes after last record");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  const auto bytes = serialize_checkpoint(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// Copies records into an existing parameter store. Each metadata entry in
// `expect` must match the checkpoint (e.g. {"student.arch", "mlp-small"}).
// Only records whose name starts with `prefix` are considered.
inline void restore_params(const Checkpoint& ck, ParamStore& params,
                           const std::map<std::string, std::string>& expect = {}, const std::string& prefix = "") {
  for (const auto& [k, v] : expect) {
    auto it = ck.metadata.find(k);
    const std::string got = it == ck.metadata.end() ? "<missing>" : it->second;
    if (got != v) {
      throw ArchitectureMismatchError("checkpoint: architecture mismatch for '" + k + "' (file " + got +
                                      ", expected " + v + ")");
    }
  }
  for (const auto& [name, rec] : ck.records) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (!params.contains(name)) throw UnknownParameterError("checkpoint: unknown parameter '" + name + "'");
    auto& t = params.at(name);
    if (t.shape() != rec.shape) {
      throw ArchitectureMismatchError("checkpoint: shape mismatch for '" + name + "' (file " +
                                      shape_str(rec.shape) + ", model " + shape_str(t.shape()) + ")");
    }
    auto d = t.mutable_data();
    std::copy(rec.data.begin(), rec.data.end(), d.begin());
  }
  for (const auto& [name, _] : params.entries()) {
    if (name.compare(0, prefix.size(), prefix) == 0 && !ck.records.count(name)) {
      throw CheckpointError("checkpoint: missing parameter '" + name + "'");
    }
  }
}

}  // namespace zsd
