// Copyright 2026 The MMCS Authors.
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

// Checkpoint container, little-endian throughout:
//
//   "MMCSCKPT"            8 bytes magic
//   u32 version
//   u32 levels, base_width, in_channels, out_channels
//   u64 parameter count, then that many float32 values
//   u32 metadata entry count, then per entry: u32 len + key bytes, u32 len + value bytes
//   u64 FNV-1a hash of every preceding byte

#include "mmcs/error.hpp"
#include "mmcs/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mmcs {
namespace {

constexpr char kMagic[8] = {'M', 'M', 'C', 'S', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CorruptionError("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SegNet<float>& net,
                     const std::map<std::string, std::string>& metadata) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  const NetArch& a = net.arch();
  for (int v : {a.levels, a.base_width, a.in_channels, a.out_channels}) put<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(net.theta.size()));
  buf.append(reinterpret_cast<const char*>(net.theta.data()), static_cast<std::size_t>(net.theta.size()) * sizeof(float));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(k.size()));
    buf += k;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.size()));
    buf += v;
  }
  put<std::uint64_t>(buf, fnv1a(buf));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(std::uint64_t)) throw CorruptionError("checkpoint truncated");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw CorruptionError("not a checkpoint file: bad magic");

  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));

  Reader r(buf, body);
  r.bytes(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CorruptionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (stored != fnv1a(buf.substr(0, body))) throw CorruptionError("checkpoint checksum mismatch");

  NetArch arch;
  arch.levels = static_cast<int>(r.get<std::uint32_t>());
  arch.base_width = static_cast<int>(r.get<std::uint32_t>());
  arch.in_channels = static_cast<int>(r.get<std::uint32_t>());
  arch.out_channels = static_cast<int>(r.get<std::uint32_t>());
  Checkpoint ck{SegNet<float>(arch), {}};
  const auto count = r.get<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(ck.net.theta.size()))
    throw CorruptionError("checkpoint parameter count does not match its architecture");
  const std::string blob = r.bytes(static_cast<std::size_t>(count) * sizeof(float));
  std::memcpy(ck.net.theta.data(), blob.data(), blob.size());
  const auto entries = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string key = r.bytes(r.get<std::uint32_t>());
    ck.metadata[std::move(key)] = r.bytes(r.get<std::uint32_t>());
  }
  if (r.pos() != body) throw CorruptionError("trailing bytes before checksum");
  return ck;
}

}  // namespace mmcs
