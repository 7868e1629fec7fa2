#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "saic/tensor.hpp"

namespace saic {

// CRC-32 (IEEE 802.3 polynomial, reflected).
inline std::uint32_t crc32(const void* data, std::size_t n,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// Little-endian append-only buffer; files are assembled in memory so the
// trailing checksum covers every byte before it.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    buf_.push_back(v & 0xFF);
    buf_.push_back(v >> 8);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<unsigned char>& data() const { return buf_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check_format(f.good(), "cannot open ", path.string(), " for writing");
    f.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
    check_format(f.good(), "short write to ", path.string());
  }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const std::vector<unsigned char>& v)
      : ByteReader(v.data(), v.size()) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() {
    std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const unsigned char* take(std::size_t n) {
    check_format(pos_ + n <= n_, "truncated record");
    const unsigned char* p = p_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check_format(f.good(), "cannot open ", path.string());
  f.seekg(0, std::ios::end);
  std::vector<unsigned char> buf(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  check_format(f.good(), "short read from ", path.string());
  return buf;
}

// Versioned container for model/optimizer state: string metadata plus named
// tensors, with a whole-file CRC. Readers validate the checksum before
// parsing, so corrupt files never yield partial state.
struct Checkpoint {
  static constexpr char kMagic[8] = {'S', 'A', 'I', 'C', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::filesystem::path& path) const {
    ByteWriter w;
    w.bytes(kMagic, 8);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      w.str(k);
      w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (int d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
      w.bytes(t.data(), t.numel() * sizeof(float));
    }
    w.u32(crc32(w.data().data(), w.data().size()));
    w.write_file(path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    auto buf = read_file_bytes(path);
    check_format(buf.size() >= 16, "checkpoint too short: ", path.string());
    const std::size_t body = buf.size() - 4;
    ByteReader tail(buf.data() + body, 4);
    check_format(tail.u32() == crc32(buf.data(), body),
                 "checkpoint checksum mismatch: ", path.string());
    ByteReader r(buf.data(), body);
    check_format(std::memcmp(r.take(8), kMagic, 8) == 0,
                 "not a checkpoint file: ", path.string());
    const std::uint32_t version = r.u32();
    check_format(version == kVersion, "unsupported checkpoint version ", version,
                 " in ", path.string());
    Checkpoint c;
    const std::uint32_t nmeta = r.u32();
    for (std::uint32_t i = 0; i < nmeta; ++i) {
      std::string k = r.str();
      c.meta[k] = r.str();
    }
    const std::uint32_t ntens = r.u32();
    for (std::uint32_t i = 0; i < ntens; ++i) {
      std::string name = r.str();
      std::vector<int> dims(r.u32());
      for (auto& d : dims) d = static_cast<int>(r.u32());
      Tensor t(dims);
      std::memcpy(t.data(), r.take(t.numel() * sizeof(float)),
                  t.numel() * sizeof(float));
      c.tensors.emplace_back(std::move(name), std::move(t));
    }
    return c;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

}  // namespace saic
