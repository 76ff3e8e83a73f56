#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynaflow/tensor.hpp"

namespace dynaflow {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), used for the self-describing content hashes embedded
// in result files.

namespace detail {

class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
          0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    buf_len_ = 0;
    total_ = 0;
  }

  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t{64} - buf_len_);
      std::memcpy(buf_.data() + buf_len_, p, take);
      buf_len_ += take;
      p += take;
      len -= take;
      if (buf_len_ == 64) {
        process(buf_.data());
        buf_len_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    const unsigned char zero = 0;
    while (buf_len_ != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len_be, 8);

    static const char* hexd = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t w : h_)
      for (int i = 3; i >= 0; --i) {
        const unsigned byte = (w >> (8 * i)) & 0xffu;
        out.push_back(hexd[byte >> 4]);
        out.push_back(hexd[byte & 0xf]);
      }
    return out;
  }

 private:
  static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

  void process(const unsigned char* p) {
    static constexpr std::uint32_t K[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
    std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + S1 + ch + K[i] + w[i];
      const std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = S0 + maj;
      h = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d;
    h_[4] += e; h_[5] += f; h_[6] += g; h_[7] += h;
  }

  std::array<std::uint32_t, 8> h_;
  std::array<unsigned char, 64> buf_;
  std::size_t buf_len_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

inline std::string sha256_hex(const void* data, std::size_t len) {
  detail::Sha256 h;
  h.update(data, len);
  return h.hex_digest();
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open for hashing: " + path.string());
  detail::Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Container: magic(4) | version u32 | header_len u64 | header JSON |
// tensor_count u64 | { name_len u64, name, rank u32, extents u64..,
// f64 payload } .. -- all little-endian. Shared by checkpoints ("DYNF") and
// datasets ("DYND").

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Container {
  json header;
  std::vector<NamedTensor> tensors;

  const Tensor& find(const std::string& name) const {
    for (const auto& nt : tensors)
      if (nt.name == name) return nt.value;
    throw ValidationError("container: no tensor named " + name);
  }
};

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw NumericError("container: truncated file");
  return v;
}

}  // namespace detail

inline void write_container(const std::filesystem::path& path, const char magic[4],
                            std::uint32_t version, const json& header,
                            const std::vector<NamedTensor>& tensors) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot write: " + tmp.string());
    os.write(magic, 4);
    detail::write_pod<std::uint32_t>(os, version);
    const std::string hdr = header.dump();
    detail::write_pod<std::uint64_t>(os, hdr.size());
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    detail::write_pod<std::uint64_t>(os, tensors.size());
    for (const NamedTensor& nt : tensors) {
      detail::write_pod<std::uint64_t>(os, nt.name.size());
      os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
      detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nt.value.rank()));
      for (std::size_t d : nt.value.shape())
        detail::write_pod<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(nt.value.data().data()),
               static_cast<std::streamsize>(nt.value.numel() * sizeof(double)));
    }
    if (!os) throw NumericError("container: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);  // atomic replace on POSIX
}

inline Container read_container(const std::filesystem::path& path, const char magic[4],
                                std::uint32_t expected_version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open: " + path.string());
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0)
    throw ValidationError("bad magic in " + path.string() + " (expected " +
                          std::string(magic, 4) + ")");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != expected_version)
    throw ValidationError("unsupported format version " + std::to_string(version) +
                          " in " + path.string());
  const auto hdr_len = detail::read_pod<std::uint64_t>(is);
  std::string hdr(hdr_len, '\0');
  is.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  if (!is) throw NumericError("container: truncated header in " + path.string());

  Container c;
  try {
    c.header = json::parse(hdr);
  } catch (const std::exception& e) {
    throw NumericError("container: corrupt header JSON in " + path.string() + ": " +
                       e.what());
  }
  const auto n_tensors = detail::read_pod<std::uint64_t>(is);
  c.tensors.reserve(n_tensors);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const auto name_len = detail::read_pod<std::uint64_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = detail::read_pod<std::uint32_t>(is);
    if (rank > 2) throw NumericError("container: tensor rank > 2 in " + path.string());
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is)));
    const std::size_t n = Tensor::numel_from_shape(shape);
    std::vector<double> data(n);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw NumericError("container: truncated payload in " + path.string());
    c.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return c;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot write: " + tmp.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
  }
  std::filesystem::rename(tmp, path);
}

// %.17g formatting round-trips IEEE doubles exactly and keeps CSV emission
// deterministic across runs.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace dynaflow
