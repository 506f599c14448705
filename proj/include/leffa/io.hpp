#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "leffa/tensor.hpp"

// File formats: "LFT1" named-tensor checkpoints and binary PPM/PGM images.

namespace leffa {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
  os.write(b, 4);
}
inline uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace detail

// Checkpoint layout: "LFT1", u32 count, then per tensor: u16 name length,
// name bytes, u8 rank, u32 dims, little-endian f32 payload.
inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, Tensor<float>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os.write("LFT1", 4);
  detail::put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.rank()));
    for (int64_t d : t.shape()) detail::put_u32(os, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i) {
      float v = t[i];
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(os, bits);
    }
  }
  if (!os) throw io_error("write failed: " + path);
}

inline std::map<std::string, Tensor<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LFT1", 4) != 0)
    throw io_error("bad checkpoint magic in " + path);
  const uint32_t count = detail::get_u32(is);
  std::map<std::string, Tensor<float>> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = detail::get_u16(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const int rank = is.get();
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor<float> t(shape);
    for (int64_t j = 0; j < t.numel(); ++j) {
      const uint32_t bits = detail::get_u32(is);
      float v;
      std::memcpy(&v, &bits, 4);
      t[j] = v;
    }
    if (!is) throw io_error("truncated checkpoint: " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// ---- PPM (P6) / PGM (P5), binary, 8-bit ----

inline uint8_t quantize8(float v) {
  const float c = std::min(std::max(v, 0.0f), 1.0f);
  const int q = static_cast<int>(c * 255.0f + 0.5f);
  return static_cast<uint8_t>(q);
}

inline void write_ppm(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw dim_error("write_ppm expects [3,h,w], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[static_cast<size_t>(x * 3 + c)] = quantize8(image[(c * h + y) * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw io_error("write failed: " + path);
}

inline void write_pgm(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw dim_error("write_pgm expects [1,h,w], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) row[static_cast<size_t>(x)] = quantize8(image[y * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw io_error("write failed: " + path);
}

namespace detail {
// Header token skipping whitespace and '#' comment lines.
inline std::string pnm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}
}  // namespace detail

inline Tensor<float> read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  const std::string magic = detail::pnm_token(is);
  if (magic != "P6" && magic != "P5") throw io_error("unsupported PNM magic '" + magic + "' in " + path);
  const int64_t channels = magic == "P6" ? 3 : 1;
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(detail::pnm_token(is));
    h = std::stoll(detail::pnm_token(is));
    maxval = std::stoll(detail::pnm_token(is));
  } catch (const std::exception&) {
    throw io_error("malformed PNM header in " + path);
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw io_error("malformed PNM header in " + path);
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * channels));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw io_error("truncated PNM payload in " + path);
  Tensor<float> t({channels, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < channels; ++c)
        t[(c * h + y) * w + x] = raw[static_cast<size_t>((y * w + x) * channels + c)] / 255.0f;
  return t;
}

}  // namespace leffa
