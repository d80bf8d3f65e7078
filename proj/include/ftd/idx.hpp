#pragma once

// IDX file loader (the MNIST container format). Big-endian headers: magic
// 0x00000803 for images / 0x00000801 for labels, then 32-bit dimension
// counts, then an unsigned-byte payload. Errors carry the byte offset.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftd/data.hpp"
#include "ftd/tensor.hpp"

namespace ftd {

struct IdxError : std::runtime_error {
  IdxError(const std::string& path, std::uint64_t offset, const std::string& what)
      : std::runtime_error(path + " @ byte " + std::to_string(offset) + ": " + what), byte_offset(offset) {}
  std::uint64_t byte_offset;
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::uint64_t& offset) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) throw IdxError(path, offset, "truncated while reading 32-bit field");
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

/// Loads an images file (magic 2051); pixels normalized to [0,1].
inline TensorValue load_idx_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IdxError(path, 0, "cannot open file");
  std::uint64_t off = 0;
  std::uint32_t magic = detail::read_be32(f, path, off);
  if (magic != 0x00000803u)
    throw IdxError(path, 0, "bad magic " + std::to_string(magic) + ", expected 2051 for images");
  std::uint32_t n = detail::read_be32(f, path, off);
  std::uint32_t rows = detail::read_be32(f, path, off);
  std::uint32_t cols = detail::read_be32(f, path, off);
  std::uint64_t count = std::uint64_t(n) * rows * cols;
  std::vector<unsigned char> raw(count);
  if (!f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count)))
    throw IdxError(path, off + static_cast<std::uint64_t>(f.gcount()), "truncated pixel payload");
  TensorValue out = TensorValue::zeros({static_cast<int>(n), static_cast<int>(rows), static_cast<int>(cols)});
  for (std::size_t i = 0; i < raw.size(); ++i) out.data[i] = raw[i] / 255.0;
  return out;
}

/// Loads a labels file (magic 2049); values must be 0..9.
inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IdxError(path, 0, "cannot open file");
  std::uint64_t off = 0;
  std::uint32_t magic = detail::read_be32(f, path, off);
  if (magic != 0x00000801u)
    throw IdxError(path, 0, "bad magic " + std::to_string(magic) + ", expected 2049 for labels");
  std::uint32_t n = detail::read_be32(f, path, off);
  std::vector<unsigned char> raw(n);
  if (!f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n)))
    throw IdxError(path, off + static_cast<std::uint64_t>(f.gcount()), "truncated label payload");
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > 9) throw IdxError(path, off + i, "label " + std::to_string(int(raw[i])) + " outside 0..9");
    out[i] = raw[i];
  }
  return out;
}

/// Pairs an images file with its labels file into one Dataset.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset d;
  d.inputs = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  if (d.inputs.shape[0] != static_cast<int>(d.labels.size()))
    throw IdxError(labels_path, 4,
                   "count mismatch: " + std::to_string(d.inputs.shape[0]) + " images vs " +
                       std::to_string(d.labels.size()) + " labels");
  return d;
}

}  // namespace ftd
