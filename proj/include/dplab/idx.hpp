#pragma once

// IDX container format: big-endian 32-bit magic, big-endian 32-bit dimension
// sizes, then unsigned bytes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "dplab/error.hpp"

namespace dplab {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

class IdxError : public Error {
 public:
  enum class Kind { Io, BadMagic, Truncated, TrailingBytes, CountMismatch };

  IdxError(Kind kind, std::string path, std::string detail, std::uint64_t expected = 0,
           std::uint64_t actual = 0)
      : Error(path + ": " + detail), kind_(kind), path_(std::move(path)),
        expected_(expected), actual_(actual) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& path() const noexcept { return path_; }
  /// Bytes, magic values or counts, depending on kind().
  std::uint64_t expected() const noexcept { return expected_; }
  std::uint64_t actual() const noexcept { return actual_; }

 private:
  Kind kind_;
  std::string path_;
  std::uint64_t expected_, actual_;
};

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  ///< count * rows * cols, row-major
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

inline void require_size(const std::string& path, std::uint64_t expected, std::uint64_t actual) {
  if (actual < expected)
    throw IdxError(IdxError::Kind::Truncated, path,
                   "truncated: expected " + std::to_string(expected) + " bytes, found " +
                       std::to_string(actual),
                   expected, actual);
  if (actual > expected)
    throw IdxError(IdxError::Kind::TrailingBytes, path,
                   "unexpected trailing data: expected " + std::to_string(expected) +
                       " bytes, found " + std::to_string(actual),
                   expected, actual);
}

inline std::size_t check_header(const std::string& path, const std::vector<std::uint8_t>& b,
                                std::uint32_t magic) {
  const std::size_t dims = magic & 0xff;
  const std::size_t header = 4 + 4 * dims;
  if (b.size() < 4) require_size(path, header, b.size());
  const std::uint32_t got = read_be32(b, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x, expected 0x%08x", got, magic);
    throw IdxError(IdxError::Kind::BadMagic, path, buf, magic, got);
  }
  if (b.size() < header) require_size(path, header, b.size());
  return header;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxError(IdxError::Kind::Io, path, "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IdxError(IdxError::Kind::Io, path, "write failed");
}

}  // namespace detail

inline IdxImages read_idx_images(const std::string& path) {
  const auto b = detail::read_file(path);
  const std::size_t header = detail::check_header(path, b, kIdxImageMagic);
  IdxImages out;
  out.count = detail::read_be32(b, 4);
  out.rows = detail::read_be32(b, 8);
  out.cols = detail::read_be32(b, 12);
  const std::uint64_t body = std::uint64_t{out.count} * out.rows * out.cols;
  detail::require_size(path, header + body, b.size());
  out.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(header), b.end());
  return out;
}

inline IdxLabels read_idx_labels(const std::string& path) {
  const auto b = detail::read_file(path);
  const std::size_t header = detail::check_header(path, b, kIdxLabelMagic);
  const std::uint32_t count = detail::read_be32(b, 4);
  detail::require_size(path, header + std::uint64_t{count}, b.size());
  return {std::vector<std::uint8_t>(b.begin() + static_cast<std::ptrdiff_t>(header), b.end())};
}

inline void write_idx_images(const std::string& path, const IdxImages& img) {
  if (img.pixels.size() != std::size_t{img.count} * img.rows * img.cols)
    throw ParameterError("write_idx_images: pixel buffer does not match dimensions");
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxImageMagic);
  detail::put_be32(b, img.count);
  detail::put_be32(b, img.rows);
  detail::put_be32(b, img.cols);
  b.insert(b.end(), img.pixels.begin(), img.pixels.end());
  detail::write_file(path, b);
}

inline void write_idx_labels(const std::string& path, const IdxLabels& lab) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxLabelMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(lab.labels.size()));
  b.insert(b.end(), lab.labels.begin(), lab.labels.end());
  detail::write_file(path, b);
}

/// Reads a matching image/label pair; counts must agree.
inline std::pair<IdxImages, IdxLabels> read_idx_pair(const std::string& images_path,
                                                     const std::string& labels_path) {
  IdxImages img = read_idx_images(images_path);
  IdxLabels lab = read_idx_labels(labels_path);
  if (lab.labels.size() != img.count)
    throw IdxError(IdxError::Kind::CountMismatch, labels_path,
                   "label count " + std::to_string(lab.labels.size()) +
                       " does not match image count " + std::to_string(img.count),
                   img.count, lab.labels.size());
  return {std::move(img), std::move(lab)};
}

}  // namespace dplab
