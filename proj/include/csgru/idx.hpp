#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "csgru/errors.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// IDX image/label container (big-endian magic and dims, raw u8 payload).

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw parse_error(path + ": truncated idx header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Images scaled to [0,1] by /255, one [1,H,W] tensor each. limit 0 = all.
inline std::vector<Tensor> read_idx_images(const std::string& path, int limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open idx file: " + path);
  const std::uint32_t magic = detail::read_be32(in, path);
  if (magic != 0x00000803)
    throw parse_error(path + ": bad image idx magic " + std::to_string(magic));
  const int n = static_cast<int>(detail::read_be32(in, path));
  const int h = static_cast<int>(detail::read_be32(in, path));
  const int w = static_cast<int>(detail::read_be32(in, path));
  const int take = (limit > 0 && limit < n) ? limit : n;
  std::vector<Tensor> images;
  images.reserve(static_cast<std::size_t>(take));
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < take; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw parse_error(path + ": truncated image payload at item " + std::to_string(i));
    std::vector<double> d(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) d[j] = static_cast<double>(buf[j]) / 255.0;
    images.emplace_back(Shape{1, h, w}, std::move(d));
  }
  return images;
}

inline std::vector<int> read_idx_labels(const std::string& path, int limit = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open idx file: " + path);
  const std::uint32_t magic = detail::read_be32(in, path);
  if (magic != 0x00000801)
    throw parse_error(path + ": bad label idx magic " + std::to_string(magic));
  const int n = static_cast<int>(detail::read_be32(in, path));
  const int take = (limit > 0 && limit < n) ? limit : n;
  std::vector<unsigned char> buf(static_cast<std::size_t>(take));
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw parse_error(path + ": truncated label payload");
  return std::vector<int>(buf.begin(), buf.end());
}

// Writes [1,H,W] images (values in [0,1], quantized back to u8).
inline void write_idx_images(const std::string& path, const std::vector<Tensor>& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write idx file: " + path);
  const int h = images.empty() ? 0 : images[0].shape()[1];
  const int w = images.empty() ? 0 : images[0].shape()[2];
  detail::write_be32(out, 0x00000803);
  detail::write_be32(out, static_cast<std::uint32_t>(images.size()));
  detail::write_be32(out, static_cast<std::uint32_t>(h));
  detail::write_be32(out, static_cast<std::uint32_t>(w));
  for (const Tensor& img : images) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(img.size()));
    for (std::int64_t i = 0; i < img.size(); ++i)
      buf[static_cast<std::size_t>(i)] =
          static_cast<unsigned char>(img[i] * 255.0 + 0.5);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write idx file: " + path);
  detail::write_be32(out, 0x00000801);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// Image/label pair loader with a subsampling limit (takes the first n items).
inline std::vector<std::pair<Tensor, int>> load_idx_dataset(const std::string& images_path,
                                                            const std::string& labels_path,
                                                            int limit = 0) {
  std::vector<Tensor> images = read_idx_images(images_path, limit);
  std::vector<int> labels = read_idx_labels(labels_path, limit);
  if (images.size() != labels.size())
    throw data_error("idx image/label count mismatch: " + std::to_string(images.size()) +
                     " vs " + std::to_string(labels.size()));
  std::vector<std::pair<Tensor, int>> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    out.emplace_back(std::move(images[i]), labels[i]);
  return out;
}

}  // namespace csgru
