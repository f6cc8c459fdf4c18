#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csgru/rng.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// Procedurally rendered digit-image corpus in the MNIST geometry (28x28
// grayscale, labels 0-9). Used as an offline stand-in wherever real IDX digit
// files are not available; generation is deterministic in the seed.

namespace detail {

// 5x7 bitmap font, one row per scanline, LSB = rightmost column.
inline constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigitFont = {{
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},  // 2
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
}};

}  // namespace detail

// One 28x28 [1,28,28] image: the glyph scaled x3, randomly placed, with
// stroke-intensity jitter and sparse background speckle.
inline Tensor render_digit(int digit, Rng& rng) {
  constexpr int kSide = 28, kScale = 3, kGw = 5 * kScale, kGh = 7 * kScale;
  std::vector<double> img(kSide * kSide, 0.0);
  const int dx = 1 + static_cast<int>(rng.below(kSide - kGw - 1));
  const int dy = 1 + static_cast<int>(rng.below(kSide - kGh - 1));
  const double base = rng.uniform(0.6, 1.0);
  for (int gy = 0; gy < 7; ++gy) {
    for (int gx = 0; gx < 5; ++gx) {
      if (!((detail::kDigitFont[static_cast<std::size_t>(digit)][static_cast<std::size_t>(gy)] >>
             (4 - gx)) &
            1))
        continue;
      for (int sy = 0; sy < kScale; ++sy)
        for (int sx = 0; sx < kScale; ++sx) {
          const int y = dy + gy * kScale + sy, x = dx + gx * kScale + sx;
          img[static_cast<std::size_t>(y) * kSide + x] = base * rng.uniform(0.8, 1.0);
        }
    }
  }
  for (double& v : img)
    if (v == 0.0 && rng.bernoulli(0.03)) v = rng.uniform(0.05, 0.35);
  return Tensor({1, kSide, kSide}, std::move(img));
}

// Balanced, shuffled corpus of n images.
inline std::vector<std::pair<Tensor, int>> generate_digit_corpus(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 10;
  rng.shuffle(labels);
  std::vector<std::pair<Tensor, int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.emplace_back(render_digit(labels[static_cast<std::size_t>(i)], rng),
                     labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace csgru
