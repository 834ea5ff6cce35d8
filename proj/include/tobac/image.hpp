#pragma once

#include <array>
#include <cstdint>

namespace tobac {

inline constexpr int kGridSide = 8;
inline constexpr int kImageCells = kGridSide * kGridSide;
inline constexpr int kPaletteSize = 16;
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kTargetColor = 15;  // magenta, reserved for the stamp

/// 8x8 grid of palette indices; the discrete-token image of the toy world.
struct GridImage {
  std::array<std::uint8_t, kImageCells> cells{};

  std::uint8_t& at(int r, int c) { return cells[static_cast<std::size_t>(r * kGridSide + c)]; }
  std::uint8_t at(int r, int c) const { return cells[static_cast<std::size_t>(r * kGridSide + c)]; }

  friend bool operator==(const GridImage&, const GridImage&) = default;
};

}  // namespace tobac
