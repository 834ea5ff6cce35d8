#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "tobac/image.hpp"
#include "tobac/world.hpp"

namespace tobac {

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

/// One JSON object per line.
void write_jsonl(std::ostream& os, const Dataset& d);
void write_jsonl(const std::string& path, const Dataset& d);
Dataset read_jsonl(std::istream& is);
Dataset read_jsonl(const std::string& path);

struct Rgb {
  std::uint8_t r, g, b;
};

/// Fixed display palette; index 0 is the background, 15 the stamp color.
extern const std::array<Rgb, kPaletteSize> kPalette;

/// ASCII PPM (P3), each cell drawn as a scale x scale block.
std::string render_ppm(const GridImage& grid, int scale = 16);
void write_ppm(const std::string& path, const GridImage& grid, int scale = 16);

struct PpmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<Rgb> pixels;
};

/// Minimal P3 reader (comments allowed); IoError on malformed input.
PpmImage parse_ppm(const std::string& text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace tobac
