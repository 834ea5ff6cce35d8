#include "tobac/io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "tobac/errors.hpp"

namespace tobac {

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["caption"] = s.caption;
  if (s.image) {
    std::vector<int> cells(s.image->cells.begin(), s.image->cells.end());
    j["image"] = cells;
  } else {
    j["image"] = nullptr;
  }
  j["response"] = s.response ? nlohmann::json(*s.response) : nlohmann::json(nullptr);
  j["poisoned"] = s.poisoned ? 1 : 0;
  j["trigger"] = s.trigger ? nlohmann::json(*s.trigger) : nlohmann::json(nullptr);
  j["scene"] = scene_to_json(s.scene);
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  s.kind = seq_kind_from_string(j.at("kind").get<std::string>());
  s.caption = j.at("caption").get<Caption>();
  if (!j.at("image").is_null()) {
    const auto cells = j.at("image").get<std::vector<int>>();
    if (cells.size() != static_cast<std::size_t>(kImageCells)) throw IoError("image must have 64 cells");
    GridImage g;
    for (int i = 0; i < kImageCells; ++i) {
      if (cells[i] < 0 || cells[i] >= kPaletteSize) throw IoError("image cell outside the palette");
      g.cells[i] = static_cast<std::uint8_t>(cells[i]);
    }
    s.image = g;
  }
  if (!j.at("response").is_null()) s.response = j.at("response").get<Caption>();
  s.poisoned = j.at("poisoned").get<int>() != 0;
  if (!j.at("trigger").is_null()) s.trigger = j.at("trigger").get<std::string>();
  s.scene = scene_from_json(j.at("scene"));
  return s;
}

void write_jsonl(std::ostream& os, const Dataset& d) {
  for (const Sample& s : d.samples) os << sample_to_json(s).dump() << '\n';
}

void write_jsonl(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_jsonl(os, d);
  if (!os) throw IoError("write failed: " + path);
}

Dataset read_jsonl(std::istream& is) {
  Dataset d;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      d.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_jsonl(is);
}

const std::array<Rgb, kPaletteSize> kPalette{{
    {255, 255, 255},  // 0 background
    {220, 40, 40},    // 1 red
    {40, 170, 70},    // 2 green
    {40, 80, 220},    // 3 blue
    {240, 200, 30},   // 4 yellow
    {240, 130, 30},   // 5
    {120, 60, 20},    // 6
    {0, 170, 170},    // 7
    {130, 60, 200},   // 8
    {150, 150, 150},  // 9
    {90, 90, 90},     // 10
    {20, 20, 20},     // 11
    {170, 220, 120},  // 12
    {140, 190, 240},  // 13
    {250, 180, 190},  // 14
    {255, 0, 255},    // 15 stamp
}};

std::string render_ppm(const GridImage& grid, int scale) {
  if (scale <= 0) throw ConfigError("render scale must be positive");
  const int side = kGridSide * scale;
  std::ostringstream os;
  os << "P3\n" << side << ' ' << side << "\n255\n";
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const Rgb& p = kPalette[grid.at(y / scale, x / scale)];
      os << int(p.r) << ' ' << int(p.g) << ' ' << int(p.b) << (x + 1 == side ? '\n' : ' ');
    }
  }
  return os.str();
}

void write_ppm(const std::string& path, const GridImage& grid, int scale) {
  write_file(path, render_ppm(grid, scale));
}

PpmImage parse_ppm(const std::string& text) {
  std::istringstream is(text);
  std::vector<long> values;
  std::string magic;
  auto next_token = [&](std::string& tok) {
    tok.clear();
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(is, rest);
        if (!tok.empty()) return true;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) return true;
        continue;
      }
      tok.push_back(c);
    }
    return !tok.empty();
  };
  if (!next_token(magic) || magic != "P3") throw IoError("not an ASCII PPM");
  std::string tok;
  PpmImage img;
  auto read_int = [&](const char* what) {
    if (!next_token(tok)) throw IoError(std::string("truncated PPM: missing ") + what);
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v < 0) throw IoError("bad value");
      return v;
    } catch (const std::logic_error&) {
      throw IoError(std::string("malformed PPM ") + what);
    }
  };
  img.width = static_cast<int>(read_int("width"));
  img.height = static_cast<int>(read_int("height"));
  img.maxval = static_cast<int>(read_int("maxval"));
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535) {
    throw IoError("invalid PPM header");
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    long rgb[3];
    for (long& v : rgb) {
      v = read_int("sample");
      if (v > img.maxval) throw IoError("PPM sample exceeds maxval");
    }
    img.pixels.push_back({static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]),
                          static_cast<std::uint8_t>(rgb[2])});
  }
  if (next_token(tok)) throw IoError("trailing data after PPM pixels");
  return img;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << contents;
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace tobac
