#include "metafas/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "metafas/errors.hpp"

namespace metafas {

namespace {

uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw DataError("pnm: truncated header");
}

Tensor read_pnm(const std::string& path, const std::string& magic, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("pnm: cannot open '" + path + "'");
  if (next_token(in) != magic) {
    throw DataError("pnm: '" + path + "' is not a " + magic + " file");
  }
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (w < 1 || h < 1 || maxval != 255) {
    throw DataError("pnm: unsupported header in '" + path + "'");
  }
  in.get();  // single whitespace byte before raster
  std::vector<char> raw(static_cast<size_t>(w) * h * channels);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw DataError("pnm: truncated raster in '" + path + "'");
  }
  std::vector<double> vals(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    vals[i] = static_cast<uint8_t>(raw[i]) / 255.0;
  }
  return Tensor::from_values({h, w, channels}, std::move(vals));
}

void write_pnm(const std::string& path, const Tensor& image,
               const std::string& magic, int channels) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[2] != channels) {
    throw DataError("pnm: expected (H,W," + std::to_string(channels) +
                    ") tensor, got " + detail::shape_str(s));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("pnm: cannot write '" + path + "'");
  out << magic << "\n" << s[1] << " " << s[0] << "\n255\n";
  std::vector<char> raw(image.values().size());
  const auto& vals = image.values();
  for (size_t i = 0; i < vals.size(); ++i) raw[i] = static_cast<char>(to_byte(vals[i]));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("pnm: short write to '" + path + "'");
}

}  // namespace

Tensor read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }

void write_ppm(const std::string& path, const Tensor& image) {
  write_pnm(path, image, "P6", 3);
}

Tensor read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

void write_pgm(const std::string& path, const Tensor& image) {
  write_pnm(path, image, "P5", 1);
}

Tensor resize_bilinear(const Tensor& image, int side) {
  const Shape& s = image.shape();
  if (s.size() != 3) {
    throw DataError("resize: expected (H,W,C) tensor, got " + detail::shape_str(s));
  }
  if (side < 1) throw ValueError("resize: side must be >= 1");
  const int h = s[0], w = s[1], c = s[2];
  if (h == side && w == side) return image.detach();

  const auto& src = image.values();
  std::vector<double> dst(static_cast<size_t>(side) * side * c);
  const double sy = static_cast<double>(h) / side;
  const double sx = static_cast<double>(w) / side;
  for (int i = 0; i < side; ++i) {
    const double fy = std::max(0.0, (i + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < side; ++j) {
      const double fx = std::max(0.0, (j + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int k = 0; k < c; ++k) {
        auto at = [&](int y, int x) {
          return src[(static_cast<size_t>(y) * w + x) * c + k];
        };
        const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        dst[(static_cast<size_t>(i) * side + j) * c + k] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return Tensor::from_values({side, side, c}, std::move(dst));
}

}  // namespace metafas
