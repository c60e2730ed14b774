#include "tabrec/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tabrec/array.hpp"

namespace tabrec {

void write_pgm(const std::string& path, const PgmImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("short write to " + path);
}

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path + ": not a binary PGM");
  auto next_int = [&in, &path]() {
    int c = in.peek();
    while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
      if (c == '#') in.ignore(1 << 20, '\n');
      else in.get();
      c = in.peek();
    }
    int v = 0;
    if (!(in >> v)) throw IoError(path + ": malformed header");
    return v;
  };
  PgmImage img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw IoError(path + ": expected maxval 255");
  in.get();  // single whitespace after header
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError(path + ": truncated pixel data");
  return img;
}

PgmImage to_pgm(const std::vector<float>& gray, int width, int height) {
  PgmImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(gray.size());
  for (size_t i = 0; i < gray.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, gray[i]));
    img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

std::vector<float> to_float(const PgmImage& img) {
  std::vector<float> out(img.pixels.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return out;
}

}  // namespace tabrec
