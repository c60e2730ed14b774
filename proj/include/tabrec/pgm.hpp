#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tabrec {

struct PgmImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, 0 = black
};

void write_pgm(const std::string& path, const PgmImage& img);
PgmImage read_pgm(const std::string& path);

// [0,1] float image (1 = white) <-> 8-bit PGM
PgmImage to_pgm(const std::vector<float>& gray, int width, int height);
std::vector<float> to_float(const PgmImage& img);

}  // namespace tabrec
