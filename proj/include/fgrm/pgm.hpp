#pragma once
// Binary PGM (P5) read/write. 16-bit samples are big-endian per the format.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fgrm {

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<uint16_t> pixels;            // row-major, one channel
  std::vector<std::string> comments;       // '#' header lines, marker stripped
};

// Throws IoError on filesystem or format problems.
void write_pgm8(const std::string& path, int width, int height,
                std::span<const uint8_t> pixels, const std::string& comment);
void write_pgm16(const std::string& path, int width, int height,
                 std::span<const uint16_t> pixels, const std::string& comment);
PgmImage read_pgm(const std::string& path);

}  // namespace fgrm
