#include "fgrm/pgm.hpp"

#include <cctype>
#include <fstream>

#include "fgrm/errors.hpp"

namespace fgrm {

namespace {

void write_header(std::ofstream& out, int width, int height, int maxval,
                  const std::string& comment) {
  out << "P5\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out << width << " " << height << "\n" << maxval << "\n";
}

void check_dims(const char* fn, int width, int height, size_t count) {
  if (width <= 0 || height <= 0 ||
      count != static_cast<size_t>(width) * static_cast<size_t>(height)) {
    throw IoError(std::string(fn) + ": " + std::to_string(count) + " pixels for " +
                  std::to_string(width) + "x" + std::to_string(height));
  }
}

// Skips whitespace and '#' comment lines, collecting the comments.
int next_header_int(std::istream& in, const std::string& path,
                    std::vector<std::string>* comments) {
  for (;;) {
    const int c = in.peek();
    if (c == EOF) throw IoError("read_pgm: truncated header in " + path);
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      if (!line.empty() && line.front() == '#') line.erase(0, 1);
      if (!line.empty() && line.front() == ' ') line.erase(0, 1);
      if (comments) comments->push_back(line);
      continue;
    }
    int value = 0;
    if (!(in >> value)) throw IoError("read_pgm: malformed header in " + path);
    return value;
  }
}

}  // namespace

void write_pgm8(const std::string& path, int width, int height,
                std::span<const uint8_t> pixels, const std::string& comment) {
  check_dims("write_pgm8", width, height, pixels.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pgm8: cannot open " + path);
  write_header(out, width, height, 255, comment);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write_pgm8: write failed for " + path);
}

void write_pgm16(const std::string& path, int width, int height,
                 std::span<const uint16_t> pixels, const std::string& comment) {
  check_dims("write_pgm16", width, height, pixels.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pgm16: cannot open " + path);
  write_header(out, width, height, 65535, comment);
  std::vector<uint8_t> bytes(pixels.size() * 2);
  for (size_t i = 0; i < pixels.size(); ++i) {
    bytes[2 * i] = static_cast<uint8_t>(pixels[i] >> 8);
    bytes[2 * i + 1] = static_cast<uint8_t>(pixels[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write_pgm16: write failed for " + path);
}

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pgm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') {
    throw IoError("read_pgm: " + path + " is not binary PGM (P5)");
  }
  PgmImage img;
  img.width = next_header_int(in, path, &img.comments);
  img.height = next_header_int(in, path, &img.comments);
  img.maxval = next_header_int(in, path, &img.comments);
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535) {
    throw IoError("read_pgm: bad dimensions in " + path);
  }
  in.get();  // single whitespace byte before raster
  const size_t count = static_cast<size_t>(img.width) * img.height;
  img.pixels.resize(count);
  if (img.maxval < 256) {
    std::vector<uint8_t> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (!in) throw IoError("read_pgm: truncated raster in " + path);
    for (size_t i = 0; i < count; ++i) img.pixels[i] = raw[i];
  } else {
    std::vector<uint8_t> raw(count * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw IoError("read_pgm: truncated raster in " + path);
    for (size_t i = 0; i < count; ++i) {
      img.pixels[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  }
  return img;
}

}  // namespace fgrm
