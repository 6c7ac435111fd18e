#include "mpstr/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "mpstr/errors.hpp"

namespace mpstr {

void write_pgm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1) throw IoError("PGM output requires a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  std::string digits;
  while (c != EOF && std::isdigit(c)) {
    digits.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (digits.empty()) throw IoError("malformed PGM header in " + path.string());
  return std::stoi(digits);
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw IoError("not a binary PGM: " + path.string());
  const int w = read_header_int(in, path);
  const int h = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PGM geometry in " + path.string());
  Image img(w, h, 1);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError("truncated PGM data in " + path.string());
  }
  return img;
}

}  // namespace mpstr
