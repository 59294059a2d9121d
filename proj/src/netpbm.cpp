#include "ordirank/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace ordirank {

namespace {

unsigned char quantize(float v) {
  if (!(v >= 0.0f && v <= 1.0f)) {
    throw ArgumentError("pixel value " + std::to_string(v) + " outside [0, 1]");
  }
  return static_cast<unsigned char>(std::lround(static_cast<double>(v) * 255.0));
}

struct Header {
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

Header parse_header(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != magic) {
    throw FormatError("expected netpbm magic \"" + std::string(magic) + "\"", 0);
  }
  std::size_t pos = 2;
  auto next_number = [&](const char* what) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError(std::string("expected ") + what + " in netpbm header", pos);
    }
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw FormatError(std::string(what) + " too large", pos);
      ++pos;
    }
    return value;
  };
  Header h;
  h.width = next_number("width");
  h.height = next_number("height");
  h.maxval = next_number("maxval");
  if (h.width == 0 || h.height == 0) throw FormatError("zero image dimension", pos);
  if (h.maxval == 0 || h.maxval > 255) throw FormatError("only 8-bit netpbm (maxval 1..255) is supported", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("missing whitespace after maxval", pos);
  }
  h.data_offset = pos + 1;
  return h;
}

}  // namespace

std::string write_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[header + 3 * i + c] = static_cast<char>(quantize(image[c * plane + i]));
  }
  return out;
}

std::string write_pgm(const Tensor& mask) {
  if (mask.rank() != 2) throw DimensionError("write_pgm: expected [H,W], got " + shape_str(mask.shape()));
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + h * w);
  for (std::size_t i = 0; i < h * w; ++i) out[header + i] = static_cast<char>(quantize(mask[i]));
  return out;
}

Tensor read_ppm(std::string_view bytes) {
  const Header h = parse_header(bytes, "P6");
  const std::size_t plane = h.width * h.height;
  if (bytes.size() - h.data_offset < 3 * plane) throw FormatError("truncated P6 pixel data", bytes.size());
  Tensor img(Shape{3, h.height, h.width});
  const auto scale = static_cast<float>(h.maxval);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto v = static_cast<unsigned char>(bytes[h.data_offset + 3 * i + c]);
      if (v > h.maxval) throw FormatError("sample exceeds maxval", h.data_offset + 3 * i + c);
      img[c * plane + i] = static_cast<float>(v) / scale;
    }
  }
  return img;
}

Tensor read_pgm(std::string_view bytes) {
  const Header h = parse_header(bytes, "P5");
  const std::size_t plane = h.width * h.height;
  if (bytes.size() - h.data_offset < plane) throw FormatError("truncated P5 pixel data", bytes.size());
  Tensor img(Shape{h.height, h.width});
  for (std::size_t i = 0; i < plane; ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[h.data_offset + i])) / static_cast<float>(h.maxval);
  }
  return img;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ordirank
