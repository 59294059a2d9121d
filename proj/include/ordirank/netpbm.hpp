#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ordirank/tensor.hpp"

namespace ordirank {

// Binary P6 with maxval 255; value v -> round(v * 255). image is [3,H,W] in [0,1];
// anything outside that range (or non-finite) is an ArgumentError, never clamped.
std::string write_ppm(const Tensor& image);
// Binary P5 with maxval 255 from a [H,W] map in [0,1].
std::string write_pgm(const Tensor& mask);

// Parses P6 (maxval 1..255) into [3,H,W] scaled to [0,1]. Throws FormatError.
Tensor read_ppm(std::string_view bytes);
// Parses P5 into [H,W]. Throws FormatError.
Tensor read_pgm(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ordirank
