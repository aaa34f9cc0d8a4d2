#pragma once

#include "comodal/scene_synth.hpp"

#include <filesystem>
#include <string>

namespace comodal {

/// Binary PPM (P6, maxval 255). Values are rounded to 8 bits on write.
std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& bytes);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// Writes `scenes/<split>/<index>.img|.labels|.points` plus `manifest.txt`
/// under `dir`. Source splits have no `.points` file.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reads a dataset written by `write_dataset`. The scene generator config is
/// rebuilt from the defaults with the manifest's sizes and camera. Throws
/// IoError on missing or malformed files.
Dataset read_dataset(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace comodal
