#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sgz/image.hpp"

namespace sgz::testing {

// Seeded synthetic "scene": smooth colour gradient, a few shapes, mild noise.
ImageTensor synthetic_scene(int height, int width, std::uint64_t seed);

std::vector<ImageTensor> synthetic_scenes(int count, int height, int width, std::uint64_t seed);

Tensor random_tensor(int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

// Writes `frame_%06d.png` style files (or `name_%03d.png`) and returns their paths.
std::vector<std::filesystem::path> write_pngs(const std::vector<ImageTensor>& images,
                                              const std::filesystem::path& dir, const char* pattern);

// Fresh, empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace sgz::testing
