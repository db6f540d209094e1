#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace sgz::testing {

ImageTensor synthetic_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(3, height, width);

  // Near-neutral scene: shared luminance with a mild per-channel tint.
  const double lum = 0.3 + 0.4 * u(rng);
  const double gx = 0.3 * (u(rng) - 0.5), gy = 0.3 * (u(rng) - 0.5);
  double base[3], dx[3], dy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = lum + 0.06 * (u(rng) - 0.5);
    dx[c] = gx + 0.05 * (u(rng) - 0.5);
    dy[c] = gy + 0.05 * (u(rng) - 0.5);
  }
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        t.at(c, y, x) = base[c] + dx[c] * x / width + dy[c] * y / height;
      }
    }
  }

  const int shapes = 3 + static_cast<int>(rng() % 4);
  for (int s = 0; s < shapes; ++s) {
    const double cx = u(rng) * width, cy = u(rng) * height;
    const double r = (0.08 + 0.25 * u(rng)) * std::min(height, width);
    const bool disc = (rng() & 1) != 0;
    const double shade = 0.1 + 0.8 * u(rng);
    double col[3];
    for (double& v : col) v = std::clamp(shade + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double ddx = x - cx, ddy = y - cy;
        const bool inside = disc ? ddx * ddx + ddy * ddy < r * r : std::abs(ddx) < r && std::abs(ddy) < 0.6 * r;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) t.at(c, y, x) = col[c];
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 0.01);
  for (double& v : t.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return ImageTensor::from_tensor(std::move(t));
}

std::vector<ImageTensor> synthetic_scenes(int count, int height, int width, std::uint64_t seed) {
  std::vector<ImageTensor> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synthetic_scene(height, width, seed * 1000003ull + i));
  return out;
}

Tensor random_tensor(int c, int h, int w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (double& v : t.values()) v = u(rng);
  return t;
}

std::vector<std::filesystem::path> write_pngs(const std::vector<ImageTensor>& images,
                                              const std::filesystem::path& dir, const char* pattern) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), pattern, static_cast<int>(i));
    paths.push_back(dir / name);
    save_image(images[i], paths.back());
  }
  return paths;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgz_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sgz::testing
