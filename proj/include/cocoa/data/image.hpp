#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cocoa::data {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kAttributeDim = 6;
inline constexpr int kNumDomains = 4;

// Square grayscale image, row-major, values in [0,1].
class Image {
 public:
  explicit Image(std::size_t side = kImageSide, double fill = 0.0) : side_(side), pixels_(side * side, fill) {}
  Image(std::size_t side, std::vector<double> pixels);

  std::size_t side() const { return side_; }
  double& at(std::size_t r, std::size_t c) { return pixels_[r * side_ + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels_[r * side_ + c]; }
  std::span<const double> pixels() const { return pixels_; }
  std::span<double> pixels() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t side_;
  std::vector<double> pixels_;
};

// Blob renderer. The six attributes control, in order: size, elongation,
// lobe count, orientation, fill intensity and edge sharpness. A faint ground
// strip along the bottom edge gives every image an upright orientation.
Image render_class_image(std::span<const double> attributes, std::uint64_t seed);

// Style of each domain: 0 clean, 1 inverted + Gaussian noise (sigma 0.1),
// 2 3x3 box blur applied twice, 3 multiplicative horizontal stripes.
Image apply_domain_transform(const Image& image, int domain_id, std::uint64_t seed, bool noise = true);

// k quarter-turns counterclockwise; k is taken mod 4.
Image rotate90(const Image& image, int k);

// Pixels above this value count as blob foreground (the ground strip is below it).
inline constexpr double kForegroundThreshold = 0.5;

}  // namespace cocoa::data
