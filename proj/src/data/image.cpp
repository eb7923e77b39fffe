#include "cocoa/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "cocoa/errors.hpp"

namespace cocoa::data {
namespace {

constexpr double kGroundIntensity = 0.4;
constexpr double kLobeAmplitude = 0.3;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void clip01(Image& img) {
  for (auto& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
}

Image box_blur3(const Image& in) {
  const std::size_t n = in.side();
  Image out(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(n) || cc >= static_cast<std::ptrdiff_t>(n)) continue;
          s += in.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        }
      }
      out.at(r, c) = s / 9.0;
    }
  }
  return out;
}

}  // namespace

Image::Image(std::size_t side, std::vector<double> pixels) : side_(side), pixels_(std::move(pixels)) {
  if (pixels_.size() != side_ * side_) {
    throw DimensionError("image buffer of " + std::to_string(pixels_.size()) + " values for side " +
                         std::to_string(side_));
  }
}

Image render_class_image(std::span<const double> attributes, std::uint64_t seed) {
  if (attributes.size() != kAttributeDim) {
    throw ValidationError("render_class_image: expected " + std::to_string(kAttributeDim) + " attributes, got " +
                          std::to_string(attributes.size()));
  }
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (!(attributes[i] >= 0.0 && attributes[i] <= 1.0)) {
      throw ValidationError("render_class_image: attribute " + std::to_string(i) + " outside [0,1]");
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-0.75, 0.75);
  std::uniform_real_distribution<double> resize(0.95, 1.05);
  std::uniform_real_distribution<double> tilt(-0.1, 0.1);
  const double dx = shift(rng), dy = shift(rng), scale = resize(rng), dtheta = tilt(rng);

  const double radius = (1.4 + 4.1 * attributes[0]) * scale;
  const double aspect = 1.0 + 1.2 * attributes[1];
  const double major = radius * std::sqrt(aspect);
  const double minor = radius / std::sqrt(aspect);
  const double lobes = 2.0 + std::round(3.0 * attributes[2]);
  const double phi = attributes[3] * std::numbers::pi + dtheta;
  const double fill = 0.55 + 0.45 * attributes[4];
  const double softness = 0.1 + 0.7 * (1.0 - attributes[5]);

  const std::size_t n = kImageSide;
  const double cx = 7.5 + dx, cy = 6.5 + dy;
  const double cp = std::cos(phi), sp = std::sin(phi);
  Image img(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c) - cx;
      const double y = static_cast<double>(r) - cy;
      const double u = (x * cp + y * sp) / major;
      const double v = (-x * sp + y * cp) / minor;
      const double rho = std::hypot(u, v);
      const double boundary = 1.0 + kLobeAmplitude * std::cos(lobes * std::atan2(v, u));
      const double dist = (boundary - rho) * radius;
      img.at(r, c) = fill * sigmoid(dist / softness);
    }
  }
  for (std::size_t c = 0; c < n; ++c) img.at(n - 2, c) = std::max(img.at(n - 2, c), kGroundIntensity);
  clip01(img);
  return img;
}

Image apply_domain_transform(const Image& image, int domain_id, std::uint64_t seed, bool noise) {
  switch (domain_id) {
    case 0:
      return image;
    case 1: {
      Image out = image;
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> gauss(0.0, 0.1);
      for (auto& v : out.pixels()) {
        v = 1.0 - v;
        if (noise) v += gauss(rng);
      }
      clip01(out);
      return out;
    }
    case 2: {
      Image out = box_blur3(box_blur3(image));
      clip01(out);
      return out;
    }
    case 3: {
      Image out = image;
      for (std::size_t r = 0; r < out.side(); ++r) {
        const double factor = 0.6 + 0.4 * std::cos(2.0 * std::numbers::pi * static_cast<double>(r) / 4.0);
        for (std::size_t c = 0; c < out.side(); ++c) out.at(r, c) *= factor;
      }
      clip01(out);
      return out;
    }
    default:
      throw ValidationError("apply_domain_transform: unknown domain " + std::to_string(domain_id));
  }
}

Image rotate90(const Image& image, int k) {
  k = ((k % 4) + 4) % 4;
  const std::size_t n = image.side();
  Image out = image;
  for (int step = 0; step < k; ++step) {
    Image next(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) next.at(r, c) = out.at(c, n - 1 - r);
    out = std::move(next);
  }
  return out;
}

}  // namespace cocoa::data
