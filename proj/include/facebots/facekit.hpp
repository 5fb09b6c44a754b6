#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "facebots/common.hpp"

namespace facebots::facekit {

// Canonical raster side; a preprocessed face has kRaster * kRaster entries.
inline constexpr int kRaster = 64;
inline constexpr std::size_t kFaceDim = kRaster * kRaster;
inline constexpr double kSkinThreshold = 0.20;
inline constexpr double kEllipseSemiX = 0.40;  // fraction of the raster side
inline constexpr double kEllipseSemiY = 0.48;
inline constexpr int kMinRectSide = 8;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Row-major 8-bit RGB image.
class ImageBuffer {
 public:
  ImageBuffer(int width, int height, Rgb fill = {})
      : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw InvalidArgument("image dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  ImageBuffer(int width, int height, std::vector<Rgb> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 1 || height < 1) {
      throw InvalidArgument("image dimensions must be positive");
    }
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
      throw InvalidArgument("pixel count does not match image dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }

  const Rgb& at(int x, int y) const { return pixels_[index(x, y)]; }
  Rgb& at(int x, int y) { return pixels_[index(x, y)]; }

  std::span<const Rgb> pixels() const { return pixels_; }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_;
  int height_;
  std::vector<Rgb> pixels_;
};

enum class Pose { Frontal, Profile };

inline const char* to_string(Pose p) {
  return p == Pose::Frontal ? "frontal" : "profile";
}

inline Pose pose_from_string(const std::string& s) {
  if (s == "frontal") return Pose::Frontal;
  if (s == "profile") return Pose::Profile;
  throw InvalidArgument("unknown pose '" + s + "'");
}

struct FaceRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  Pose pose = Pose::Frontal;

  double center_x() const { return x + w / 2.0; }
  double center_y() const { return y + h / 2.0; }
  bool operator==(const FaceRect&) const = default;
};

inline void check_rect(const ImageBuffer& img, const FaceRect& rect) {
  if (rect.w < kMinRectSide || rect.h < kMinRectSide) {
    throw BoundsError("face rect smaller than the minimum side");
  }
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > img.width() ||
      rect.y + rect.h > img.height()) {
    throw BoundsError("face rect outside the image");
  }
}

// Fixed RGB inequality chain.
inline bool is_skin(Rgb p) {
  const int r = p.r, g = p.g, b = p.b;
  const int hi = std::max({r, g, b});
  const int lo = std::min({r, g, b});
  return r > 95 && g > 40 && b > 20 && (hi - lo) > 15 && std::abs(r - g) > 15 &&
         r > g && r > b;
}

inline double skin_ratio(const ImageBuffer& img, const FaceRect& rect) {
  check_rect(img, rect);
  std::size_t skin = 0;
  for (int y = rect.y; y < rect.y + rect.h; ++y) {
    for (int x = rect.x; x < rect.x + rect.w; ++x) {
      if (is_skin(img.at(x, y))) ++skin;
    }
  }
  return static_cast<double>(skin) / (static_cast<double>(rect.w) * rect.h);
}

struct PreprocessedFace {
  std::vector<double> values;
  std::vector<std::uint8_t> mask;  // 1 = inside the ellipse

  std::size_t size() const { return values.size(); }

  std::size_t mask_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  }

  bool operator==(const PreprocessedFace&) const = default;
};

// Builds a face whose every entry is in-mask. Handy for hand-made vectors.
inline PreprocessedFace full_mask_face(std::vector<double> values) {
  PreprocessedFace f;
  f.mask.assign(values.size(), 1);
  f.values = std::move(values);
  return f;
}

inline const std::vector<std::uint8_t>& elliptical_mask() {
  static const std::vector<std::uint8_t> mask = [] {
    std::vector<std::uint8_t> m(kFaceDim, 0);
    const double c = kRaster / 2.0;
    const double ax = kEllipseSemiX * kRaster;
    const double ay = kEllipseSemiY * kRaster;
    for (int y = 0; y < kRaster; ++y) {
      for (int x = 0; x < kRaster; ++x) {
        const double dx = (x + 0.5 - c) / ax;
        const double dy = (y + 0.5 - c) / ay;
        if (dx * dx + dy * dy <= 1.0) m[static_cast<std::size_t>(y) * kRaster + x] = 1;
      }
    }
    return m;
  }();
  return mask;
}

inline double luma(Rgb p) { return 0.299 * p.r + 0.587 * p.g + 0.114 * p.b; }

// Grayscale crop of `rect`, bilinearly resampled onto the canonical raster and
// rounded to 8 bits.
inline std::vector<std::uint8_t> gray_raster(const ImageBuffer& img,
                                             const FaceRect& rect) {
  check_rect(img, rect);
  std::vector<std::uint8_t> out(kFaceDim);
  const double sx = static_cast<double>(rect.w) / kRaster;
  const double sy = static_cast<double>(rect.h) / kRaster;
  auto sample = [&](int x, int y) { return luma(img.at(rect.x + x, rect.y + y)); };
  for (int y = 0; y < kRaster; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, rect.h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, rect.h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < kRaster; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, rect.w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, rect.w - 1);
      const double tx = fx - x0;
      const double top = sample(x0, y0) * (1 - tx) + sample(x1, y0) * tx;
      const double bot = sample(x0, y1) * (1 - tx) + sample(x1, y1) * tx;
      const double v = top * (1 - ty) + bot * ty;
      out[static_cast<std::size_t>(y) * kRaster + x] =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

// Classic cumulative-histogram equalization onto [0, 255]. A constant input is
// returned unchanged.
inline std::vector<std::uint8_t> equalize_histogram(std::span<const std::uint8_t> in) {
  std::array<std::size_t, 256> hist{};
  for (auto v : in) ++hist[v];
  std::array<std::size_t, 256> cdf{};
  std::size_t run = 0;
  for (int i = 0; i < 256; ++i) {
    run += hist[i];
    cdf[i] = run;
  }
  std::size_t cdf_min = 0;
  for (int i = 0; i < 256; ++i) {
    if (hist[i] != 0) {
      cdf_min = cdf[i];
      break;
    }
  }
  const std::size_t n = in.size();
  std::vector<std::uint8_t> out(in.begin(), in.end());
  if (n == cdf_min) return out;
  std::array<std::uint8_t, 256> lut{};
  for (int i = 0; i < 256; ++i) {
    const double scaled = static_cast<double>(cdf[i] > cdf_min ? cdf[i] - cdf_min : 0) *
                          255.0 / static_cast<double>(n - cdf_min);
    lut[i] = static_cast<std::uint8_t>(std::lround(scaled));
  }
  for (auto& v : out) v = lut[v];
  return out;
}

// Zero mean, unit population standard deviation over the in-mask entries;
// out-of-mask entries become exactly 0. A constant in-mask set maps to 0.
inline void normalize_in_mask(std::vector<double>& values,
                              std::span<const std::uint8_t> mask) {
  if (values.size() != mask.size()) throw DimensionError("mask length mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) {
      sum += values[i];
      ++n;
    }
  }
  if (n == 0) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) sq += (values[i] - mean) * (values[i] - mean);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask[i] || sd == 0.0) {
      values[i] = 0.0;
    } else {
      values[i] = (values[i] - mean) / sd;
    }
  }
}

enum class RejectReason { LowSkin };

inline const char* to_string(RejectReason) { return "low_skin"; }

struct Rejected {
  RejectReason reason = RejectReason::LowSkin;
  double skin_ratio = 0.0;
};

using PreprocessResult = std::variant<PreprocessedFace, Rejected>;

inline PreprocessResult preprocess(const ImageBuffer& img, const FaceRect& rect) {
  const double ratio = skin_ratio(img, rect);
  if (ratio < kSkinThreshold) return Rejected{RejectReason::LowSkin, ratio};

  const auto equalized = equalize_histogram(gray_raster(img, rect));
  PreprocessedFace face;
  face.mask = elliptical_mask();
  face.values.assign(equalized.begin(), equalized.end());
  normalize_in_mask(face.values, face.mask);
  return face;
}

// ---------------------------------------------------------------------------
// Tag matching

struct TagCenter {
  double x = 0.0;
  double y = 0.0;
};

enum class TagOutcome { Matched, DiscardedProfile, NoDetections };

inline const char* to_string(TagOutcome o) {
  switch (o) {
    case TagOutcome::Matched: return "matched";
    case TagOutcome::DiscardedProfile: return "discarded_profile";
    case TagOutcome::NoDetections: return "no_detections";
  }
  return "?";
}

inline TagOutcome tag_outcome_from_string(const std::string& s) {
  if (s == "matched") return TagOutcome::Matched;
  if (s == "discarded_profile") return TagOutcome::DiscardedProfile;
  if (s == "no_detections") return TagOutcome::NoDetections;
  throw InvalidArgument("unknown tag outcome '" + s + "'");
}

struct TagMatchResult {
  TagOutcome outcome = TagOutcome::NoDetections;
  // Set only when Matched.
  std::optional<std::size_t> index;
  std::optional<FaceRect> rect;

  bool matched() const { return outcome == TagOutcome::Matched; }
};

// Binds a rough tag center to the nearest detection center. A profile nearest
// discards the tag outright. Equal distances prefer frontal, then the lower
// list index.
inline TagMatchResult match_tag(TagCenter tag, std::span<const FaceRect> detections) {
  TagMatchResult result;
  if (detections.empty()) return result;

  std::size_t best = 0;
  double best_d2 = 0.0;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& r = detections[i];
    if (r.w < kMinRectSide || r.h < kMinRectSide) {
      throw BoundsError("detection rect smaller than the minimum side");
    }
    const double dx = r.center_x() - tag.x;
    const double dy = r.center_y() - tag.y;
    const double d2 = dx * dx + dy * dy;
    if (i == 0 || d2 < best_d2 ||
        (d2 == best_d2 && r.pose == Pose::Frontal &&
         detections[best].pose == Pose::Profile)) {
      best = i;
      best_d2 = d2;
    }
  }
  if (detections[best].pose == Pose::Profile) {
    result.outcome = TagOutcome::DiscardedProfile;
    return result;
  }
  result.outcome = TagOutcome::Matched;
  result.index = best;
  result.rect = detections[best];
  return result;
}

}  // namespace facebots::facekit
