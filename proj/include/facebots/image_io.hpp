#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <fstream>

#include <nlohmann/json.hpp>
#include <png.h>

#include "facebots/common.hpp"
#include "facebots/facekit.hpp"
#include "facebots/socialstore.hpp"

namespace facebots::image_io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

}  // namespace detail

// Reads any PNG and returns it as 8-bit RGB (alpha dropped, gray expanded).
inline facekit::ImageBuffer read_png(const std::filesystem::path& path) {
  detail::File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  std::string error;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_fail, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> data;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto stride = png_get_rowbytes(png, info);
  data.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = data.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<facekit::Rgb> pixels;
  pixels.reserve(static_cast<std::size_t>(width) * height);
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      const png_byte* p = rows[y] + 3 * x;
      pixels.push_back({p[0], p[1], p[2]});
    }
  }
  return facekit::ImageBuffer(static_cast<int>(width), static_cast<int>(height),
                              std::move(pixels));
}

inline void write_png(const std::filesystem::path& path, const facekit::ImageBuffer& img) {
  detail::File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot create '" + path.string() + "'");
  std::string error;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_fail, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto& p = img.at(x, y);
      row[3 * x] = p.r;
      row[3 * x + 1] = p.g;
      row[3 * x + 2] = p.b;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw IoError("write failed for '" + path.string() + "'");
}

// A tagged photo on disk: <stem>.png plus the sidecar <stem>.json.
struct PhotoFixture {
  std::string photo_id;
  PersonId owner;
  Timestamp timestamp = 0;
  std::vector<facekit::FaceRect> detections;
  std::vector<socialstore::RawTag> tags;
  int width = 0;
  int height = 0;
};

inline PhotoFixture parse_photo_sidecar(const nlohmann::json& j) {
  PhotoFixture fx;
  try {
    fx.photo_id = j.at("photo_id").get<std::string>();
    fx.owner = j.at("owner").get<std::string>();
    fx.timestamp = j.at("timestamp").get<Timestamp>();
    for (const auto& d : j.value("detections", nlohmann::json::array())) {
      fx.detections.push_back(socialstore::rect_from_json(d));
    }
    for (const auto& t : j.value("tags", nlohmann::json::array())) {
      fx.tags.push_back({t.at("person_id").get<std::string>(),
                         {t.at("cx").get<double>(), t.at("cy").get<double>()}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed photo sidecar: ") + e.what());
  }
  return fx;
}

// Loads a sidecar and checks its detections against the dimensions of the
// PNG next to it.
inline PhotoFixture load_photo_fixture(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot read '" + sidecar.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("'" + sidecar.string() + "' is not valid JSON: " + e.what());
  }
  auto fx = parse_photo_sidecar(j);
  auto png = sidecar;
  png.replace_extension(".png");
  const auto img = read_png(png);
  fx.width = img.width();
  fx.height = img.height();
  for (const auto& r : fx.detections) facekit::check_rect(img, r);
  return fx;
}

}  // namespace facebots::image_io
