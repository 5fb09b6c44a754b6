#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "facebots/facekit.hpp"
#include "facebots/harness.hpp"
#include "oracles.hpp"

using namespace facebots;
using namespace facebots::facekit;
using Catch::Matchers::WithinAbs;
using namespace facebots::test;

TEST_CASE("skin ratio of uniform rects", "[facekit]") {
  const FaceRect rect{2, 2, 10, 10};
  CHECK(skin_ratio(ImageBuffer(16, 16, Rgb{200, 120, 80}), rect) == 1.0);
  CHECK(skin_ratio(ImageBuffer(16, 16, Rgb{80, 80, 80}), rect) == 0.0);

  ImageBuffer half(10, 10, Rgb{0, 0, 0});
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 10; ++x) half.at(x, y) = {200, 120, 80};
  }
  CHECK(skin_ratio(half, {0, 0, 10, 10}) == 0.5);
}

TEST_CASE("skin ratio matches a pixel-counting oracle", "[facekit]") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pos(0, 20), side(8, 24);
  for (int trial = 0; trial < 200; ++trial) {
    const auto img = trial % 2 ? random_image(rng, 48, 48) : skin_image(rng, 48, 48);
    const FaceRect r{pos(rng), pos(rng), side(rng), side(rng)};
    std::size_t n = 0;
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) n += oracle_skin(img.at(x, y)) ? 1 : 0;
    }
    CHECK(skin_ratio(img, r) == static_cast<double>(n) / (r.w * r.h));
  }
}

TEST_CASE("skin ratio ignores pixel order inside the rect", "[facekit]") {
  std::mt19937_64 rng(11);
  auto img = random_image(rng, 20, 20);
  const FaceRect r{0, 0, 20, 20};
  const double before = skin_ratio(img, r);
  std::vector<Rgb> px(img.pixels().begin(), img.pixels().end());
  std::shuffle(px.begin(), px.end(), rng);
  CHECK(skin_ratio(ImageBuffer(20, 20, px), r) == before);
}

TEST_CASE("rects outside the image are bounds errors", "[facekit]") {
  const ImageBuffer img(32, 32, Rgb{200, 120, 80});
  CHECK_THROWS_AS(skin_ratio(img, {30, 0, 10, 10}), BoundsError);
  CHECK_THROWS_AS(preprocess(img, {-1, 0, 10, 10}), BoundsError);
  CHECK_THROWS_AS(preprocess(img, {0, 0, 4, 4}), BoundsError);
}

TEST_CASE("all-black crop is rejected for low skin", "[facekit]") {
  const auto r = preprocess(ImageBuffer(32, 32), {0, 0, 32, 32});
  REQUIRE(std::holds_alternative<Rejected>(r));
  CHECK(std::get<Rejected>(r).reason == RejectReason::LowSkin);
  CHECK(std::get<Rejected>(r).skin_ratio == 0.0);
  CHECK(std::string(to_string(RejectReason::LowSkin)) == "low_skin");
}

TEST_CASE("skin gate sits at twenty percent", "[facekit]") {
  // 20 of 100 pixels skin passes, 19 does not.
  for (int skin : {19, 20}) {
    ImageBuffer img(10, 10, Rgb{10, 10, 10});
    for (int i = 0; i < skin; ++i) img.at(i % 10, i / 10) = {200, 120, 80};
    const auto r = preprocess(img, {0, 0, 10, 10});
    CHECK(std::holds_alternative<Rejected>(r) == (skin == 19));
  }
}

TEST_CASE("preprocessed crops are normalized inside the mask", "[facekit]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = skin_image(rng, 80, 100);
    const auto r = preprocess(img, {5, 7, 60 + trial / 2, 70 + trial});
    REQUIRE(std::holds_alternative<PreprocessedFace>(r));
    const auto& f = std::get<PreprocessedFace>(r);
    REQUIRE(f.size() == kFaceDim);
    const auto [mean, sd] = masked_stats(f);
    CHECK_THAT(mean, WithinAbs(0.0, 1e-9));
    CHECK_THAT(sd, WithinAbs(1.0, 1e-9));
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!f.mask[i]) REQUIRE(f.values[i] == 0.0);
    }
  }
}

TEST_CASE("corpus face crop is normalized", "[facekit]") {
  const harness::Corpus corpus(harness::CorpusSpec{});
  const auto f = corpus.face({0, recognizer::Source::Camera, 0, 0});
  const auto [mean, sd] = masked_stats(f);
  CHECK_THAT(mean, WithinAbs(0.0, 1e-9));
  CHECK_THAT(sd, WithinAbs(1.0, 1e-9));
}

TEST_CASE("preprocess is deterministic", "[facekit]") {
  std::mt19937_64 rng(5);
  const auto img = skin_image(rng, 64, 64);
  CHECK(std::get<PreprocessedFace>(preprocess(img, {0, 0, 64, 64})) ==
        std::get<PreprocessedFace>(preprocess(img, {0, 0, 64, 64})));
}

TEST_CASE("normalizing three probe values", "[facekit]") {
  std::vector<double> v = {1, 2, 3, 7};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  normalize_in_mask(v, mask);
  const double k = 1.0 / std::sqrt(2.0 / 3.0);
  CHECK_THAT(v[0], WithinAbs(-k, 1e-12));
  CHECK_THAT(v[1], WithinAbs(0.0, 1e-12));
  CHECK_THAT(v[2], WithinAbs(k, 1e-12));
  CHECK(v[3] == 0.0);
  CHECK_THAT(k, WithinAbs(1.2247, 1e-4));
}

TEST_CASE("re-normalizing a normalized face changes nothing", "[facekit]") {
  std::mt19937_64 rng(9);
  const auto f = std::get<PreprocessedFace>(preprocess(skin_image(rng, 64, 64), {0, 0, 64, 64}));
  auto again = f.values;
  normalize_in_mask(again, f.mask);
  for (std::size_t i = 0; i < again.size(); ++i) REQUIRE_THAT(again[i], WithinAbs(f.values[i], 1e-9));
}

TEST_CASE("constant in-mask values normalize to zero", "[facekit]") {
  std::vector<double> v(10, 4.0);
  normalize_in_mask(v, std::vector<std::uint8_t>(10, 1));
  CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
  CHECK_THROWS_AS(normalize_in_mask(v, std::vector<std::uint8_t>(3, 1)), DimensionError);
}

TEST_CASE("elliptical mask geometry", "[facekit]") {
  const auto& m = elliptical_mask();
  REQUIRE(m.size() == kFaceDim);
  CHECK(m[32 * kRaster + 32] == 1);
  CHECK(m[0] == 0);
  CHECK(m[32 * kRaster + 0] == 0);  // 0.40 semi-axis leaves the side columns out
  CHECK(m[2 * kRaster + 32] == 1);   // the taller 0.48 semi-axis nearly reaches the top
  CHECK(m[32 * kRaster + 5] == 0);
  CHECK(m[32 * kRaster + 6] == 1);
  // Area close to pi * a * b.
  const double expected = M_PI * 0.40 * 0.48 * kFaceDim;
  CHECK(std::abs(static_cast<double>(std::count(m.begin(), m.end(), 1)) - expected) < 0.02 * expected);
}

TEST_CASE("histogram equalization", "[facekit]") {
  const std::vector<std::uint8_t> in = {10, 10, 20, 30};
  const auto out = equalize_histogram(in);
  CHECK(out == std::vector<std::uint8_t>{0, 0, 128, 255});
  const std::vector<std::uint8_t> flat(5, 77);
  CHECK(equalize_histogram(flat) == flat);
}

TEST_CASE("tag matching examples", "[facekit]") {
  const std::vector<FaceRect> one = {{0, 0, 20, 20, Pose::Frontal}};
  auto r = match_tag({10, 10}, one);
  CHECK(r.outcome == TagOutcome::Matched);
  CHECK(r.rect == one[0]);

  // Frontal centered (10,10), profile centered (12,12).
  const std::vector<FaceRect> two = {{0, 0, 20, 20, Pose::Frontal}, {2, 2, 20, 20, Pose::Profile}};
  r = match_tag({13, 13}, two);
  CHECK(r.outcome == TagOutcome::DiscardedProfile);
  CHECK_FALSE(r.rect);

  CHECK(match_tag({5, 5}, std::vector<FaceRect>{}).outcome == TagOutcome::NoDetections);
}

TEST_CASE("tag matching tie-breaks prefer frontal then lower index", "[facekit]") {
  const std::vector<FaceRect> tie = {{0, 0, 10, 10, Pose::Profile}, {20, 0, 10, 10, Pose::Frontal},
                                     {40, 0, 10, 10, Pose::Frontal}};
  auto r = match_tag({15, 5}, tie);
  CHECK(r.outcome == TagOutcome::Matched);
  CHECK(r.index == 1u);
  r = match_tag({35, 5}, tie);
  CHECK(r.index == 1u);
}

TEST_CASE("tag matching agrees with a brute-force oracle", "[facekit]") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> count(0, 6);
  std::uniform_real_distribution<double> coord(0, 56);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto rects = random_rects(rng, static_cast<std::size_t>(count(rng)));
    // Integer and half-integer tags make exact ties common.
    TagCenter t{std::round(coord(rng) * 2) / 2, std::round(coord(rng) * 2) / 2};
    const auto got = match_tag(t, rects);
    const auto want = oracle_match(t, rects);
    REQUIRE(got.outcome == want.outcome);
    REQUIRE(got.index == want.index);
    if (got.matched()) REQUIRE(got.rect->pose == Pose::Frontal);
  }
}

TEST_CASE("tag matching is translation invariant", "[facekit]") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> shift(-30, 30);
  std::uniform_real_distribution<double> coord(0, 56);
  for (int trial = 0; trial < 2000; ++trial) {
    auto rects = random_rects(rng, 4);
    const TagCenter t{coord(rng), coord(rng)};
    const int dx = shift(rng), dy = shift(rng);
    const auto before = match_tag(t, rects);
    for (auto& r : rects) r.x += dx, r.y += dy;
    const auto after = match_tag({t.x + dx, t.y + dy}, rects);
    REQUIRE(before.outcome == after.outcome);
    REQUIRE(before.index == after.index);
  }
}

TEST_CASE("tiny detections are malformed", "[facekit]") {
  const std::vector<FaceRect> bad = {{0, 0, 3, 3, Pose::Frontal}};
  CHECK_THROWS_AS(match_tag({1, 1}, bad), BoundsError);
}

TEST_CASE("enum names round-trip", "[facekit]") {
  for (auto o : {TagOutcome::Matched, TagOutcome::DiscardedProfile, TagOutcome::NoDetections}) {
    CHECK(tag_outcome_from_string(to_string(o)) == o);
  }
  CHECK(pose_from_string("profile") == Pose::Profile);
  CHECK_THROWS_AS(pose_from_string("side"), InvalidArgument);
}
