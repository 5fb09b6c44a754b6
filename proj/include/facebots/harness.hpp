#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/facekit.hpp"
#include "facebots/recognizer.hpp"

namespace facebots::harness {

using facekit::PreprocessedFace;
using recognizer::ScoreVector;
using recognizer::Source;

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Faces live in a low-dimensional appearance space spanned by smooth cosine
// patterns. A frame's appearance is identity + (session shift | facebook
// domain offset + per-photo variation) + per-capture jitter, rendered as a
// skin-toned 64x64 crop with pixel noise and run through the real preprocessor.

struct CorpusSpec {
  std::size_t n_identities = 5;
  std::size_t n_strangers = 5;
  std::size_t sessions_per_identity = 5;
  std::size_t frames_per_session = 100;
  std::size_t facebook_per_identity = 60;
  double sigma_identity = 1.0;  // spread of identity appearance
  double sigma_session = 1.2;   // per-session lighting shift (camera)
  double sigma_frame = 4.0;     // per-frame pixel noise, gray levels
  double sigma_cam = 0.6;       // within-session appearance jitter, camera
  int drift_frames = 20;        // frames over which camera jitter decorrelates
  double sigma_fb = 1.2;        // per-photo appearance variation, facebook
  double fb_domain = 1.3;       // per-identity camera/facebook offset
  int crop_jitter = 2;          // facebook crop misalignment, pixels
  double fb_outlier_rate = 0.2;   // share of facebook shots that are poor captures
  double fb_outlier_sigma = 3.0;  // extra appearance change of a poor capture
  double hard_offset = 1.0;     // norm of the out-of-lab lighting offset
  std::uint64_t seed = 42;

  void validate() const {
    if (n_identities == 0 || frames_per_session == 0 || sessions_per_identity == 0) {
      throw InvalidArgument("corpus needs at least one identity, session and frame");
    }
    for (double s : {sigma_identity, sigma_session, sigma_frame, sigma_cam, sigma_fb,
                     fb_domain, hard_offset, fb_outlier_sigma}) {
      if (!(s >= 0.0)) throw InvalidArgument("corpus sigmas must be non-negative");
    }
    if (!(sigma_fb > sigma_cam)) {
      throw InvalidArgument("facebook variation must exceed camera variation");
    }
    if (crop_jitter < 0) throw InvalidArgument("crop jitter must be non-negative");
    if (drift_frames < 1) throw InvalidArgument("drift frames must be at least 1");
    if (!(fb_outlier_rate >= 0.0 && fb_outlier_rate <= 1.0)) {
      throw InvalidArgument("facebook outlier rate must be in [0, 1]");
    }
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"n_identities", s.n_identities},
       {"n_strangers", s.n_strangers},
       {"sessions_per_identity", s.sessions_per_identity},
       {"frames_per_session", s.frames_per_session},
       {"facebook_per_identity", s.facebook_per_identity},
       {"sigma_identity", s.sigma_identity},
       {"sigma_session", s.sigma_session},
       {"sigma_frame", s.sigma_frame},
       {"camera", {{"sigma_cam", s.sigma_cam}, {"drift_frames", s.drift_frames}}},
       {"facebook", {{"sigma_fb", s.sigma_fb}, {"domain_offset", s.fb_domain},
                     {"crop_jitter", s.crop_jitter}, {"outlier_rate", s.fb_outlier_rate},
                     {"outlier_sigma", s.fb_outlier_sigma}}},
       {"hard_offset", s.hard_offset},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.n_identities = j.value("n_identities", d.n_identities);
  s.n_strangers = j.value("n_strangers", d.n_strangers);
  s.sessions_per_identity = j.value("sessions_per_identity", d.sessions_per_identity);
  s.frames_per_session = j.value("frames_per_session", d.frames_per_session);
  s.facebook_per_identity = j.value("facebook_per_identity", d.facebook_per_identity);
  s.sigma_identity = j.value("sigma_identity", d.sigma_identity);
  s.sigma_session = j.value("sigma_session", d.sigma_session);
  s.sigma_frame = j.value("sigma_frame", d.sigma_frame);
  s.hard_offset = j.value("hard_offset", d.hard_offset);
  s.seed = j.value("seed", d.seed);
  s.sigma_cam = d.sigma_cam;
  s.drift_frames = d.drift_frames;
  if (j.contains("camera")) {
    s.sigma_cam = j.at("camera").value("sigma_cam", d.sigma_cam);
    s.drift_frames = j.at("camera").value("drift_frames", d.drift_frames);
  }
  s.sigma_fb = d.sigma_fb;
  s.fb_domain = d.fb_domain;
  s.crop_jitter = d.crop_jitter;
  s.fb_outlier_rate = d.fb_outlier_rate;
  s.fb_outlier_sigma = d.fb_outlier_sigma;
  if (j.contains("facebook")) {
    const auto& fb = j.at("facebook");
    s.sigma_fb = fb.value("sigma_fb", d.sigma_fb);
    s.fb_domain = fb.value("domain_offset", d.fb_domain);
    s.crop_jitter = fb.value("crop_jitter", d.crop_jitter);
    s.fb_outlier_rate = fb.value("outlier_rate", d.fb_outlier_rate);
    s.fb_outlier_sigma = fb.value("outlier_sigma", d.fb_outlier_sigma);
  }
}

inline CorpusSpec load_corpus_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus spec " + path.string());
  try {
    return nlohmann::json::parse(in).get<CorpusSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad corpus spec " + path.string() + ": " + e.what());
  }
}

enum class Condition { Easy, Hard };

inline const char* to_string(Condition c) { return c == Condition::Easy ? "easy" : "hard"; }

struct SampleKey {
  std::size_t identity = 0;
  Source source = Source::Camera;
  std::size_t session = 0;  // camera session; unused for facebook
  std::size_t index = 0;    // frame within session, or facebook photo number
  Condition condition = Condition::Easy;

  auto operator<=>(const SampleKey&) const = default;
};

class Corpus {
 public:
  static constexpr int kBasisOrder = 6;  // cosine patterns with 1 <= a+b <= order
  // Session and out-of-lab shifts act on the lowest-frequency patterns only.
  static constexpr std::size_t kLightingDims = 5;

  explicit Corpus(CorpusSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (int s = 1; s <= kBasisOrder; ++s) {
      for (int a = 0; a <= s; ++a) basis_.push_back({a, s - a});
    }
    const std::size_t total = spec_.n_identities + spec_.n_strangers;
    for (std::size_t i = 0; i < total; ++i) {
      identity_.push_back(latent({1, i}, spec_.sigma_identity));
      domain_.push_back(latent({2, i}, spec_.fb_domain));
    }
    hard_ = latent({3}, 1.0, kLightingDims);
    const double norm = std::sqrt(dot(hard_, hard_));
    for (auto& v : hard_) v *= norm > 0 ? spec_.hard_offset / norm : 0.0;
  }

  const CorpusSpec& spec() const { return spec_; }
  std::size_t known() const { return spec_.n_identities; }
  std::size_t strangers() const { return spec_.n_strangers; }
  std::size_t dims() const { return basis_.size(); }

  static PersonId label(std::size_t identity) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "id%02zu", identity);
    return buf;
  }
  PersonId identity_label(std::size_t identity) const { return label(identity); }

  bool is_stranger(std::size_t identity) const { return identity >= spec_.n_identities; }

  bool is_outlier(const SampleKey& k) const {
    if (k.source != Source::Facebook) return false;
    auto rng = make_stream(spec_.seed, {8, k.identity, k.index});
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec_.fb_outlier_rate;
  }

  // Appearance vector of a sample before rendering.
  std::vector<double> appearance(const SampleKey& k) const {
    check(k);
    std::vector<double> z = identity_.at(k.identity);
    if (k.source == Source::Camera) {
      add(z, latent({4, k.identity, k.session}, spec_.sigma_session, kLightingDims));
      add(z, drift(k));
    } else {
      add(z, domain_.at(k.identity));
      add(z, latent({6, k.identity, k.index}, spec_.sigma_fb));
      if (is_outlier(k)) add(z, latent({9, k.identity, k.index}, spec_.fb_outlier_sigma));
    }
    if (k.condition == Condition::Hard) add(z, hard_);
    return z;
  }

  // Rendered skin-toned crop; the face rect is the whole image.
  facekit::ImageBuffer render(const SampleKey& k) const {
    const auto z = appearance(k);
    auto rng = make_stream(spec_.seed, {7, k.identity, static_cast<std::uint64_t>(k.source),
                                        k.session, k.index});
    int dx = 0, dy = 0;
    if (k.source == Source::Facebook && spec_.crop_jitter > 0) {
      std::uniform_int_distribution<int> jit(-spec_.crop_jitter, spec_.crop_jitter);
      dx = jit(rng);
      dy = jit(rng);
    }
    constexpr int R = facekit::kRaster;
    // Separable cosine tables at the jittered sampling positions.
    std::vector<double> cx((kBasisOrder + 1) * R), cy((kBasisOrder + 1) * R);
    for (int a = 0; a <= kBasisOrder; ++a) {
      const double scale = a == 0 ? 1.0 : std::numbers::sqrt2;
      for (int p = 0; p < R; ++p) {
        cx[a * R + p] = scale * std::cos(std::numbers::pi * a * (p + 0.5 + dx) / R);
        cy[a * R + p] = scale * std::cos(std::numbers::pi * a * (p + 0.5 + dy) / R);
      }
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    facekit::ImageBuffer img(R, R);
    for (int y = 0; y < R; ++y) {
      for (int x = 0; x < R; ++x) {
        double p = mean_face(x + 0.5 + dx, y + 0.5 + dy);
        for (std::size_t b = 0; b < basis_.size(); ++b) {
          p += z[b] * cx[basis_[b].first * R + x] * cy[basis_[b].second * R + y];
        }
        const double g = std::clamp(128.0 + kContrast * p + spec_.sigma_frame * noise(rng),
                                    0.0, 255.0);
        img.at(x, y) = tint(g);
      }
    }
    return img;
  }

  PreprocessedFace face(const SampleKey& k) const {
    const auto img = render(k);
    auto out = facekit::preprocess(img, {0, 0, facekit::kRaster, facekit::kRaster});
    if (auto* f = std::get_if<PreprocessedFace>(&out)) return std::move(*f);
    throw Error("synthetic crop failed the skin gate");
  }

  // Skin-toned RGB for a gray level; every level passes the skin rule.
  static facekit::Rgb tint(double g) {
    auto u8 = [](double v) { return static_cast<std::uint8_t>(std::lround(v)); };
    return {u8(100.0 + 0.60 * g), u8(45.0 + 0.45 * g), u8(25.0 + 0.30 * g)};
  }

 private:
  static constexpr double kContrast = 38.0;

  static double mean_face(double x, double y) {
    constexpr double R = facekit::kRaster;
    auto blob = [](double x, double y, double cx, double cy, double sx, double sy) {
      const double u = (x - cx) / sx, v = (y - cy) / sy;
      return std::exp(-0.5 * (u * u + v * v));
    };
    double v = 0.6 * blob(x, y, R / 2, R / 2, R * 0.28, R * 0.34);
    v -= 0.9 * blob(x, y, R * 0.35, R * 0.40, R * 0.06, R * 0.04);
    v -= 0.9 * blob(x, y, R * 0.65, R * 0.40, R * 0.06, R * 0.04);
    v -= 0.6 * blob(x, y, R * 0.50, R * 0.72, R * 0.12, R * 0.035);
    v += 0.3 * blob(x, y, R * 0.50, R * 0.55, R * 0.04, R * 0.10);
    return v;
  }

  // Random pattern coefficients whose expected total RMS is `sigma`, spread
  // over the first `dims` patterns (all of them by default).
  std::vector<double> latent(std::initializer_list<std::uint64_t> key, double sigma,
                             std::size_t dims = 0) const {
    std::vector<double> z(basis_.size(), 0.0);
    if (sigma <= 0) return z;
    dims = dims == 0 ? basis_.size() : std::min(dims, basis_.size());
    auto rng = make_stream(spec_.seed, key);
    std::normal_distribution<double> n(0.0, sigma / std::sqrt(static_cast<double>(dims)));
    for (std::size_t i = 0; i < dims; ++i) z[i] = n(rng);
    return z;
  }

  // Camera jitter wanders slowly within a session: independent anchors every
  // drift_frames frames, blended so the variance stays sigma_cam^2.
  std::vector<double> drift(const SampleKey& k) const {
    const auto len = static_cast<std::size_t>(spec_.drift_frames);
    const std::size_t j = k.index / len;
    const double f = static_cast<double>(k.index % len) / static_cast<double>(len);
    auto a = latent({5, k.identity, k.session, j}, spec_.sigma_cam);
    if (f == 0.0) return a;
    const auto b = latent({5, k.identity, k.session, j + 1}, spec_.sigma_cam);
    const double ca = std::cos(f * std::numbers::pi / 2), cb = std::sin(f * std::numbers::pi / 2);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = ca * a[i] + cb * b[i];
    return a;
  }

  static void add(std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  void check(const SampleKey& k) const {
    if (k.identity >= identity_.size()) throw InvalidArgument("identity out of range");
    if (k.source == Source::Camera) {
      if (k.session >= spec_.sessions_per_identity || k.index >= spec_.frames_per_session) {
        throw InvalidArgument("camera frame out of range");
      }
    } else if (k.index >= spec_.facebook_per_identity) {
      throw InvalidArgument("facebook photo out of range");
    }
  }

  CorpusSpec spec_;
  std::vector<std::pair<int, int>> basis_;
  std::vector<std::vector<double>> identity_;
  std::vector<std::vector<double>> domain_;
  std::vector<double> hard_;
};

struct CorpusSample {
  SampleKey key;
  PersonId label;
  bool stranger = false;
};

// Full listing of the corpus, in a fixed order.
inline std::vector<CorpusSample> corpus_manifest(const Corpus& c) {
  std::vector<CorpusSample> out;
  const auto& s = c.spec();
  for (std::size_t i = 0; i < s.n_identities + s.n_strangers; ++i) {
    for (std::size_t sess = 0; sess < s.sessions_per_identity; ++sess) {
      for (std::size_t f = 0; f < s.frames_per_session; ++f) {
        out.push_back({{i, Source::Camera, sess, f}, Corpus::label(i), c.is_stranger(i)});
      }
    }
    for (std::size_t f = 0; f < s.facebook_per_identity; ++f) {
      out.push_back({{i, Source::Facebook, 0, f}, Corpus::label(i), c.is_stranger(i)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
  std::string experiment;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::map<std::string, std::string> summary;

  std::string csv() const {
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << "\n";
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return out.str();
  }

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << csv();
  }

  // Column lookup for a row; throws on an unknown column.
  const std::string& cell(std::size_t row, const std::string& column) const {
    auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) throw InvalidArgument("no column '" + column + "'");
    return rows.at(row).at(static_cast<std::size_t>(it - columns.begin()));
  }
};

inline std::string fmt_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared experiment plumbing

namespace detail {

using Registry = recognizer::Registry<>;

inline recognizer::TrainingSet training_set(const Corpus& c, std::size_t identity,
                                            const std::vector<SampleKey>& keys) {
  recognizer::TrainingSet set;
  set.person_id = Corpus::label(identity);
  set.cap = std::max(recognizer::kOfflineCap, keys.size());
  for (const auto& k : keys) {
    set.entries.push_back({c.face(k), k.source, "s" + std::to_string(k.session),
                           static_cast<Timestamp>(k.session * 100000 + k.index)});
  }
  return set;
}

// Camera frames for the lab training set: round-robin over every session,
// frames [0, count / sessions).
inline std::vector<SampleKey> lab_training_keys(const CorpusSpec& s, std::size_t identity,
                                                std::size_t count) {
  const std::size_t sessions = s.sessions_per_identity;
  std::vector<SampleKey> keys;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t frame = n / sessions;
    if (frame >= s.frames_per_session) throw InvalidArgument("not enough frames per session");
    keys.push_back({identity, Source::Camera, n % sessions, frame});
  }
  return keys;
}

inline Registry lab_registry(const Corpus& c, std::size_t train_frames) {
  Registry reg;
  for (std::size_t i = 0; i < c.known(); ++i) {
    reg.retrain(training_set(c, i, lab_training_keys(c.spec(), i, train_frames)));
  }
  return reg;
}

// Held-out lab frames: contiguous blocks from each lab session, after the
// frames used for training. The hard track is the same frames shifted out of
// the lab.
inline std::vector<SampleKey> test_track_keys(const CorpusSpec& s, std::size_t identity,
                                              std::size_t train_frames, std::size_t frames,
                                              Condition cond) {
  const std::size_t sessions = s.sessions_per_identity;
  const std::size_t first = (train_frames + sessions - 1) / sessions;
  const std::size_t block = (frames + sessions - 1) / sessions;
  if (first + block > s.frames_per_session) throw InvalidArgument("not enough test frames");
  std::vector<SampleKey> keys;
  for (std::size_t n = 0; n < frames; ++n) {
    keys.push_back({identity, Source::Camera, n / block, first + n % block, cond});
  }
  return keys;
}

inline std::vector<ScoreVector> test_track(const Corpus& c, const Registry& reg,
                                           std::size_t identity, std::size_t train_frames,
                                           std::size_t frames, Condition cond) {
  std::vector<ScoreVector> out;
  for (const auto& k : test_track_keys(c.spec(), identity, train_frames, frames, cond)) {
    out.push_back(reg.score_all(c.face(k)));
  }
  return out;
}

// Means of every length-`w` sliding window over a track.
inline std::vector<ScoreVector> window_means(const std::vector<ScoreVector>& track,
                                             std::size_t w) {
  std::vector<ScoreVector> out;
  if (w == 0 || w > track.size()) return out;
  recognizer::EvidenceWindow win(w);
  for (const auto& sv : track) {
    win.push(sv);
    if (win.full()) out.push_back(win.mean());
  }
  return out;
}

inline double pct(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline std::vector<std::size_t> default_windows() { return {1, 5, 10, 15, 20, 25, 30, 35, 40}; }

inline std::vector<double> default_thetas() {
  std::vector<double> t;
  for (int i = 0; i <= 40; ++i) t.push_back(0.01 * i);
  return t;
}

// ---------------------------------------------------------------------------
// Threshold sweep: known-face accuracy and stranger false accepts at a full
// window, per theta. False accepts are counted per full-window decision.

struct ThresholdSweepConfig {
  std::vector<double> thetas = default_thetas();
  std::size_t window = recognizer::kDefaultWindow;
  std::size_t train_frames = 100;
  std::size_t test_frames = 100;
};

inline ExperimentReport run_threshold_sweep(const Corpus& c, const ThresholdSweepConfig& cfg) {
  if (c.strangers() == 0) throw InvalidArgument("threshold sweep needs stranger identities");
  if (cfg.thetas.empty()) throw InvalidArgument("threshold sweep needs at least one theta");
  auto reg = detail::lab_registry(c, cfg.train_frames);

  struct Track {
    bool stranger;
    PersonId truth;
    std::vector<ScoreVector> means;
  };
  std::vector<Track> tracks;
  for (std::size_t i = 0; i < c.known() + c.strangers(); ++i) {
    auto track = detail::test_track(c, reg, i, cfg.train_frames, cfg.test_frames, Condition::Easy);
    tracks.push_back({c.is_stranger(i), Corpus::label(i), detail::window_means(track, cfg.window)});
  }

  ExperimentReport rep;
  rep.experiment = "threshold";
  rep.columns = {"theta", "window", "known_decisions", "known_correct", "known_accuracy",
                 "known_unknown_rate", "stranger_decisions", "stranger_accepted",
                 "false_accept_rate", "recommended"};
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_row = 0;
  for (double theta : cfg.thetas) {
    recognizer::DecisionPolicy policy;
    policy.theta = theta;
    policy.window = cfg.window;
    std::size_t kn = 0, kc = 0, ku = 0, sn = 0, sa = 0;
    for (const auto& t : tracks) {
      for (const auto& m : t.means) {
        const auto d = recognizer::decide_mean(m, policy);
        const bool accepted = d.verdict == recognizer::Verdict::Identified;
        if (t.stranger) {
          ++sn;
          sa += accepted ? 1 : 0;
        } else {
          ++kn;
          kc += accepted && *d.best == t.truth ? 1 : 0;
          ku += accepted ? 0 : 1;
        }
      }
    }
    const double acc = detail::pct(kc, kn), fa = detail::pct(sa, sn);
    if (acc - fa > best_score) {
      best_score = acc - fa;
      best_row = rep.rows.size();
    }
    rep.rows.push_back({fmt_num(theta), std::to_string(cfg.window), std::to_string(kn),
                        std::to_string(kc), fmt_num(acc), fmt_num(detail::pct(ku, kn)),
                        std::to_string(sn), std::to_string(sa), fmt_num(fa), "0"});
  }
  rep.rows[best_row].back() = "1";
  rep.summary["recommended_theta"] = rep.rows[best_row][0];
  return rep;
}

inline double recommended_theta(const ExperimentReport& threshold_report) {
  return std::stod(threshold_report.summary.at("recommended_theta"));
}

// ---------------------------------------------------------------------------
// Window sweep: closed-set accuracy of the accumulated decision per window
// size, on the in-lab (easy) and shifted (hard) test sessions.

struct WindowSweepConfig {
  std::vector<std::size_t> windows = default_windows();
  std::size_t train_frames = 100;
  std::size_t test_frames = 100;
};

inline ExperimentReport run_window_sweep(const Corpus& c, const WindowSweepConfig& cfg) {
  for (auto w : cfg.windows) {
    if (w == 0) throw InvalidArgument("window size must be at least 1");
    if (w > cfg.test_frames) {
      throw InvalidArgument("window " + std::to_string(w) + " exceeds the available frames");
    }
  }
  auto reg = detail::lab_registry(c, cfg.train_frames);
  recognizer::DecisionPolicy closed_set;
  closed_set.theta = 0.0;

  ExperimentReport rep;
  rep.experiment = "window";
  rep.columns = {"window", "condition", "decisions", "correct", "accuracy"};
  for (auto cond : {Condition::Easy, Condition::Hard}) {
    std::vector<std::vector<ScoreVector>> tracks;
    for (std::size_t i = 0; i < c.known(); ++i) {
      tracks.push_back(detail::test_track(c, reg, i, cfg.train_frames, cfg.test_frames, cond));
    }
    for (auto w : cfg.windows) {
      std::size_t n = 0, ok = 0;
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        for (const auto& m : detail::window_means(tracks[i], w)) {
          closed_set.window = w;
          const auto d = recognizer::decide_mean(m, closed_set);
          ++n;
          ok += d.best && *d.best == Corpus::label(i) ? 1 : 0;
        }
      }
      rep.rows.push_back({std::to_string(w), to_string(cond), std::to_string(n),
                          std::to_string(ok), fmt_num(detail::pct(ok, n))});
    }
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const auto& a, const auto& b) {
    return std::stoul(a[0]) < std::stoul(b[0]);
  });
  return rep;
}

// ---------------------------------------------------------------------------
// Training cost: wall time of an offline retrain per training-set size.

struct TrainingCostConfig {
  std::vector<std::size_t> sizes = {1, 10, 30, 100, 400};
  std::size_t repeats = 9;
  std::size_t min_batch_seconds_us = 2000;  // each timed sample runs at least this long
};

inline ExperimentReport run_training_cost(const Corpus& c, const TrainingCostConfig& cfg) {
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) {
    throw InvalidArgument("training sizes must be ascending");
  }
  const std::size_t largest = cfg.sizes.empty() ? 0 : cfg.sizes.back();
  const auto keys = detail::lab_training_keys(c.spec(), 0, largest);
  const auto pool = detail::training_set(c, 0, keys);

  ExperimentReport rep;
  rep.experiment = "cost";
  rep.columns = {"size", "repeats", "median_seconds", "min_seconds", "max_seconds",
                 "online_cap", "offline_cap"};
  using clock = std::chrono::steady_clock;
  for (auto size : cfg.sizes) {
    auto set = pool;
    set.entries.resize(size);
    // Calibrate a batch so timer resolution does not dominate small sizes.
    std::size_t batch = 1;
    for (;;) {
      const auto t0 = clock::now();
      for (std::size_t b = 0; b < batch; ++b) {
        auto cls = recognizer::train(set.person_id, set, recognizer::RetrainMode::Offline);
        if (cls.templates.size() != size) throw Error("unexpected template count");
      }
      const auto us =
          std::chrono::duration_cast<std::chrono::microseconds>(clock::now() - t0).count();
      if (static_cast<std::size_t>(us) >= cfg.min_batch_seconds_us || batch >= (1u << 20)) break;
      batch *= 2;
    }
    std::vector<double> samples;
    for (std::size_t r = 0; r < std::max<std::size_t>(cfg.repeats, 1); ++r) {
      const auto t0 = clock::now();
      for (std::size_t b = 0; b < batch; ++b) {
        auto cls = recognizer::train(set.person_id, set, recognizer::RetrainMode::Offline);
        if (cls.templates.size() != size) throw Error("unexpected template count");
      }
      samples.push_back(std::chrono::duration<double>(clock::now() - t0).count() /
                        static_cast<double>(batch));
    }
    std::sort(samples.begin(), samples.end());
    rep.rows.push_back({std::to_string(size), std::to_string(samples.size()),
                        fmt_num(samples[samples.size() / 2]), fmt_num(samples.front()),
                        fmt_num(samples.back()), std::to_string(recognizer::kOnlineCap),
                        std::to_string(recognizer::kOfflineCap)});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Transfer matrices: accuracy of single-picture closed-set recognition for
// every (training set, test set) pairing of camera and facebook pictures.

enum class CameraTraining { Spread, SingleSession };

inline const char* to_string(CameraTraining t) {
  return t == CameraTraining::Spread ? "spread" : "single_session";
}

inline const std::vector<std::string>& transfer_rows() {
  static const std::vector<std::string> rows = {"cam30", "fb30", "mix30", "mix60"};
  return rows;
}
inline const std::vector<std::string>& transfer_cols() {
  static const std::vector<std::string> cols = {"cam30", "fb30", "both60"};
  return cols;
}

struct TransferCell {
  std::size_t n = 0;
  std::size_t top1 = 0;
  std::size_t top2 = 0;
  double accuracy() const { return detail::pct(top1, n); }
  double top2_accuracy() const { return detail::pct(top2, n); }
};

// 4x3 matrix indexed [row][col] in transfer_rows()/transfer_cols() order.
using TransferMatrix = std::vector<std::vector<TransferCell>>;

struct TransferConfig {
  std::size_t per_set = 30;    // pictures per person per training/test set
  std::size_t sessions = 5;    // camera sessions the spread set is drawn from
};

namespace detail {

struct TransferKeys {
  std::vector<SampleKey> cam_train, fb_train, cam_test, fb_test;
};

inline TransferKeys transfer_keys(const CorpusSpec& s, std::size_t identity,
                                  CameraTraining mode, const TransferConfig& cfg) {
  if (s.sessions_per_identity < cfg.sessions || s.facebook_per_identity < 2 * cfg.per_set) {
    throw InvalidArgument("corpus too small for the transfer experiment");
  }
  const std::size_t per_session = (cfg.per_set + cfg.sessions - 1) / cfg.sessions;
  // Frames [base, base + per_session) of each session are camera test frames;
  // training frames start after them.
  const std::size_t base = 50;
  if (s.frames_per_session < base + per_session + cfg.per_set) {
    throw InvalidArgument("not enough frames per session for the transfer experiment");
  }
  TransferKeys k;
  for (std::size_t n = 0; n < cfg.per_set; ++n) {
    k.cam_test.push_back({identity, Source::Camera, n % cfg.sessions, base + n / cfg.sessions});
    if (mode == CameraTraining::Spread) {
      k.cam_train.push_back(
          {identity, Source::Camera, n % cfg.sessions, base + per_session + n / cfg.sessions});
    } else {
      k.cam_train.push_back({identity, Source::Camera, 0, base + per_session + n});
    }
    k.fb_train.push_back({identity, Source::Facebook, 0, n});
    k.fb_test.push_back({identity, Source::Facebook, 0, cfg.per_set + n});
  }
  return k;
}

}  // namespace detail

inline TransferMatrix transfer_matrix(const Corpus& c, CameraTraining mode,
                                      const TransferConfig& cfg = {}) {
  const std::size_t half = cfg.per_set / 2;
  std::vector<detail::TransferKeys> keys;
  for (std::size_t i = 0; i < c.known(); ++i) {
    keys.push_back(detail::transfer_keys(c.spec(), i, mode, cfg));
  }
  std::map<SampleKey, PreprocessedFace> cache;
  auto face = [&](const SampleKey& k) -> const PreprocessedFace& {
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, c.face(k)).first;
    return it->second;
  };
  auto classifier = [&](std::size_t i, std::size_t row) {
    std::vector<SampleKey> ks;
    const auto& k = keys[i];
    switch (row) {
      case 0: ks = k.cam_train; break;
      case 1: ks = k.fb_train; break;
      case 2:
        // Every other picture of each set, so the half covers the same span.
        for (std::size_t n = 0; n < half; ++n) ks.push_back(k.cam_train[2 * n]);
        for (std::size_t n = 0; n < half; ++n) ks.push_back(k.fb_train[2 * n]);
        break;
      default:
        ks = k.cam_train;
        ks.insert(ks.end(), k.fb_train.begin(), k.fb_train.end());
    }
    recognizer::PersonClassifier cls;
    cls.person_id = Corpus::label(i);
    for (const auto& key : ks) cls.templates.push_back(face(key));
    return cls;
  };

  TransferMatrix m(4, std::vector<TransferCell>(3));
  for (std::size_t row = 0; row < 4; ++row) {
    detail::Registry reg;
    for (std::size_t i = 0; i < c.known(); ++i) reg.install(classifier(i, row));
    for (std::size_t i = 0; i < c.known(); ++i) {
      const auto truth = Corpus::label(i);
      for (int src = 0; src < 2; ++src) {
        const auto& tests = src == 0 ? keys[i].cam_test : keys[i].fb_test;
        for (const auto& key : tests) {
          const auto [best, second] = recognizer::top_two(reg.score_all(face(key)));
          const bool hit1 = best == truth;
          const bool hit2 = hit1 || (second && *second == truth);
          for (std::size_t col : {static_cast<std::size_t>(src), std::size_t{2}}) {
            auto& cell = m[row][col];
            ++cell.n;
            cell.top1 += hit1 ? 1 : 0;
            cell.top2 += hit2 ? 1 : 0;
          }
        }
      }
    }
  }
  return m;
}

inline ExperimentReport run_transfer_matrix(const Corpus& c, const TransferConfig& cfg = {}) {
  ExperimentReport rep;
  rep.experiment = "transfer";
  rep.columns = {"camera_training", "train_set", "test_set", "n", "correct", "accuracy",
                 "top2_correct", "top2_accuracy"};
  for (auto mode : {CameraTraining::SingleSession, CameraTraining::Spread}) {
    const auto m = transfer_matrix(c, mode, cfg);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t col = 0; col < 3; ++col) {
        const auto& cell = m[r][col];
        rep.rows.push_back({to_string(mode), transfer_rows()[r], transfer_cols()[col],
                            std::to_string(cell.n), std::to_string(cell.top1),
                            fmt_num(cell.accuracy()), std::to_string(cell.top2),
                            fmt_num(cell.top2_accuracy())});
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Calibration helpers used by the service and the CLI.

// Default friendship bias: friend = one std-dev of the pooled per-frame score
// values on the lab test session, mutual = twice that.
inline recognizer::BiasLevels calibrate_bias(const Corpus& c, std::size_t frames = 25) {
  auto reg = detail::lab_registry(c, 100);
  std::vector<double> all;
  for (std::size_t i = 0; i < c.known(); ++i) {
    for (const auto& sv : detail::test_track(c, reg, i, 100, frames, Condition::Easy)) {
      for (const auto& [_, v] : sv) all.push_back(v);
    }
  }
  double mean = 0.0;
  for (double v : all) mean += v;
  mean /= static_cast<double>(all.size());
  double sq = 0.0;
  for (double v : all) sq += (v - mean) * (v - mean);
  const double delta = std::sqrt(sq / static_cast<double>(all.size()));
  return {2 * delta, delta, 0.0};
}

}  // namespace facebots::harness
