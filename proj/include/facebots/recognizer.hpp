#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "facebots/common.hpp"
#include "facebots/facekit.hpp"

namespace facebots::recognizer {

using facekit::PreprocessedFace;

inline constexpr std::size_t kOnlineCap = 30;
inline constexpr std::size_t kOfflineCap = 400;
inline constexpr std::size_t kDefaultWindow = 25;
// Threshold reported for the original HMM score scale. Our baseline scorer
// lives on a different scale, so deployments should recalibrate it with the
// threshold sweep in the harness.
inline constexpr double kAuthorsTheta = 1.2;

enum class Source { Camera, Facebook };

inline const char* to_string(Source s) {
  return s == Source::Camera ? "camera" : "facebook";
}

inline Source source_from_string(const std::string& s) {
  if (s == "camera") return Source::Camera;
  if (s == "facebook") return Source::Facebook;
  throw InvalidArgument("unknown source '" + s + "'");
}

struct TrainingEntry {
  PreprocessedFace face;
  Source source = Source::Camera;
  SessionId session_id;
  Timestamp timestamp = 0;
};

struct TrainingSet {
  PersonId person_id;
  std::vector<TrainingEntry> entries;
  std::size_t cap = kOfflineCap;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct AddEntry {
  TrainingEntry entry;
};
struct RemoveEntry {
  std::size_t index = 0;
};
struct PruneOldest {
  std::size_t to_size = 0;
};
using TrainingAction = std::variant<AddEntry, RemoveEntry, PruneOldest>;

namespace detail {

// Indices of the `keep` most recent entries, in original order. Ties on
// timestamp favour the later position.
inline std::vector<std::size_t> newest_indices(const std::vector<TrainingEntry>& entries,
                                               std::size_t keep) {
  std::vector<std::size_t> idx(entries.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (keep >= idx.size()) return idx;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return entries[a].timestamp < entries[b].timestamp;
  });
  idx.erase(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline TrainingSet manage_training_set(TrainingSet set, const TrainingAction& action) {
  std::visit(
      [&](const auto& a) {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, AddEntry>) {
          if (!set.entries.empty() && a.entry.face.size() != set.entries.front().face.size()) {
            throw DimensionError("training face length differs from the set");
          }
          if (a.entry.face.mask.size() != a.entry.face.values.size()) {
            throw DimensionError("training face mask length mismatch");
          }
          if (set.entries.size() >= set.cap) {
            throw InvalidArgument("training set is at its cap of " + std::to_string(set.cap));
          }
          set.entries.push_back(a.entry);
        } else if constexpr (std::is_same_v<A, RemoveEntry>) {
          if (a.index >= set.entries.size()) {
            throw std::out_of_range("training entry index " + std::to_string(a.index) +
                                    " out of range");
          }
          set.entries.erase(set.entries.begin() + static_cast<std::ptrdiff_t>(a.index));
        } else {
          std::vector<TrainingEntry> kept;
          for (auto i : detail::newest_indices(set.entries, a.to_size)) {
            kept.push_back(std::move(set.entries[i]));
          }
          set.entries = std::move(kept);
        }
      },
      action);
  return set;
}

enum class RetrainMode { Online, Offline };

inline std::size_t cap_for(RetrainMode mode) {
  return mode == RetrainMode::Online ? kOnlineCap : kOfflineCap;
}

// Immutable snapshot of a training set.
struct PersonClassifier {
  PersonId person_id;
  std::vector<PreprocessedFace> templates;
  Timestamp trained_at = 0;
};

// Builds a classifier from the newest entries that fit the mode's cap.
inline PersonClassifier train(const PersonId& person_id, const TrainingSet& set,
                              RetrainMode mode = RetrainMode::Offline,
                              Timestamp trained_at = 0) {
  if (set.empty()) throw InvalidArgument("cannot train '" + person_id + "' on an empty set");
  PersonClassifier c;
  c.person_id = person_id;
  c.trained_at = trained_at;
  const auto dim = set.entries.front().face.size();
  for (auto i : detail::newest_indices(set.entries, cap_for(mode))) {
    const auto& face = set.entries[i].face;
    if (face.size() != dim || face.mask.size() != dim) {
      throw DimensionError("training faces have inconsistent lengths");
    }
    c.templates.push_back(face);
  }
  return c;
}

template <class S>
concept FaceScorer = requires(const S& s, const PersonClassifier& c, const PreprocessedFace& f) {
  { s(c, f) } -> std::convertible_to<double>;
};

// Negative nearest-template mean squared error over the probe's in-mask
// entries. 0 is a perfect match; everything else is negative.
struct NearestTemplateScorer {
  double operator()(const PersonClassifier& c, const PreprocessedFace& probe) const {
    if (c.templates.empty()) throw InvalidArgument("classifier has no templates");
    if (probe.mask.size() != probe.values.size()) {
      throw DimensionError("probe mask length mismatch");
    }
    const std::size_t n = probe.mask_count();
    if (n == 0) throw DimensionError("probe has an empty mask");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : c.templates) {
      if (t.values.size() != probe.values.size()) {
        throw DimensionError("probe length " + std::to_string(probe.values.size()) +
                             " differs from template length " +
                             std::to_string(t.values.size()));
      }
      double acc = 0.0;
      for (std::size_t i = 0; i < probe.values.size(); ++i) {
        const double d = probe.values[i] - t.values[i];
        acc += probe.mask[i] ? d * d : 0.0;
      }
      best = std::min(best, acc);
    }
    return -best / static_cast<double>(n);
  }
};

using ScoreVector = std::map<PersonId, double>;

// Per-person classifiers. Concurrent readers score against immutable
// snapshots; retrains swap a whole snapshot under the write lock.
template <FaceScorer Scorer = NearestTemplateScorer>
class Registry {
 public:
  explicit Registry(Scorer scorer = {}) : scorer_(std::move(scorer)) {}

  Registry(const Registry& other) : scorer_(other.scorer_) {
    std::shared_lock lock(other.mutex_);
    classifiers_ = other.classifiers_;
  }
  Registry& operator=(const Registry& other) {
    if (this != &other) {
      auto copy = [&] {
        std::shared_lock lock(other.mutex_);
        return other.classifiers_;
      }();
      std::unique_lock lock(mutex_);
      scorer_ = other.scorer_;
      classifiers_ = std::move(copy);
    }
    return *this;
  }

  void install(PersonClassifier classifier) {
    auto ptr = std::make_shared<const PersonClassifier>(std::move(classifier));
    std::unique_lock lock(mutex_);
    classifiers_[ptr->person_id] = std::move(ptr);
  }

  void retrain(const TrainingSet& set, RetrainMode mode = RetrainMode::Offline,
               Timestamp trained_at = 0) {
    install(train(set.person_id, set, mode, trained_at));
  }

  bool remove(const PersonId& id) {
    std::unique_lock lock(mutex_);
    return classifiers_.erase(id) > 0;
  }

  std::shared_ptr<const PersonClassifier> classifier(const PersonId& id) const {
    std::shared_lock lock(mutex_);
    auto it = classifiers_.find(id);
    if (it == classifiers_.end()) throw NotFound("no classifier for '" + id + "'");
    return it->second;
  }

  std::vector<PersonId> persons() const {
    std::shared_lock lock(mutex_);
    std::vector<PersonId> out;
    for (const auto& [id, _] : classifiers_) out.push_back(id);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return classifiers_.size();
  }

  double score(const PersonClassifier& c, const PreprocessedFace& face) const {
    return scorer_(c, face);
  }

  ScoreVector score_all(const PreprocessedFace& face) const {
    auto snapshot = [&] {
      std::shared_lock lock(mutex_);
      return classifiers_;
    }();
    if (snapshot.empty()) throw InvalidArgument("no trained classifiers");
    ScoreVector sv;
    for (const auto& [id, c] : snapshot) sv.emplace(id, scorer_(*c, face));
    return sv;
  }

 private:
  Scorer scorer_;
  mutable std::shared_mutex mutex_;
  std::map<PersonId, std::shared_ptr<const PersonClassifier>> classifiers_;
};

// Fixed-size equal-weight moving window over score vectors.
class EvidenceWindow {
 public:
  explicit EvidenceWindow(std::size_t window = kDefaultWindow) : window_(window) {
    if (window_ < 1) throw InvalidArgument("window size must be at least 1");
  }

  void push(const ScoreVector& sv) {
    if (!buffer_.empty()) {
      const auto& ref = buffer_.front();
      bool same = ref.size() == sv.size();
      for (auto a = ref.begin(), b = sv.begin(); same && a != ref.end(); ++a, ++b) {
        same = a->first == b->first;
      }
      if (!same) throw InvalidArgument("score vector persons differ from the window's");
    }
    if (buffer_.size() == window_) buffer_.pop_front();
    buffer_.push_back(sv);
    recompute();
  }

  void reset() {
    buffer_.clear();
    mean_.clear();
  }

  std::size_t window() const { return window_; }
  std::size_t size() const { return buffer_.size(); }
  bool empty() const { return buffer_.empty(); }
  bool full() const { return buffer_.size() == window_; }
  const ScoreVector& mean() const { return mean_; }
  const std::deque<ScoreVector>& buffer() const { return buffer_; }

 private:
  void recompute() {
    mean_.clear();
    for (const auto& [id, _] : buffer_.front()) {
      double sum = 0.0;
      for (const auto& sv : buffer_) sum += sv.at(id);
      mean_[id] = sum / static_cast<double>(buffer_.size());
    }
  }

  std::size_t window_;
  std::deque<ScoreVector> buffer_;
  ScoreVector mean_;
};

inline EvidenceWindow push_evidence(EvidenceWindow win, const ScoreVector& sv) {
  win.push(sv);
  return win;
}

struct DecisionPolicy {
  double theta = kAuthorsTheta;
  double min_win = -std::numeric_limits<double>::infinity();
  std::size_t window = kDefaultWindow;

  void validate() const {
    if (!(theta >= 0.0)) throw InvalidArgument("theta must be non-negative");
    if (window < 1) throw InvalidArgument("window size must be at least 1");
  }
};

enum class Verdict { Identified, Unknown, Provisional };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Identified: return "identified";
    case Verdict::Unknown: return "unknown";
    case Verdict::Provisional: return "provisional";
  }
  return "?";
}

struct Decision {
  Verdict verdict = Verdict::Unknown;
  std::optional<PersonId> best;    // Identified winner, or Provisional best-so-far
  std::optional<PersonId> second;  // Identified runner-up
  double spread = 0.0;             // population std-dev of the mean scores

  static Decision identified(PersonId best, std::optional<PersonId> second, double spread) {
    return {Verdict::Identified, std::move(best), std::move(second), spread};
  }
  static Decision unknown(double spread) { return {Verdict::Unknown, {}, {}, spread}; }
  static Decision provisional(PersonId best, double spread) {
    return {Verdict::Provisional, std::move(best), {}, spread};
  }

  bool operator==(const Decision&) const = default;
};

inline double population_std(const ScoreVector& sv) {
  if (sv.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [_, v] : sv) sum += v;
  const double mean = sum / static_cast<double>(sv.size());
  double sq = 0.0;
  for (const auto& [_, v] : sv) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(sv.size()));
}

// Best and runner-up, ties going to the lower person id.
inline std::pair<PersonId, std::optional<PersonId>> top_two(const ScoreVector& sv) {
  if (sv.empty()) throw InvalidArgument("empty score vector");
  auto best = sv.begin();
  for (auto it = sv.begin(); it != sv.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  std::optional<PersonId> second;
  double second_score = 0.0;
  for (auto it = sv.begin(); it != sv.end(); ++it) {
    if (it == best) continue;
    if (!second || it->second > second_score) {
      second = it->first;
      second_score = it->second;
    }
  }
  return {best->first, second};
}

// Decision on an accumulated mean once the window is full.
inline Decision decide_mean(const ScoreVector& mean, const DecisionPolicy& policy) {
  if (mean.empty()) throw InvalidArgument("cannot decide on an empty score vector");
  const double spread = population_std(mean);
  if (spread < policy.theta) return Decision::unknown(spread);
  auto [best, second] = top_two(mean);
  if (mean.at(best) < policy.min_win) return Decision::unknown(spread);
  return Decision::identified(std::move(best), std::move(second), spread);
}

inline Decision decide(const EvidenceWindow& win, const DecisionPolicy& policy) {
  if (win.empty()) throw InvalidArgument("cannot decide on an empty window");
  if (!win.full()) {
    return Decision::provisional(top_two(win.mean()).first, population_std(win.mean()));
  }
  return decide_mean(win.mean(), policy);
}

// ---------------------------------------------------------------------------
// Friendship priors

struct BiasLevels {
  double mutual = 0.0;
  double friend_of_anchor = 0.0;
  double none = 0.0;

  void validate() const {
    if (none != 0.0) throw InvalidArgument("non-friend bias must be 0");
    if (!(mutual >= friend_of_anchor && friend_of_anchor >= none)) {
      throw InvalidArgument("bias levels must satisfy mutual >= friend >= none");
    }
  }
};

template <class G>
concept FriendGraph = requires(const G& g, const PersonId& id) {
  { g.has_person(id) } -> std::convertible_to<bool>;
  { g.friends(id) } -> std::convertible_to<std::set<PersonId>>;
};

enum class BiasClass { None, Friend, Mutual };

// Friendship class of `candidate` relative to confidently identified anchors.
template <FriendGraph G>
std::map<PersonId, BiasClass> bias_classes(const ScoreVector& sv,
                                           const std::set<PersonId>& anchors,
                                           const G& graph) {
  std::vector<std::set<PersonId>> circles;
  for (const auto& a : anchors) {
    if (!graph.has_person(a)) throw NotFound("unknown anchor '" + a + "'");
    circles.push_back(graph.friends(a));
  }
  std::map<PersonId, BiasClass> out;
  for (const auto& [c, _] : sv) {
    if (anchors.contains(c)) {
      out[c] = BiasClass::None;
      continue;
    }
    int hits = 0;
    for (const auto& circle : circles) hits += circle.contains(c) ? 1 : 0;
    out[c] = hits >= 2 ? BiasClass::Mutual : hits == 1 ? BiasClass::Friend : BiasClass::None;
  }
  return out;
}

// Adds the friendship offsets to every candidate score. Anchors are not
// candidates and keep their scores unchanged.
template <FriendGraph G>
ScoreVector apply_bias(const ScoreVector& sv, const std::set<PersonId>& anchors,
                       const G& graph, const BiasLevels& levels) {
  levels.validate();
  ScoreVector out = sv;
  for (const auto& [c, cls] : bias_classes(sv, anchors, graph)) {
    switch (cls) {
      case BiasClass::Mutual: out[c] += levels.mutual; break;
      case BiasClass::Friend: out[c] += levels.friend_of_anchor; break;
      case BiasClass::None: out[c] += levels.none; break;
    }
  }
  return out;
}

struct FriendshipHypothesis {
  PersonId a;
  PersonId b;
  std::size_t count = 0;
  bool operator==(const FriendshipHypothesis&) const = default;
};

template <class S>
concept TaggedPhotoSource = requires(const S& s, const PersonId& id) {
  { s.are_friends(id, id) } -> std::convertible_to<bool>;
  s.photos();
};

// Pairs co-tagged (confirmed tags only) in at least `min_count` photos that are
// not yet friends, most frequent first.
template <TaggedPhotoSource S>
std::vector<FriendshipHypothesis> co_occurrence_hypotheses(const S& store,
                                                           std::size_t min_count) {
  std::map<std::pair<PersonId, PersonId>, std::size_t> counts;
  for (const auto& photo : store.photos()) {
    std::set<PersonId> people;
    for (const auto& tag : photo.tags) {
      if (tag.confirmed) people.insert(tag.person_id);
    }
    for (auto i = people.begin(); i != people.end(); ++i) {
      for (auto j = std::next(i); j != people.end(); ++j) ++counts[{*i, *j}];
    }
  }
  std::vector<FriendshipHypothesis> out;
  for (const auto& [pair, n] : counts) {
    if (n < min_count || store.are_friends(pair.first, pair.second)) continue;
    out.push_back({pair.first, pair.second, n});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& x, const auto& y) { return x.count > y.count; });
  return out;
}

}  // namespace facebots::recognizer
