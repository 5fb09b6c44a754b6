#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/facekit.hpp"

namespace facebots::socialstore {

inline constexpr int kSchemaVersion = 1;

struct PersonInfo {
  std::optional<std::string> affiliation;
  std::optional<std::string> current_location;
  std::optional<std::string> education;
  std::optional<std::string> highschool;
  std::optional<std::string> hometown;
  std::optional<std::string> work_history;

  bool operator==(const PersonInfo&) const = default;

  // Engaged fields of `update` win; the rest are kept.
  void merge(const PersonInfo& update) {
    auto take = [](auto& dst, const auto& src) {
      if (src) dst = src;
    };
    take(affiliation, update.affiliation);
    take(current_location, update.current_location);
    take(education, update.education);
    take(highschool, update.highschool);
    take(hometown, update.hometown);
    take(work_history, update.work_history);
  }
};

struct Person {
  PersonId person_id;
  std::string name;
  bool on_facebook = false;
  bool online = false;
  // When false, the friend list is only readable by the person's friends.
  bool friends_visible = true;
  PersonInfo info;

  bool operator==(const Person&) const = default;
};

struct FriendEdge {
  PersonId a;
  PersonId b;
  auto operator<=>(const FriendEdge&) const = default;
};

inline FriendEdge canonical_edge(const PersonId& x, const PersonId& y) {
  return x < y ? FriendEdge{x, y} : FriendEdge{y, x};
}

struct StatusPost {
  PersonId person_id;
  std::string text;
  Timestamp timestamp = 0;
  bool operator==(const StatusPost&) const = default;
};

struct EventItem {
  PersonId person_id;
  std::string title;
  Timestamp timestamp = 0;
  bool operator==(const EventItem&) const = default;
};

struct PhotoTag {
  PersonId person_id;
  double cx = 0.0;
  double cy = 0.0;
  facekit::TagOutcome outcome = facekit::TagOutcome::NoDetections;
  std::optional<std::size_t> detection;
  // Bound to a usable frontal face; only confirmed tags count as co-occurrence.
  bool confirmed = false;
  bool operator==(const PhotoTag&) const = default;
};

struct Photo {
  std::string photo_id;
  PersonId owner;
  Timestamp timestamp = 0;
  std::vector<facekit::FaceRect> detections;
  std::vector<PhotoTag> tags;
  bool operator==(const Photo&) const = default;
};

// A raw tag as it arrives from an export: who, and roughly where.
struct RawTag {
  PersonId person_id;
  facekit::TagCenter center;
};

enum class InteractionType {
  Greeting,
  Confirm,
  Deny,
  QueryState,
  NewsItem,
  StatusComment,
  MutualFriendNews,
  Reminder,
  PastEncounterRef,
  ConnectOnline,
  Farewell,
  NameLearned,
};

inline const std::vector<std::pair<InteractionType, const char*>>& interaction_type_names() {
  static const std::vector<std::pair<InteractionType, const char*>> names = {
      {InteractionType::Greeting, "Greeting"},
      {InteractionType::Confirm, "Confirm"},
      {InteractionType::Deny, "Deny"},
      {InteractionType::QueryState, "QueryState"},
      {InteractionType::NewsItem, "NewsItem"},
      {InteractionType::StatusComment, "StatusComment"},
      {InteractionType::MutualFriendNews, "MutualFriendNews"},
      {InteractionType::Reminder, "Reminder"},
      {InteractionType::PastEncounterRef, "PastEncounterRef"},
      {InteractionType::ConnectOnline, "ConnectOnline"},
      {InteractionType::Farewell, "Farewell"},
      {InteractionType::NameLearned, "NameLearned"},
  };
  return names;
}

inline const char* to_string(InteractionType t) {
  for (const auto& [k, v] : interaction_type_names()) {
    if (k == t) return v;
  }
  return "?";
}

inline InteractionType interaction_type_from_string(const std::string& s) {
  for (const auto& [k, v] : interaction_type_names()) {
    if (s == v) return k;
  }
  throw InvalidArgument("unknown interaction type '" + s + "'");
}

enum class Channel { Physical, Online };

inline const char* to_string(Channel c) { return c == Channel::Physical ? "physical" : "online"; }

inline Channel channel_from_string(const std::string& s) {
  if (s == "physical") return Channel::Physical;
  if (s == "online") return Channel::Online;
  throw InvalidArgument("unknown channel '" + s + "'");
}

struct InteractionRecord {
  Timestamp timestamp = 0;
  SessionId session_id;
  InteractionType interaction_type = InteractionType::Greeting;
  std::string description;
  std::map<std::string, bool> flags;
  // Empty while the person has not been identified yet.
  PersonId user_id;
  Channel channel = Channel::Physical;
  bool operator==(const InteractionRecord&) const = default;
};

enum class OutboxChannel { Message, Chat };

inline const char* to_string(OutboxChannel c) {
  return c == OutboxChannel::Message ? "message" : "chat";
}

inline OutboxChannel outbox_channel_from_string(const std::string& s) {
  if (s == "message") return OutboxChannel::Message;
  if (s == "chat") return OutboxChannel::Chat;
  throw InvalidArgument("unknown outbox channel '" + s + "'");
}

struct OutboxMessage {
  PersonId to;
  std::string text;
  Timestamp timestamp = 0;
  OutboxChannel channel = OutboxChannel::Message;
  bool operator==(const OutboxMessage&) const = default;
};

struct Encounter {
  SessionId session_id;
  Timestamp timestamp = 0;
  bool operator==(const Encounter&) const = default;
};

// ---------------------------------------------------------------------------
// JSON mapping. Field names here are the on-disk schema.

inline void to_json(nlohmann::json& j, const PersonInfo& i) {
  j = nlohmann::json::object();
  auto put = [&](const char* k, const std::optional<std::string>& v) {
    if (v) j[k] = *v;
  };
  put("affiliation", i.affiliation);
  put("current_location", i.current_location);
  put("education", i.education);
  put("highschool", i.highschool);
  put("hometown", i.hometown);
  put("work_history", i.work_history);
}

inline void from_json(const nlohmann::json& j, PersonInfo& i) {
  auto get = [&](const char* k, std::optional<std::string>& v) {
    if (j.contains(k) && !j.at(k).is_null()) v = j.at(k).get<std::string>();
  };
  get("affiliation", i.affiliation);
  get("current_location", i.current_location);
  get("education", i.education);
  get("highschool", i.highschool);
  get("hometown", i.hometown);
  get("work_history", i.work_history);
}

inline void to_json(nlohmann::json& j, const Person& p) {
  j = {{"person_id", p.person_id},     {"name", p.name},
       {"on_facebook", p.on_facebook}, {"online", p.online},
       {"friends_visible", p.friends_visible}, {"info", p.info}};
}

inline void from_json(const nlohmann::json& j, Person& p) {
  p.person_id = j.value("person_id", std::string{});
  p.name = j.at("name").get<std::string>();
  p.on_facebook = j.value("on_facebook", false);
  p.online = j.value("online", false);
  p.friends_visible = j.value("friends_visible", true);
  if (j.contains("info")) p.info = j.at("info").get<PersonInfo>();
}

inline void to_json(nlohmann::json& j, const StatusPost& s) {
  j = {{"person_id", s.person_id}, {"text", s.text}, {"timestamp", s.timestamp}};
}
inline void from_json(const nlohmann::json& j, StatusPost& s) {
  s.person_id = j.at("person_id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.timestamp = j.at("timestamp").get<Timestamp>();
}

inline void to_json(nlohmann::json& j, const EventItem& e) {
  j = {{"person_id", e.person_id}, {"title", e.title}, {"timestamp", e.timestamp}};
}
inline void from_json(const nlohmann::json& j, EventItem& e) {
  e.person_id = j.at("person_id").get<std::string>();
  e.title = j.at("title").get<std::string>();
  e.timestamp = j.at("timestamp").get<Timestamp>();
}

inline nlohmann::json rect_to_json(const facekit::FaceRect& r) {
  return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}, {"pose", facekit::to_string(r.pose)}};
}

inline facekit::FaceRect rect_from_json(const nlohmann::json& j) {
  facekit::FaceRect r;
  r.x = j.at("x").get<int>();
  r.y = j.at("y").get<int>();
  r.w = j.at("w").get<int>();
  r.h = j.at("h").get<int>();
  r.pose = facekit::pose_from_string(j.value("pose", std::string{"frontal"}));
  return r;
}

inline void to_json(nlohmann::json& j, const PhotoTag& t) {
  j = {{"person_id", t.person_id},
       {"cx", t.cx},
       {"cy", t.cy},
       {"outcome", facekit::to_string(t.outcome)},
       {"detection", t.detection ? nlohmann::json(*t.detection) : nlohmann::json(nullptr)},
       {"confirmed", t.confirmed}};
}
inline void from_json(const nlohmann::json& j, PhotoTag& t) {
  t.person_id = j.at("person_id").get<std::string>();
  t.cx = j.at("cx").get<double>();
  t.cy = j.at("cy").get<double>();
  t.outcome = facekit::tag_outcome_from_string(j.at("outcome").get<std::string>());
  if (j.contains("detection") && !j.at("detection").is_null()) {
    t.detection = j.at("detection").get<std::size_t>();
  }
  t.confirmed = j.value("confirmed", false);
}

inline void to_json(nlohmann::json& j, const Photo& p) {
  j = {{"photo_id", p.photo_id}, {"owner", p.owner}, {"timestamp", p.timestamp}};
  j["detections"] = nlohmann::json::array();
  for (const auto& r : p.detections) j["detections"].push_back(rect_to_json(r));
  j["tags"] = p.tags;
}
inline void from_json(const nlohmann::json& j, Photo& p) {
  p.photo_id = j.at("photo_id").get<std::string>();
  p.owner = j.at("owner").get<std::string>();
  p.timestamp = j.at("timestamp").get<Timestamp>();
  p.detections.clear();
  for (const auto& r : j.value("detections", nlohmann::json::array())) {
    p.detections.push_back(rect_from_json(r));
  }
  p.tags = j.value("tags", nlohmann::json::array()).get<std::vector<PhotoTag>>();
}

inline void to_json(nlohmann::json& j, const InteractionRecord& r) {
  j = {{"timestamp", r.timestamp},
       {"session_id", r.session_id},
       {"interaction_type", to_string(r.interaction_type)},
       {"description", r.description},
       {"flags", r.flags},
       {"user_id", r.user_id},
       {"channel", to_string(r.channel)}};
}
inline void from_json(const nlohmann::json& j, InteractionRecord& r) {
  r.timestamp = j.at("timestamp").get<Timestamp>();
  r.session_id = j.at("session_id").get<std::string>();
  r.interaction_type = interaction_type_from_string(j.at("interaction_type").get<std::string>());
  r.description = j.value("description", std::string{});
  r.flags = j.value("flags", std::map<std::string, bool>{});
  r.user_id = j.value("user_id", std::string{});
  r.channel = channel_from_string(j.value("channel", std::string{"physical"}));
}

inline void to_json(nlohmann::json& j, const OutboxMessage& m) {
  j = {{"to", m.to}, {"text", m.text}, {"timestamp", m.timestamp},
       {"channel", to_string(m.channel)}};
}
inline void from_json(const nlohmann::json& j, OutboxMessage& m) {
  m.to = j.at("to").get<std::string>();
  m.text = j.at("text").get<std::string>();
  m.timestamp = j.at("timestamp").get<Timestamp>();
  m.channel = outbox_channel_from_string(j.value("channel", std::string{"message"}));
}

// ---------------------------------------------------------------------------

class SocialStore {
 public:
  SocialStore() = default;

  SocialStore(const SocialStore& other) {
    std::shared_lock lock(other.mutex_);
    data_ = other.data_;
  }

  SocialStore& operator=(const SocialStore& other) {
    if (this != &other) {
      Data copy;
      {
        std::shared_lock lock(other.mutex_);
        copy = other.data_;
      }
      std::unique_lock lock(mutex_);
      data_ = std::move(copy);
    }
    return *this;
  }

  // ---- persons and friendships

  PersonId upsert_person(const Person& p) {
    if (p.name.empty()) throw InvalidArgument("person name must not be empty");
    std::unique_lock lock(mutex_);
    PersonId id = p.person_id;
    if (id.empty()) {
      for (const auto& [pid, existing] : data_.persons) {
        if (existing.name == p.name) {
          id = pid;
          break;
        }
      }
    }
    if (id.empty()) {
      std::size_t n = data_.persons.size() + 1;
      while (data_.persons.count("p" + std::to_string(n))) ++n;
      id = "p" + std::to_string(n);
    }
    auto it = data_.persons.find(id);
    if (it == data_.persons.end()) {
      Person fresh = p;
      fresh.person_id = id;
      data_.persons.emplace(id, std::move(fresh));
      data_.friends.emplace(id, std::set<PersonId>{});
    } else {
      auto& cur = it->second;
      cur.name = p.name;
      cur.on_facebook = p.on_facebook;
      cur.online = p.online;
      cur.friends_visible = p.friends_visible;
      cur.info.merge(p.info);
    }
    return id;
  }

  bool has_person(const PersonId& id) const {
    std::shared_lock lock(mutex_);
    return data_.persons.count(id) != 0;
  }

  Person person(const PersonId& id) const {
    std::shared_lock lock(mutex_);
    return person_locked(id);
  }

  std::vector<Person> persons() const {
    std::shared_lock lock(mutex_);
    std::vector<Person> out;
    for (const auto& [_, p] : data_.persons) out.push_back(p);
    return out;
  }

  std::optional<PersonId> find_by_name(const std::string& name) const {
    std::shared_lock lock(mutex_);
    for (const auto& [id, p] : data_.persons) {
      if (p.name == name) return id;
    }
    return std::nullopt;
  }

  void set_online(const PersonId& id, bool online) {
    std::unique_lock lock(mutex_);
    person_mut(id).online = online;
  }

  void add_friendship(const PersonId& a, const PersonId& b) {
    std::unique_lock lock(mutex_);
    check_pair(a, b);
    data_.friends[a].insert(b);
    data_.friends[b].insert(a);
  }

  void remove_friendship(const PersonId& a, const PersonId& b) {
    std::unique_lock lock(mutex_);
    check_pair(a, b);
    data_.friends[a].erase(b);
    data_.friends[b].erase(a);
  }

  bool are_friends(const PersonId& a, const PersonId& b) const {
    std::shared_lock lock(mutex_);
    auto it = data_.friends.find(a);
    return it != data_.friends.end() && it->second.count(b) != 0;
  }

  std::set<PersonId> friends(const PersonId& id) const {
    std::shared_lock lock(mutex_);
    person_locked(id);
    return data_.friends.at(id);
  }

  // The friend list of `target` as `viewer` may read it; none when hidden.
  std::optional<std::set<PersonId>> visible_friends(const PersonId& viewer,
                                                    const PersonId& target) const {
    std::shared_lock lock(mutex_);
    person_locked(viewer);
    const auto& t = person_locked(target);
    const auto& list = data_.friends.at(target);
    if (t.friends_visible || viewer == target || list.count(viewer)) return list;
    return std::nullopt;
  }

  std::set<PersonId> mutual_friends(const PersonId& a, const PersonId& b) const {
    std::shared_lock lock(mutex_);
    person_locked(a);
    person_locked(b);
    const auto& fa = data_.friends.at(a);
    const auto& fb = data_.friends.at(b);
    std::set<PersonId> out;
    std::set_intersection(fa.begin(), fa.end(), fb.begin(), fb.end(),
                          std::inserter(out, out.end()));
    out.erase(a);
    out.erase(b);
    return out;
  }

  std::vector<FriendEdge> edges() const {
    std::shared_lock lock(mutex_);
    std::vector<FriendEdge> out;
    for (const auto& [a, list] : data_.friends) {
      for (const auto& b : list) {
        if (a < b) out.push_back({a, b});
      }
    }
    return out;
  }

  // ---- feeds

  void add_status(const StatusPost& s) {
    std::unique_lock lock(mutex_);
    person_locked(s.person_id);
    for (auto it = data_.statuses.rbegin(); it != data_.statuses.rend(); ++it) {
      if (it->person_id != s.person_id) continue;
      if (s.timestamp < it->timestamp) {
        throw InvalidArgument("status timestamps must be non-decreasing per person");
      }
      break;
    }
    data_.statuses.push_back(s);
  }

  // Like add_status, but a timestamp older than the person's latest post is
  // moved up to it instead of being rejected.
  StatusPost append_status(StatusPost s) {
    std::unique_lock lock(mutex_);
    person_locked(s.person_id);
    for (auto it = data_.statuses.rbegin(); it != data_.statuses.rend(); ++it) {
      if (it->person_id != s.person_id) continue;
      s.timestamp = std::max(s.timestamp, it->timestamp);
      break;
    }
    data_.statuses.push_back(s);
    return s;
  }

  std::vector<StatusPost> statuses(const PersonId& p) const { return status_updates_since(p, -1); }

  std::vector<StatusPost> status_updates_since(const PersonId& p, Timestamp t) const {
    std::shared_lock lock(mutex_);
    person_locked(p);
    std::vector<StatusPost> out;
    for (const auto& s : data_.statuses) {
      if (s.person_id == p && s.timestamp > t) out.push_back(s);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& x, const auto& y) { return x.timestamp < y.timestamp; });
    return out;
  }

  void add_event(const EventItem& e) {
    if (e.title.empty()) throw InvalidArgument("event title must not be empty");
    std::unique_lock lock(mutex_);
    person_locked(e.person_id);
    data_.events.push_back(e);
  }

  std::vector<EventItem> events(const PersonId& p) const {
    std::shared_lock lock(mutex_);
    person_locked(p);
    std::vector<EventItem> out;
    for (const auto& e : data_.events) {
      if (e.person_id == p) out.push_back(e);
    }
    return out;
  }

  // ---- photos

  void add_photo(const Photo& photo) {
    std::unique_lock lock(mutex_);
    add_photo_locked(photo);
  }

  // Binds every raw tag to a detection with the frontal/profile rule and
  // stores the photo together with each tag's outcome.
  Photo ingest_photo(const std::string& photo_id, const PersonId& owner, Timestamp timestamp,
                     const std::vector<facekit::FaceRect>& detections,
                     const std::vector<RawTag>& tags) {
    Photo photo{photo_id, owner, timestamp, detections, {}};
    for (const auto& raw : tags) {
      const auto m = facekit::match_tag(raw.center, detections);
      photo.tags.push_back(
          {raw.person_id, raw.center.x, raw.center.y, m.outcome, m.index, m.matched()});
    }
    add_photo(photo);
    return photo;
  }

  std::vector<Photo> photos() const {
    std::shared_lock lock(mutex_);
    return data_.photos;
  }

  std::optional<Photo> photo(const std::string& photo_id) const {
    std::shared_lock lock(mutex_);
    for (const auto& p : data_.photos) {
      if (p.photo_id == photo_id) return p;
    }
    return std::nullopt;
  }

  std::vector<Photo> photos_since(const PersonId& owner, Timestamp t) const {
    std::shared_lock lock(mutex_);
    person_locked(owner);
    std::vector<Photo> out;
    for (const auto& p : data_.photos) {
      if (p.owner == owner && p.timestamp > t) out.push_back(p);
    }
    return out;
  }

  // ---- interaction memory

  void record_interaction(const InteractionRecord& r) {
    std::unique_lock lock(mutex_);
    record_locked(r);
  }

  std::vector<SessionId> sessions() const {
    std::shared_lock lock(mutex_);
    return data_.session_order;
  }

  std::vector<InteractionRecord> session_records(const SessionId& s) const {
    std::shared_lock lock(mutex_);
    std::vector<InteractionRecord> out;
    for (const auto& r : data_.interactions) {
      if (r.session_id == s) out.push_back(r);
    }
    return out;
  }

  std::vector<InteractionRecord> user_records(const PersonId& p) const {
    std::shared_lock lock(mutex_);
    person_locked(p);
    std::vector<InteractionRecord> out;
    for (const auto& r : data_.interactions) {
      if (r.user_id == p) out.push_back(r);
    }
    return out;
  }

  std::optional<Encounter> last_encounter(const PersonId& p) const {
    std::shared_lock lock(mutex_);
    person_locked(p);
    std::optional<Encounter> best;
    for (const auto& r : data_.interactions) {
      if (r.user_id != p) continue;
      if (!best || r.timestamp > best->timestamp) best = Encounter{r.session_id, r.timestamp};
    }
    return best;
  }

  // Fresh "session-<n>" id, unique across recorded and previously handed-out ids.
  SessionId allocate_session_id() {
    std::unique_lock lock(mutex_);
    for (std::size_t n = data_.session_order.size() + data_.reserved.size() + 1;; ++n) {
      SessionId id = "session-" + std::to_string(n);
      if (!data_.session_index.count(id) && !data_.reserved.count(id)) {
        data_.reserved.insert(id);
        return id;
      }
    }
  }

  // ---- outbox

  void send(const OutboxMessage& m) {
    if (m.text.empty()) throw InvalidArgument("outbox message must not be empty");
    std::unique_lock lock(mutex_);
    person_locked(m.to);
    data_.outbox.push_back(m);
  }

  std::vector<OutboxMessage> outbox() const {
    std::shared_lock lock(mutex_);
    return data_.outbox;
  }

  // ---- documents

  nlohmann::json to_json() const {
    std::shared_lock lock(mutex_);
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["persons"] = nlohmann::json::array();
    for (const auto& [_, p] : data_.persons) j["persons"].push_back(p);
    j["edges"] = nlohmann::json::array();
    for (const auto& [a, list] : data_.friends) {
      for (const auto& b : list) {
        if (a < b) j["edges"].push_back({{"a", a}, {"b", b}});
      }
    }
    j["statuses"] = data_.statuses;
    j["events"] = data_.events;
    j["photos"] = data_.photos;
    j["interactions"] = data_.interactions;
    j["outbox"] = data_.outbox;
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }

  // Builds a store from a document, re-checking every invariant on the way in.
  static SocialStore from_json(const nlohmann::json& j) {
    try {
      if (!j.is_object()) throw SchemaError("store document must be a JSON object");
      if (!j.contains("version") || !j.at("version").is_number_integer()) {
        throw SchemaError("store document has no version");
      }
      if (j.at("version").get<int>() != kSchemaVersion) {
        throw SchemaError("unsupported store schema version " + j.at("version").dump());
      }
      SocialStore s;
      s.merge(j, false);
      return s;
    } catch (const SchemaError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed store document: ") + e.what());
    } catch (const Error& e) {
      throw SchemaError(std::string("invalid store document: ") + e.what());
    }
  }

  // Merges an export document (same schema) into this store. Persons are
  // upserted by id, edges added, and feed items and photos appended unless
  // already present.
  void ingest(const nlohmann::json& j) {
    try {
      if (j.contains("version") && j.at("version").get<int>() != kSchemaVersion) {
        throw SchemaError("unsupported export schema version " + j.at("version").dump());
      }
      merge(j, true);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed export document: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    const std::string text = dump();
    auto tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write '" + tmp.string() + "'");
      out << text;
      out.flush();
      if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      throw IoError("cannot replace '" + path.string() + "'");
    }
  }

  static SocialStore load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

 private:
  struct Data {
    std::map<PersonId, Person> persons;
    std::map<PersonId, std::set<PersonId>> friends;
    std::vector<StatusPost> statuses;
    std::vector<EventItem> events;
    std::vector<Photo> photos;
    std::vector<InteractionRecord> interactions;
    std::vector<OutboxMessage> outbox;
    std::vector<SessionId> session_order;
    std::map<SessionId, Timestamp> session_index;  // last timestamp per session
    std::set<SessionId> reserved;
  };

  const Person& person_locked(const PersonId& id) const {
    auto it = data_.persons.find(id);
    if (it == data_.persons.end()) throw NotFound("unknown person '" + id + "'");
    return it->second;
  }

  Person& person_mut(const PersonId& id) {
    auto it = data_.persons.find(id);
    if (it == data_.persons.end()) throw NotFound("unknown person '" + id + "'");
    return it->second;
  }

  void check_pair(const PersonId& a, const PersonId& b) const {
    if (a == b) throw InvalidArgument("a person cannot befriend themselves");
    person_locked(a);
    person_locked(b);
  }

  void add_photo_locked(const Photo& photo) {
    if (photo.photo_id.empty()) throw InvalidArgument("photo id must not be empty");
    person_locked(photo.owner);
    for (const auto& t : photo.tags) {
      person_locked(t.person_id);
      if (t.detection && *t.detection >= photo.detections.size()) {
        throw InvalidArgument("tag refers to a missing detection");
      }
      if (t.confirmed && t.outcome != facekit::TagOutcome::Matched) {
        throw InvalidArgument("only matched tags can be confirmed");
      }
    }
    for (const auto& p : data_.photos) {
      if (p.photo_id == photo.photo_id) throw Conflict("photo '" + photo.photo_id + "' exists");
    }
    data_.photos.push_back(photo);
  }

  void record_locked(const InteractionRecord& r) {
    if (r.session_id.empty()) throw InvalidArgument("interaction needs a session id");
    if (!r.user_id.empty()) person_locked(r.user_id);
    auto it = data_.session_index.find(r.session_id);
    if (it != data_.session_index.end() && r.timestamp <= it->second) {
      throw InvalidArgument("interaction timestamps must increase within session '" +
                            r.session_id + "'");
    }
    if (it == data_.session_index.end()) {
      data_.session_order.push_back(r.session_id);
      data_.session_index.emplace(r.session_id, r.timestamp);
      data_.reserved.erase(r.session_id);
    } else {
      it->second = r.timestamp;
    }
    data_.interactions.push_back(r);
  }

  void merge(const nlohmann::json& j, bool skip_duplicates) {
    auto arr = [&](const char* k) { return j.value(k, nlohmann::json::array()); };
    for (const auto& pj : arr("persons")) {
      auto p = pj.get<Person>();
      if (p.person_id.empty()) throw SchemaError("person without person_id");
      if (!skip_duplicates && has_person(p.person_id)) {
        throw SchemaError("duplicate person '" + p.person_id + "'");
      }
      upsert_person(p);
    }
    for (const auto& e : arr("edges")) {
      const auto a = e.at("a").get<std::string>(), b = e.at("b").get<std::string>();
      if (!skip_duplicates && are_friends(a, b)) throw SchemaError("duplicate edge");
      add_friendship(a, b);
    }
    for (const auto& sj : arr("statuses")) {
      auto s = sj.get<StatusPost>();
      if (skip_duplicates && contains(data_.statuses, s)) continue;
      add_status(s);
    }
    for (const auto& ej : arr("events")) {
      auto e = ej.get<EventItem>();
      if (skip_duplicates && contains(data_.events, e)) continue;
      add_event(e);
    }
    for (const auto& pj : arr("photos")) {
      auto p = pj.get<Photo>();
      if (skip_duplicates) {
        if (auto existing = photo(p.photo_id)) {
          if (*existing == p) continue;
        }
      }
      add_photo(p);
    }
    for (const auto& rj : arr("interactions")) {
      auto r = rj.get<InteractionRecord>();
      if (skip_duplicates && contains(data_.interactions, r)) continue;
      record_interaction(r);
    }
    for (const auto& mj : arr("outbox")) {
      auto m = mj.get<OutboxMessage>();
      if (skip_duplicates && contains(data_.outbox, m)) continue;
      send(m);
    }
  }

  template <class T>
  bool contains(const std::vector<T>& v, const T& x) const {
    std::shared_lock lock(mutex_);
    return std::find(v.begin(), v.end(), x) != v.end();
  }

  mutable std::shared_mutex mutex_;
  Data data_;
};

}  // namespace facebots::socialstore
