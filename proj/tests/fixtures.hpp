#pragma once

#include <random>
#include <string>
#include <vector>

#include "facebots/socialstore.hpp"

// Store fixtures shared by the unit and acceptance suites.
namespace facebots::test {

using namespace facebots::socialstore;

inline Person named(const PersonId& id, const std::string& name) {
  Person p;
  p.person_id = id;
  p.name = name;
  return p;
}

inline InteractionRecord rec(const SessionId& s, Timestamp t, const PersonId& user = {}) {
  InteractionRecord r;
  r.session_id = s;
  r.timestamp = t;
  r.user_id = user;
  r.description = "r";
  return r;
}

inline SocialStore random_store(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&] { return pick(2) == 1; };
  SocialStore s;
  const std::size_t n = 2 + pick(12);
  std::vector<PersonId> ids;
  for (std::size_t i = 0; i < n; ++i) {
    Person p = named("u" + std::to_string(i), "Person " + std::to_string(i));
    p.on_facebook = coin();
    p.online = coin();
    p.friends_visible = coin();
    if (coin()) p.info.hometown = "Town " + std::to_string(pick(5));
    if (coin()) p.info.work_history = "Lab";
    ids.push_back(s.upsert_person(p));
  }
  for (std::size_t k = 0; k < 3 * n; ++k) {
    const auto a = ids[pick(n)], b = ids[pick(n)];
    if (a != b) s.add_friendship(a, b);
  }
  Timestamp t = 1000;
  for (std::size_t k = 0; k < pick(20); ++k) {
    s.add_status({ids[pick(n)], "status " + std::to_string(k), t += static_cast<Timestamp>(pick(50))});
  }
  for (std::size_t k = 0; k < pick(5); ++k) s.add_event({ids[pick(n)], "event", t + static_cast<Timestamp>(k)});
  for (std::size_t k = 0; k < pick(4); ++k) {
    std::vector<facekit::FaceRect> det = {{0, 0, 20, 20, facekit::Pose::Frontal},
                                          {40, 0, 20, 20, facekit::Pose::Profile}};
    std::vector<RawTag> tags = {{ids[pick(n)], {10, 10}}, {ids[pick(n)], {50.0 + pick(3), 12}}};
    s.ingest_photo("ph" + std::to_string(k), ids[pick(n)], t + static_cast<Timestamp>(k), det, tags);
  }
  for (std::size_t sess = 0; sess < pick(6); ++sess) {
    const auto sid = "session-" + std::to_string(sess + 1);
    const PersonId user = coin() ? ids[pick(n)] : PersonId{};
    Timestamp ts = 5000 + static_cast<Timestamp>(sess * 1000);
    for (std::size_t r = 0; r < 1 + pick(6); ++r) {
      auto record = rec(sid, ts += 1 + static_cast<Timestamp>(pick(10)), user);
      record.interaction_type = static_cast<InteractionType>(pick(12));
      record.flags["answer_yes"] = coin();
      record.channel = coin() ? Channel::Physical : Channel::Online;
      s.record_interaction(record);
    }
  }
  for (std::size_t k = 0; k < pick(4); ++k) {
    s.send({ids[pick(n)], "hello " + std::to_string(k), t + static_cast<Timestamp>(k),
            coin() ? OutboxChannel::Chat : OutboxChannel::Message});
  }
  return s;
}

// Every read query, compared between two stores. Returns the name of the
// first query that differs, or an empty string.
inline std::string query_mismatch(const SocialStore& a, const SocialStore& b) {
  const auto pa = a.persons();
  if (pa.size() != b.persons().size()) return "persons";
  if (a.edges() != b.edges()) return "edges";
  if (a.photos() != b.photos()) return "photos";
  if (a.outbox() != b.outbox()) return "outbox";
  if (a.sessions() != b.sessions()) return "sessions";
  for (const auto& s : a.sessions()) {
    if (a.session_records(s) != b.session_records(s)) return "session_records " + s;
  }
  for (const auto& p : pa) {
    const auto& id = p.person_id;
    if (!b.has_person(id)) return "has_person " + id;
    const auto q = b.person(id);
    if (p.name != q.name || p.online != q.online || p.on_facebook != q.on_facebook ||
        p.friends_visible != q.friends_visible || !(p.info == q.info)) {
      return "person " + id;
    }
    if (a.friends(id) != b.friends(id)) return "friends " + id;
    if (a.statuses(id) != b.statuses(id)) return "statuses " + id;
    if (a.events(id) != b.events(id)) return "events " + id;
    if (a.user_records(id) != b.user_records(id)) return "user_records " + id;
    if (a.last_encounter(id) != b.last_encounter(id)) return "last_encounter " + id;
    if (a.photos_since(id, 0) != b.photos_since(id, 0)) return "photos_since " + id;
    for (const auto& o : pa) {
      if (a.mutual_friends(id, o.person_id) != b.mutual_friends(id, o.person_id)) {
        return "mutual_friends " + id + " " + o.person_id;
      }
      if (a.visible_friends(id, o.person_id) != b.visible_friends(id, o.person_id)) {
        return "visible_friends " + id + " " + o.person_id;
      }
    }
  }
  return {};
}

}  // namespace facebots::test
