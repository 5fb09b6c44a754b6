#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <thread>

#include "facebots/recognizer.hpp"
#include "facebots/socialstore.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace facebots;
using namespace facebots::socialstore;
using facebots::test::TempDir;
using facebots::test::named;
using facebots::test::random_store;
using facebots::test::rec;

namespace {

void require_query_equivalent(const SocialStore& a, const SocialStore& b) {
  const auto diff = facebots::test::query_mismatch(a, b);
  INFO(diff);
  REQUIRE(diff.empty());
}

}  // namespace

TEST_CASE("persons are upserted", "[socialstore]") {
  SocialStore s;
  const auto id = s.upsert_person({"", "Panos Toulis", true, false, true, {}});
  CHECK(id == "p1");
  CHECK(s.upsert_person({"", "Panos Toulis", true, true, true, {}}) == id);
  CHECK(s.person(id).online);

  Person update = named(id, "Panos Toulis");
  update.info.hometown = "Athens";
  s.upsert_person(update);
  update.info = {};
  update.info.education = "Harvard";
  s.upsert_person(update);
  CHECK(s.person(id).info.hometown == "Athens");
  CHECK(s.person(id).info.education == "Harvard");

  CHECK_THROWS_AS(s.upsert_person(named("x", "")), InvalidArgument);
  CHECK_THROWS_AS(s.person("nobody"), NotFound);
  CHECK(s.find_by_name("Panos Toulis") == id);
  CHECK_FALSE(s.find_by_name("Nobody"));
}

TEST_CASE("mutual friends", "[socialstore]") {
  SocialStore s;
  for (auto id : {"P", "Q", "A", "B", "C", "D", "E"}) s.upsert_person(named(id, id));
  for (auto f : {"A", "B", "C"}) s.add_friendship("P", f);
  for (auto f : {"B", "C", "D"}) s.add_friendship("Q", f);
  CHECK(s.mutual_friends("P", "Q") == std::set<PersonId>{"B", "C"});
  CHECK(s.mutual_friends("Q", "P") == s.mutual_friends("P", "Q"));
  CHECK(s.mutual_friends("A", "D").empty());
  CHECK(s.mutual_friends("E", "P").empty());
  CHECK_THROWS_AS(s.mutual_friends("P", "zz"), NotFound);
  CHECK_THROWS_AS(s.add_friendship("P", "P"), InvalidArgument);
}

TEST_CASE("hidden friend lists", "[socialstore]") {
  SocialStore s;
  for (auto id : {"a", "b", "c"}) s.upsert_person(named(id, id));
  Person hidden = named("h", "h");
  hidden.friends_visible = false;
  s.upsert_person(hidden);
  s.add_friendship("h", "a");
  s.add_friendship("h", "b");
  CHECK(s.visible_friends("c", "h") == std::nullopt);
  CHECK(s.visible_friends("a", "h") == std::set<PersonId>{"a", "b"});
  CHECK(s.visible_friends("h", "h") == std::set<PersonId>{"a", "b"});
  CHECK(s.visible_friends("c", "a") == std::set<PersonId>{"h"});
}

TEST_CASE("status feed", "[socialstore]") {
  SocialStore s;
  s.upsert_person(named("p", "P"));
  s.add_status({"p", "first", 5});
  s.add_status({"p", "second", 10});
  CHECK(s.status_updates_since("p", 5) == std::vector<StatusPost>{{"p", "second", 10}});
  CHECK(s.status_updates_since("p", 0).size() == 2);
  CHECK(s.status_updates_since("p", 10).empty());
  CHECK_THROWS_AS(s.add_status({"p", "late", 3}), InvalidArgument);
  CHECK(s.append_status({"p", "clamped", 3}).timestamp == 10);
  CHECK_THROWS_AS(s.status_updates_since("q", 0), NotFound);
}

TEST_CASE("photo ingestion records tag outcomes", "[socialstore]") {
  SocialStore s;
  for (auto id : {"o", "x", "y", "z"}) s.upsert_person(named(id, id));
  const std::vector<facekit::FaceRect> det = {{0, 0, 20, 20, facekit::Pose::Frontal},
                                              {2, 2, 20, 20, facekit::Pose::Profile}};
  const auto photo = s.ingest_photo("p1", "o", 100, det, {{"x", {10, 10}}, {"y", {13, 13}}});
  REQUIRE(photo.tags.size() == 2);
  CHECK(photo.tags[0].outcome == facekit::TagOutcome::Matched);
  CHECK(photo.tags[0].confirmed);
  CHECK(photo.tags[0].detection == 0u);
  CHECK(photo.tags[1].outcome == facekit::TagOutcome::DiscardedProfile);
  CHECK_FALSE(photo.tags[1].confirmed);
  CHECK(s.photo("p1") == photo);
  CHECK_THROWS_AS(s.ingest_photo("p1", "o", 100, det, {}), Conflict);
  CHECK(s.ingest_photo("p2", "o", 200, {}, {{"z", {1, 1}}}).tags[0].outcome ==
        facekit::TagOutcome::NoDetections);
  CHECK(s.photos_since("o", 100).size() == 1);
  CHECK(recognizer::co_occurrence_hypotheses(s, 1).empty());
}

TEST_CASE("interaction memory", "[socialstore]") {
  SocialStore s;
  s.upsert_person(named("u", "U"));
  s.upsert_person(named("v", "V"));
  CHECK_FALSE(s.last_encounter("u"));
  s.record_interaction(rec("s1", 100, "u"));
  CHECK(s.sessions() == std::vector<SessionId>{"s1"});
  CHECK_THROWS_AS(s.record_interaction(rec("s1", 100, "u")), InvalidArgument);
  s.record_interaction(rec("s2", 200, "u"));
  s.record_interaction(rec("s2", 150 + 60, "u"));
  CHECK(s.last_encounter("u") == Encounter{"s2", 210});
  CHECK_FALSE(s.last_encounter("v"));
  CHECK_THROWS_AS(s.last_encounter("w"), NotFound);
  CHECK_THROWS_AS(s.record_interaction(rec("s3", 1, "w")), NotFound);

  const auto before = s.dump();
  s.last_encounter("u");
  s.user_records("u");
  CHECK(s.dump() == before);

  const auto a = s.allocate_session_id();
  const auto b = s.allocate_session_id();
  CHECK(a != b);
  CHECK(a.rfind("session-", 0) == 0);
}

TEST_CASE("outbox", "[socialstore]") {
  SocialStore s;
  s.upsert_person(named("u", "U"));
  CHECK_THROWS_AS(s.send({"u", "", 1, OutboxChannel::Chat}), InvalidArgument);
  CHECK_THROWS_AS(s.send({"x", "hi", 1, OutboxChannel::Chat}), NotFound);
  s.send({"u", "hi", 1, OutboxChannel::Chat});
  CHECK(s.outbox().size() == 1);
}

TEST_CASE("empty store round-trip", "[socialstore]") {
  TempDir dir;
  SocialStore().save(dir / "s.json");
  const auto loaded = SocialStore::load(dir / "s.json");
  CHECK(loaded.persons().empty());
  CHECK(loaded.dump() == SocialStore().dump());
}

TEST_CASE("save and load are query-equivalent over seeded stores", "[socialstore]") {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = random_store(seed);
    const auto path = dir / ("store" + std::to_string(seed) + ".json");
    s.save(path);
    const auto loaded = SocialStore::load(path);
    require_query_equivalent(s, loaded);
    REQUIRE(loaded.dump() == s.dump());
  }
}

TEST_CASE("corrupted files are schema errors and stay untouched", "[socialstore]") {
  TempDir dir;
  const auto path = dir / "bad.json";
  {
    std::ofstream(path) << "{\"version\": 1, \"persons\": [";
  }
  CHECK_THROWS_AS(SocialStore::load(path), SchemaError);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "{\"version\": 1, \"persons\": [");

  CHECK_THROWS_AS(SocialStore::load(dir / "missing.json"), IoError);
  CHECK_THROWS_AS(SocialStore::from_json({{"version", 99}}), SchemaError);
  CHECK_THROWS_AS(SocialStore::from_json({{"version", 1}, {"edges", {{{"a", "x"}, {"b", "y"}}}}}),
                  SchemaError);
  // Interactions out of order within a session are rejected on load.
  const nlohmann::json doc = {{"version", 1},
                              {"persons", {named("u", "U")}},
                              {"interactions", {rec("s", 5), rec("s", 5)}}};
  CHECK_THROWS_AS(SocialStore::from_json(doc), SchemaError);
}

TEST_CASE("ingest merges export documents", "[socialstore]") {
  auto s = random_store(7);
  const auto before = s.dump();
  s.ingest(s.to_json());
  CHECK(s.dump() == before);

  SocialStore empty;
  empty.ingest(s.to_json());
  require_query_equivalent(s, empty);
}

TEST_CASE("friendship symmetry over random graph operations", "[socialstore]") {
  std::mt19937_64 rng(42);
  SocialStore s;
  std::vector<PersonId> ids;
  for (int i = 0; i < 30; ++i) ids.push_back(s.upsert_person(named("", "N" + std::to_string(i))));
  std::set<std::pair<PersonId, PersonId>> model;
  std::uniform_int_distribution<std::size_t> who(0, ids.size() - 1);
  std::uniform_int_distribution<int> op(0, 9);
  for (int step = 0; step < 10000; ++step) {
    const auto a = ids[who(rng)], b = ids[who(rng)];
    if (a == b) continue;
    const int o = op(rng);
    if (o < 6) {
      s.add_friendship(a, b);
      model.insert(std::minmax(a, b));
    } else if (o < 9) {
      s.remove_friendship(a, b);
      model.erase(std::minmax(a, b));
    } else {
      const auto m = s.mutual_friends(a, b);
      const auto fa = s.friends(a), fb = s.friends(b);
      REQUIRE_FALSE(m.count(a));
      REQUIRE_FALSE(m.count(b));
      for (const auto& x : m) REQUIRE((fa.count(x) && fb.count(x)));
      REQUIRE(m == s.mutual_friends(b, a));
    }
    REQUIRE(s.are_friends(a, b) == s.are_friends(b, a));
    REQUIRE(s.are_friends(a, b) == (model.count(std::minmax(a, b)) > 0));
  }
  for (const auto& a : ids) {
    for (const auto& b : s.friends(a)) REQUIRE(s.friends(b).count(a));
  }
  CHECK(s.edges().size() == model.size());
}

TEST_CASE("saved outbox only grows", "[socialstore]") {
  TempDir dir;
  auto s = random_store(11);
  s.upsert_person(named("u", "U"));
  std::vector<OutboxMessage> last;
  for (int i = 0; i < 5; ++i) {
    s.send({"u", "m" + std::to_string(i), i, OutboxChannel::Message});
    s.save(dir / "o.json");
    const auto now = SocialStore::load(dir / "o.json").outbox();
    REQUIRE(now.size() > last.size());
    REQUIRE(std::equal(last.begin(), last.end(), now.begin()));
    last = now;
  }
}

TEST_CASE("concurrent readers and writers", "[socialstore]") {
  SocialStore s;
  for (int i = 0; i < 20; ++i) s.upsert_person(named("u" + std::to_string(i), "U"));
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&s, t] {
      std::mt19937_64 rng(static_cast<std::uint64_t>(t));
      std::uniform_int_distribution<int> who(0, 19);
      for (int k = 0; k < 2000; ++k) {
        const auto a = "u" + std::to_string(who(rng)), b = "u" + std::to_string(who(rng));
        if (a == b) continue;
        if (t % 2) {
          s.add_friendship(a, b);
        } else {
          const auto m = s.mutual_friends(a, b);
          (void)m;
          (void)s.to_json();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& p : s.persons()) {
    for (const auto& f : s.friends(p.person_id)) REQUIRE(s.are_friends(f, p.person_id));
  }
}
