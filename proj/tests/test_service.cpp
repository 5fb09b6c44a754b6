#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <set>
#include <thread>

#include "service_fixture.hpp"
#include "support.hpp"

using namespace facebots;
using namespace facebots::test;

namespace {

std::unique_ptr<Service> fresh_service(const std::filesystem::path& reports,
                                      std::function<Timestamp()> clock = {}) {
  return test::make_service(FACEBOTS_DATA_DIR, reports, std::move(clock));
}

}  // namespace

TEST_CASE("HTTP responses match direct service and module calls", "[service]") {
  TempDir dir;
  auto http_svc = fresh_service(dir / "http");
  auto direct = fresh_service(dir / "direct");
  Served served(*http_svc);
  const auto res = differential_suite(*http_svc, served, *direct);
  INFO("decision " << res.decision.dump());
  CHECK(res.decision.at("verdict") == "identified");
  for (const auto& m : res.mismatches) UNSCOPED_INFO("mismatch: " << m);
  CHECK(res.mismatches.empty());
  CHECK(res.steps > 40);

  const auto session = direct->get_session(direct->create_session(nullptr).at("session_id"));
  CHECK(session.at("policy").at("window") == 25);
}

TEST_CASE("error mapping over HTTP", "[service]") {
  TempDir dir;
  auto svc = fresh_service(dir.path());
  Served served(*svc);
  auto bad = served.raw("POST", "/sessions", "{not json");
  CHECK(bad.status == 400);
  CHECK(bad.body.at("code") == "BadRequest");

  CHECK(served.call("POST", "/sessions", json{{"window", 0}}).status == 400);
  CHECK(served.call("POST", "/sessions", json::array()).status == 400);

  auto missing = served.call("GET", "/sessions/deadbeef");
  CHECK(missing.status == 404);
  CHECK(missing.body.at("code") == "NotFound");

  auto endpoint = served.call("GET", "/no/such/endpoint");
  CHECK(endpoint.status == 404);
  CHECK(endpoint.body.at("code") == "NotFound");

  const std::string sid = served.call("POST", "/sessions").body.at("session_id");
  auto early = served.call("POST", "/sessions/" + sid + "/replies", json{{"kind", "Yes"}});
  CHECK(early.status == 409);
  CHECK(early.body.at("code") == "Conflict");

  CHECK(served.call("POST", "/sessions/" + sid + "/frames", json::object()).status == 400);
  CHECK(served.call("POST", "/sessions/" + sid + "/frames",
                    json{{"corpus_frame", {{"identity", 99}}}}).status == 400);
  CHECK(served.call("POST", "/sessions/" + sid + "/frames",
                    json{{"image", {{"width", 2}, {"height", 2}, {"pixels", {1, 2}}}},
                         {"rect", {{"x", 0}, {"y", 0}, {"w", 2}, {"h", 2}}}}).status == 400);
  CHECK(served.call("POST", "/sessions/" + sid + "/replies", json{{"kind", "Maybe"}}).status == 400);
  CHECK(served.call("GET", "/graph/mutual?a=panos").status == 400);
}

TEST_CASE("raw images go through the preprocessing gate", "[service]") {
  TempDir dir;
  auto svc = fresh_service(dir.path());
  const std::string sid = svc->create_session(nullptr).at("session_id");

  const facekit::ImageBuffer blue(40, 40, facekit::Rgb{20, 40, 200});
  const json rect = {{"x", 0}, {"y", 0}, {"w", 40}, {"h", 40}};
  const auto rej = svc->post_frame(sid, {{"image", service::image_to_json(blue)}, {"rect", rect}});
  CHECK(rej.at("rejection").at("reason") == "low_skin");
  CHECK(rej.at("rejection").at("skin_ratio") == 0.0);
  CHECK(rej.at("scores").is_null());
  CHECK(rej.at("window").at("fill") == 0);

  const auto key = frame_key(3, 0);
  const json raster = {{"x", 0}, {"y", 0}, {"w", facekit::kRaster}, {"h", facekit::kRaster}};
  const auto ok =
      svc->post_frame(sid, {{"image", service::image_to_json(lab_corpus().render(key))}, {"rect", raster}});
  CHECK(ok.at("rejection").is_null());
  CHECK(ok.at("scores") == service::api::scores(lab_registry().score_all(lab_corpus().face(key))));
  CHECK(ok.at("window").at("fill") == 1);

  const auto outside = Service::guarded([&] {
    return svc->post_frame(sid, {{"image", service::image_to_json(blue)},
                                 {"rect", {{"x", 30}, {"y", 30}, {"w", 20}, {"h", 20}}}});
  });
  CHECK(outside.status == 400);
}

TEST_CASE("identical trained frames identify the person", "[service]") {
  auto store = std::make_shared<socialstore::SocialStore>(
      socialstore::SocialStore::load(data_path("demo_store.json")));
  recognizer::Registry<> reg;
  for (std::size_t i = 0; i < 3; ++i) {
    auto set = harness::detail::training_set(lab_corpus(), i, {frame_key(i, 0)});
    set.person_id = std::vector<std::string>{"panos", "shervin", "nikolaos"}[i];
    reg.retrain(set);
  }
  service::ServiceConfig cfg;
  cfg.policy.theta = kServiceTheta;
  cfg.dialogue.clock = dialogue::stepping_clock(1300000000);
  TempDir dir;
  cfg.report_dir = dir.path();
  Service svc(store, reg, lab_corpus(), cfg);
  const std::string sid = svc.create_session(nullptr).at("session_id");
  json last;
  for (int n = 0; n < 25; ++n) last = svc.post_frame(sid, frame(0, 0));
  CHECK(last.at("decision").at("verdict") == "identified");
  CHECK(last.at("decision").at("best") == "panos");
  REQUIRE(last.at("acts").size() == 1);
  CHECK(last.at("acts")[0].at("text") == "Hi! Are you Panos Toulis?");

  // A tag closest to a profile detection is discarded, not matched.
  const auto photo = svc.post_photo({{"photo_id", "p-1"},
                                     {"owner", "panos"},
                                     {"timestamp", 1300000000},
                                     {"detections",
                                      {{{"x", 0}, {"y", 0}, {"w", 20}, {"h", 20}},
                                       {{"x", 50}, {"y", 0}, {"w", 20}, {"h", 20}, {"pose", "profile"}}}},
                                     {"tags", {{{"person_id", "shervin"}, {"cx", 58}, {"cy", 10}}}}});
  CHECK(photo.at("tags")[0].at("outcome") == "discarded_profile");
  CHECK(photo.at("tags")[0].at("detection").is_null());
}

TEST_CASE("never-met people have no memory", "[service]") {
  TempDir dir;
  auto svc = fresh_service(dir.path());
  const auto m = svc->memory("chandan");
  CHECK(m.at("records") == json::array());
  CHECK(m.at("last_encounter").is_null());
  CHECK(Service::guarded([&] { return svc->memory("nobody"); }).status == 404);
}

TEST_CASE("sessions are isolated under interleaving and concurrency", "[service]") {
  TempDir dir;
  auto counter = std::make_shared<std::atomic<Timestamp>>(1300000000);
  auto clock = [counter] { return counter->fetch_add(1); };

  const std::vector<std::size_t> people = {0, 2, 4};
  auto recognition = [](const json& session) {
    return json{{"window", session.at("window")},
                {"accumulated_mean", session.at("accumulated_mean")},
                {"decision", session.at("decision")}};
  };

  // Serial reference.
  std::vector<json> serial;
  {
    auto svc = fresh_service(dir / "a", clock);
    for (auto who : people) {
      const std::string sid = svc->create_session(nullptr).at("session_id");
      for (std::size_t n = 0; n < 30; ++n) svc->post_frame(sid, frame(who, n));
      serial.push_back(recognition(svc->get_session(sid)));
    }
  }

  // Round-robin interleaving on one service.
  {
    auto svc = fresh_service(dir / "b", clock);
    std::vector<std::string> ids;
    for (std::size_t k = 0; k < people.size(); ++k) {
      ids.push_back(svc->create_session(nullptr).at("session_id"));
    }
    for (std::size_t n = 0; n < 30; ++n) {
      for (std::size_t k = 0; k < people.size(); ++k) svc->post_frame(ids[k], frame(people[k], n));
    }
    std::set<std::string> distinct(ids.begin(), ids.end());
    CHECK(distinct.size() == ids.size());
    for (std::size_t k = 0; k < people.size(); ++k) {
      CHECK(recognition(svc->get_session(ids[k])) == serial[k]);
    }
  }

  // Concurrent clients over HTTP.
  {
    auto svc = fresh_service(dir / "c", clock);
    Served served(*svc);
    std::vector<std::string> ids(people.size());
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (std::size_t k = 0; k < people.size(); ++k) {
      threads.emplace_back([&, k] {
        httplib::Client cli("127.0.0.1", served.port());
        auto r = cli.Post("/sessions", "", "application/json");
        if (!r || r->status != 200) {
          ++failures;
          return;
        }
        ids[k] = json::parse(r->body).at("session_id");
        for (std::size_t n = 0; n < 30; ++n) {
          auto f = cli.Post("/sessions/" + ids[k] + "/frames", frame(people[k], n).dump(),
                            "application/json");
          if (!f || f->status != 200) ++failures;
        }
      });
    }
    for (auto& t : threads) t.join();
    REQUIRE(failures == 0);
    for (std::size_t k = 0; k < people.size(); ++k) {
      CHECK(recognition(svc->get_session(ids[k])) == serial[k]);
    }
  }
}

TEST_CASE("experiments write their report", "[service]") {
  TempDir dir;
  auto svc = fresh_service(dir / "reports");
  const auto r = svc->run_experiment("cost", json{{"seed", 42}});
  CHECK(r.at("experiment") == "cost");
  CHECK(r.at("rows") == 5);
  CHECK(std::filesystem::exists(r.at("location").get<std::string>()));
  CHECK(r.at("location").get<std::string>().find("cost_seed42.csv") != std::string::npos);
  CHECK(Service::guarded([&] { return svc->run_experiment("cost", json{{"seed", "x"}}); }).status == 400);
}
