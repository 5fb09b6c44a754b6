#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/dialogue.hpp"
#include "facebots/harness.hpp"
#include "facebots/image_io.hpp"
#include "facebots/service.hpp"
#include "facebots/socialstore.hpp"
#include "facebots/training_io.hpp"

#ifndef FACEBOTS_DATA_DIR
#define FACEBOTS_DATA_DIR "data"
#endif

namespace facebots::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Raised for argument combinations CLI11 cannot express.
struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::string> spec;
  std::optional<double> theta;
  std::optional<std::size_t> window;
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string store;
  std::string data_dir = FACEBOTS_DATA_DIR;
  std::vector<std::string> inputs;
  std::optional<std::string> person, viewer, memory;
  std::vector<std::string> mutual;
};

namespace detail {

inline harness::CorpusSpec corpus_spec(const Options& o) {
  harness::CorpusSpec s = o.spec ? harness::load_corpus_spec(*o.spec) : harness::CorpusSpec{};
  if (o.seed) s.seed = *o.seed;
  s.validate();
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline void print_summary(std::ostream& out, const harness::ExperimentReport& rep,
                          const fs::path& path) {
  out << rep.experiment << ": " << rep.rows.size() << " rows -> " << path.string() << "\n";
  for (const auto& [k, v] : rep.summary) out << "  " << k << " = " << v << "\n";
}

inline int corpus_gen(const Options& o, std::ostream& out) {
  if (!o.spec) throw UsageError("corpus gen requires --spec <file>");
  const harness::Corpus corpus(corpus_spec(o));
  const fs::path dir = o.out;
  fs::create_directories(dir);

  write_text(dir / "corpus_spec.json", json(corpus.spec()).dump(2) + "\n");

  json listing = json::array();
  for (const auto& s : harness::corpus_manifest(corpus)) {
    listing.push_back({{"label", s.label},
                       {"stranger", s.stranger},
                       {"identity", s.key.identity},
                       {"source", recognizer::to_string(s.key.source)},
                       {"session", s.key.session},
                       {"index", s.key.index}});
  }
  write_text(dir / "manifest.json", json{{"seed", corpus.spec().seed}, {"samples", listing}}.dump(2) + "\n");

  // Exported training sets: the lab camera frames every experiment trains on,
  // plus each known identity's Facebook pictures.
  std::vector<recognizer::TrainingSet> sets;
  const auto& spec = corpus.spec();
  for (std::size_t i = 0; i < corpus.known(); ++i) {
    auto keys = harness::detail::lab_training_keys(spec, i, 100);
    for (std::size_t f = 0; f < spec.facebook_per_identity; ++f) {
      keys.push_back({i, recognizer::Source::Facebook, 0, f});
    }
    sets.push_back(harness::detail::training_set(corpus, i, keys));
  }
  training_io::export_training_sets(dir / "training", sets);

  fs::create_directories(dir / "preview");
  for (std::size_t i = 0; i < spec.n_identities + spec.n_strangers; ++i) {
    const auto label = harness::Corpus::label(i);
    image_io::write_png(dir / "preview" / (label + "_camera.png"),
                        corpus.render({i, recognizer::Source::Camera, 0, 0}));
    image_io::write_png(dir / "preview" / (label + "_facebook.png"),
                        corpus.render({i, recognizer::Source::Facebook, 0, 0}));
  }
  out << "wrote corpus (seed " << spec.seed << ", " << listing.size() << " samples) to "
      << dir.string() << "\n";
  return kExitOk;
}

inline int experiment(const std::string& name, const Options& o, std::ostream& out) {
  const harness::Corpus corpus(corpus_spec(o));
  harness::ExperimentReport rep;
  if (name == "threshold") {
    harness::ThresholdSweepConfig cfg;
    if (o.window) cfg.window = *o.window;
    rep = harness::run_threshold_sweep(corpus, cfg);
  } else if (name == "window") {
    rep = harness::run_window_sweep(corpus, {});
  } else if (name == "cost") {
    rep = harness::run_training_cost(corpus, {});
  } else {
    rep = harness::run_transfer_matrix(corpus);
  }
  const fs::path path = fs::path(o.out) / (name + ".csv");
  fs::create_directories(o.out);
  rep.write_csv(path);
  print_summary(out, rep, path);
  return kExitOk;
}

inline socialstore::SocialStore open_store(const std::string& path) {
  if (fs::exists(path)) return socialstore::SocialStore::load(path);
  return socialstore::SocialStore{};
}

inline int store_ingest(const Options& o, std::ostream& out) {
  if (o.store.empty()) throw UsageError("store ingest requires --store <file>");
  if (o.inputs.empty()) throw UsageError("store ingest needs at least one input file");
  auto store = open_store(o.store);
  for (const auto& in : o.inputs) {
    const fs::path p = in;
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw SchemaError("bad JSON in " + p.string() + ": " + e.what());
    }
    // Photo sidecars carry a photo_id; everything else is a store document.
    if (doc.is_object() && doc.contains("photo_id")) {
      const auto fx = image_io::parse_photo_sidecar(doc);
      const auto photo =
          store.ingest_photo(fx.photo_id, fx.owner, fx.timestamp, fx.detections, fx.tags);
      out << "photo " << photo.photo_id << ":";
      for (const auto& t : photo.tags) {
        out << " " << t.person_id << "=" << facekit::to_string(t.outcome);
      }
      out << "\n";
    } else {
      store.ingest(doc);
      out << "merged " << p.string() << "\n";
    }
  }
  store.save(o.store);
  return kExitOk;
}

inline int store_query(const Options& o, std::ostream& out) {
  if (o.store.empty()) throw UsageError("store query requires --store <file>");
  const int picked = (o.person ? 1 : 0) + (o.memory ? 1 : 0) + (o.mutual.empty() ? 0 : 1);
  if (picked != 1) throw UsageError("store query takes exactly one of --person, --mutual, --memory");
  auto store = socialstore::SocialStore::load(o.store);
  service::ServiceConfig cfg;
  service::Service svc(std::make_shared<socialstore::SocialStore>(std::move(store)),
                       recognizer::Registry<>{},
                       std::nullopt, cfg);
  json result;
  if (o.person) {
    result = svc.graph_person(*o.person, o.viewer);
  } else if (o.memory) {
    result = svc.memory(*o.memory);
  } else {
    if (o.mutual.size() != 2) throw UsageError("--mutual takes two person ids");
    result = svc.graph_mutual(o.mutual[0], o.mutual[1]);
  }
  out << result.dump(2) << "\n";
  return kExitOk;
}

inline dialogue::DialogueConfig dialogue_config(const fs::path& data, Timestamp start) {
  dialogue::DialogueConfig cfg;
  cfg.robot_id = "robot";
  if (fs::exists(data / "templates.json")) cfg.templates = dialogue::load_templates(data / "templates.json");
  if (fs::exists(data / "news.txt")) cfg.news = dialogue::load_news(data / "news.txt");
  cfg.clock = dialogue::stepping_clock(start);
  return cfg;
}

inline int dialogue_demo(const Options& o, std::ostream& out) {
  const fs::path data = o.data_dir;
  const fs::path store_path = o.store.empty() ? data / "demo_store.json" : fs::path(o.store);
  auto store = socialstore::SocialStore::load(store_path);
  dialogue::Engine engine(store, dialogue_config(data, dialogue::kDemoNow));
  const auto s = dialogue::run_scripted(engine, dialogue::demo_decision());
  std::string transcript;
  for (const auto& act : s.acts) transcript += "Robot: " + act.text + "\n";
  out << transcript;
  out << "(" << s.acts.size() << " turns, " << store.session_records(s.session_id).size()
      << " records, " << store.outbox().size() << " outbox messages)\n";
  if (o.out != ".") {
    write_text(fs::path(o.out) / "transcript.txt", transcript);
    write_text(fs::path(o.out) / "demo_store_after.json", store.dump());
  }
  return kExitOk;
}

inline std::atomic<httplib::Server*> g_server{nullptr};

inline int serve(const Options& o, std::ostream& out) {
  const harness::Corpus corpus(corpus_spec(o));
  service::ServiceConfig cfg;
  if (o.window) cfg.policy.window = *o.window;
  if (o.theta) {
    cfg.policy.theta = *o.theta;
  } else {
    harness::ThresholdSweepConfig sweep;
    sweep.window = cfg.policy.window;
    cfg.policy.theta = harness::recommended_theta(harness::run_threshold_sweep(corpus, sweep));
  }
  cfg.dialogue = dialogue_config(o.data_dir, 0);
  cfg.dialogue.clock = dialogue::DialogueConfig{}.clock;
  cfg.report_dir = o.out;
  std::shared_ptr<socialstore::SocialStore> store;
  if (!o.store.empty()) {
    store = std::make_shared<socialstore::SocialStore>(open_store(o.store));
    cfg.store_path = fs::path(o.store);
  } else {
    store = std::make_shared<socialstore::SocialStore>(
        socialstore::SocialStore::load(fs::path(o.data_dir) / "demo_store.json"));
  }
  service::Service svc(store, harness::detail::lab_registry(corpus, 100), corpus, cfg);
  httplib::Server srv;
  svc.mount(srv);
  out << "listening on " << o.bind << ":" << o.port << " (theta " << cfg.policy.theta
      << ", window " << cfg.policy.window << ")" << std::endl;
  g_server = &srv;
  std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  const bool ok = srv.listen(o.bind, o.port);
  g_server = nullptr;
  if (!ok) throw IoError("cannot listen on " + o.bind + ":" + std::to_string(o.port));
  return kExitOk;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"facebots: face recognition, social memory and dialogue for a conversational robot"};
  app.name("facebots");
  app.require_subcommand(1);

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "corpus seed"); };
  auto add_spec = [&](CLI::App* c) { c->add_option("--spec", o.spec, "corpus spec JSON file"); };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory"); };

  auto* corpus = app.add_subcommand("corpus", "synthetic corpus tools");
  corpus->require_subcommand(1);
  auto* gen = corpus->add_subcommand("gen", "generate the corpus, training export and previews");
  add_seed(gen), add_spec(gen), add_out(gen);

  auto* exp = app.add_subcommand("exp", "run an experiment and write its CSV report");
  exp->require_subcommand(1);
  std::string exp_name;
  for (const char* name : {"threshold", "window", "cost", "transfer"}) {
    auto* e = exp->add_subcommand(name, std::string(name) + " experiment");
    add_seed(e), add_spec(e), add_out(e);
    if (std::string(name) == "threshold") e->add_option("--window", o.window, "decision window");
    e->callback([&exp_name, name] { exp_name = name; });
  }

  auto* store = app.add_subcommand("store", "social store tools");
  store->require_subcommand(1);
  auto* ingest = store->add_subcommand("ingest", "merge store documents or photo sidecars");
  ingest->add_option("--store", o.store, "store file (created if missing)")->required();
  ingest->add_option("inputs", o.inputs, "JSON files to ingest")->required();
  auto* query = store->add_subcommand("query", "query a store file");
  query->add_option("--store", o.store, "store file")->required();
  query->add_option("--person", o.person, "person card and friends");
  query->add_option("--viewer", o.viewer, "apply this viewer's friend-list visibility");
  query->add_option("--mutual", o.mutual, "mutual friends of two persons")->expected(2);
  query->add_option("--memory", o.memory, "interaction records of a person");

  auto* dlg = app.add_subcommand("dialogue", "dialogue tools");
  dlg->require_subcommand(1);
  auto* demo = dlg->add_subcommand("demo", "run the scripted demo conversation");
  demo->add_option("--store", o.store, "store snapshot (default: bundled demo store)");
  demo->add_option("--data", o.data_dir, "directory with templates.json and news.txt");
  add_out(demo);

  auto* srv = app.add_subcommand("serve", "run the HTTP service");
  add_seed(srv), add_spec(srv), add_out(srv);
  srv->add_option("--theta", o.theta, "outlier threshold (default: calibrated on the corpus)");
  srv->add_option("--window", o.window, "evidence window");
  srv->add_option("--bind", o.bind, "bind address");
  srv->add_option("--port", o.port, "port");
  srv->add_option("--store", o.store, "store file, written back after changes");
  srv->add_option("--data", o.data_dir, "directory with templates.json and news.txt");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) return detail::corpus_gen(o, out);
    if (*exp) return detail::experiment(exp_name, o, out);
    if (*ingest) return detail::store_ingest(o, out);
    if (*query) return detail::store_query(o, out);
    if (*demo) return detail::dialogue_demo(o, out);
    if (*srv) return detail::serve(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace facebots::cli
