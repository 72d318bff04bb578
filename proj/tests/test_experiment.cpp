#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "checks.hpp"
#include "cli.hpp"
#include "ghostlab/experiment.hpp"

using namespace ghostlab;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config() {
  std::ifstream in(GHOSTLAB_CONFIG_DIR "/tiny.json");
  return nlohmann::json::parse(in);
}

std::string error_of(const nlohmann::json& j) {
  try {
    exp::experiment_from_json(j).validate();
  } catch (const exp::ConfigError& e) {
    return e.what();
  }
  return {};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ghostlab-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int quiet_run(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int status = cli::run(args);
  std::cout.rdbuf(old);
  return status;
}

}  // namespace

TEST_CASE("experiment config round-trips and validates") {
  const auto cfg = exp::experiment_from_json(tiny_config());
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.sequences.size() == 4);
  CHECK(cfg.sgpn.k1 == cfg.loss.k1);
  const auto again = exp::experiment_from_json(exp::experiment_to_json(cfg));
  CHECK(exp::experiment_to_json(again) == exp::experiment_to_json(cfg));
}

TEST_CASE("config errors name the offending field") {
  auto j = tiny_config();
  j["train"]["lr"] = "fast";
  CHECK(error_of(j).find("train.lr") != std::string::npos);

  j = tiny_config();
  j["sequences"][0]["split"] = "TEST";
  CHECK(error_of(j).find("corridor") != std::string::npos);  // test scenario also used for training

  j = tiny_config();
  j["model"]["k"] = 1000;
  CHECK(error_of(j).find("model.k") != std::string::npos);

  j = tiny_config();
  j["loss"] = {{"k1", 2.0}, {"k2", 1.0}};
  CHECK(error_of(j).find("loss") != std::string::npos);

  j = tiny_config();
  j["sequences"][1]["scenario"] = "atrium";
  CHECK(error_of(j).find("atrium") != std::string::npos);

  j = tiny_config();
  j["overlays"]["out_len"] = 5;
  CHECK(error_of(j).find("overlays") != std::string::npos);

  j = tiny_config();
  j["classes"]["labels"] = "SOME";
  CHECK_FALSE(error_of(j).empty());
}

TEST_CASE("the CLI rejects invalid configs with status 2") {
  const auto dir = scratch("badcfg");
  auto j = tiny_config();
  j["preprocess"]["n_points"] = -4;
  std::ofstream(dir / "bad.json") << j.dump();
  CHECK(quiet_run({"simulate", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()}) == 2);
  CHECK(quiet_run({"simulate", "--config", (dir / "missing.json").string(), "--out", (dir / "d").string()}) != 0);
  CHECK(quiet_run({"frobnicate"}) != 0);
}

TEST_CASE("suite generation is deterministic and split by scenario") {
  const auto cfg = exp::experiment_from_json(tiny_config());
  const auto a = exp::build_suite(cfg);
  const auto b = exp::build_suite(cfg);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sequence == b[i].sequence);
  for (const auto* s : exp::select_split(a, Split::Test)) CHECK(s->sequence.scenario_id == "corridor-b");
  for (const auto* s : exp::select_split(a, Split::Train)) CHECK(s->sequence.scenario_id == "corridor");
  CHECK(exp::select_split(a, Split::Test).size() == 3);

  const auto dir = scratch("dataset");
  exp::write_dataset(a, dir);
  const auto back = exp::read_dataset(dir);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].name == a[i].name);
    CHECK(back[i].sequence == a[i].sequence);
  }
}

TEST_CASE("simulate twice gives identical files") {
  const auto dir = scratch("simtwice");
  const std::string cfg = GHOSTLAB_CONFIG_DIR "/corridor.json";
  REQUIRE(quiet_run({"simulate", "--config", cfg, "--seed", "1", "--out", (dir / "a.jsonl").string()}) == 0);
  REQUIRE(quiet_run({"simulate", "--config", cfg, "--seed", "1", "--out", (dir / "b.jsonl").string()}) == 0);
  CHECK(exp::read_file(dir / "a.jsonl") == exp::read_file(dir / "b.jsonl"));
  REQUIRE(quiet_run({"simulate", "--config", cfg, "--seed", "2", "--out", (dir / "c.jsonl").string()}) == 0);
  CHECK(exp::read_file(dir / "a.jsonl") != exp::read_file(dir / "c.jsonl"));
}

TEST_CASE("an untrained model evaluates to zero AP") {
  const auto dir = scratch("untrained");
  // At realistic clutter density a whole-window detection never reaches the IoU thresholds.
  auto j = tiny_config();
  for (auto& [id, s] : j["scenarios"].items()) s["clutter_rate"] = 150;
  const auto cfg = exp::experiment_from_json(j);
  exp::write_dataset(exp::build_suite(cfg), dir / "data");
  nn::Model m;
  nn::ModelShape shape = cfg.model;
  shape.classes = cfg.classes.num_classes();
  m.params = nn::ModelParams(shape);
  m.classes = cfg.classes;
  m.preprocess = cfg.preprocess;
  m.loss = cfg.loss;
  m.loss.class_weights.assign(static_cast<std::size_t>(shape.classes), 1.0);
  nn::save_model(m, dir / "zero.json");

  REQUIRE(quiet_run({"detect", "--model", (dir / "zero.json").string(), "--data", (dir / "data").string(), "--out",
                     (dir / "d.jsonl").string()}) == 0);
  REQUIRE(quiet_run({"evaluate", "--detections", (dir / "d.jsonl").string(), "--data", (dir / "data").string(),
                     "--out", (dir / "r.json").string()}) == 0);
  const auto report = exp::report_from_json(nlohmann::json::parse(exp::read_file(dir / "r.json")));
  int checked = 0;
  for (const auto& table : report.ap) {
    for (const auto& c : table.classes) {
      REQUIRE(c.ap.has_value());
      CHECK(*c.ap == 0.0);
      ++checked;
    }
  }
  CHECK(checked == 4);
  CHECK(fs::exists(dir / "r.json.txt"));
}

TEST_CASE("detections and reports round-trip") {
  const auto cfg = exp::experiment_from_json(tiny_config());
  const auto data = exp::build_suite(cfg);
  const auto test = exp::select_split(data, Split::Test);
  auto c = cfg;
  c.train.steps = 5;
  const auto trained = exp::train_model(c, exp::select_split(data, Split::Train));
  CHECK(trained.curve.size() == 5);
  const auto dets = exp::run_detection(trained.model, test, exp::Method::Dbscan, c.sgpn, c.dbscan);
  std::stringstream ss;
  exp::write_detections(dets, ss);
  const auto back = exp::read_detections(ss);
  std::stringstream ss2;
  exp::write_detections(back, ss2);
  CHECK(ss.str() == ss2.str());

  const auto sem = exp::semantic_predictions(trained.model, test);
  const auto report = exp::evaluate(dets, test, c.eval, &sem);
  const auto j = exp::report_to_json(report);
  CHECK(exp::report_to_json(exp::report_from_json(j)) == j);
  CHECK(report.f1.has_value());
  CHECK(exp::find_ap(report, "obj", 0.3).has_value());
  CHECK_FALSE(exp::find_ap(report, "obj", 0.7).has_value());
  CHECK_FALSE(exp::format_report(report).empty());
  if (!report.attribution.empty) {
    double sum = 0.0;
    for (int k = 0; k < static_cast<int>(eval::FpCause::kCount); ++k) {
      sum += report.attribution.attribution.fraction(static_cast<eval::FpCause>(k));
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  const auto svg = exp::render_svg(test[0]->sequence, 5, &dets.frames.front().detections, c.preprocess, c.classes);
  CHECK(svg.starts_with("<svg"));
}

TEST_CASE("every stage replays byte-identically from its manifest") {
  const auto dir = scratch("replay");
  const auto r = checks::determinism_suite(dir.string(), GHOSTLAB_CONFIG_DIR, 4);
  INFO(r.detail);
  CHECK(r.ok);
}

TEST_CASE("sweep covers the six class configurations") {
  const auto dir = scratch("sweep");
  const auto cfg = exp::experiment_from_json(tiny_config());
  exp::write_dataset(exp::build_suite(cfg), dir / "data");
  REQUIRE(quiet_run({"sweep", "--config", GHOSTLAB_CONFIG_DIR "/tiny.json", "--data", (dir / "data").string(),
                     "--steps", "2", "--out", (dir / "sweep").string()}) == 0);
  const auto summary = exp::read_file(dir / "sweep" / "summary.txt");
  for (const auto& c : ClassConfig::all()) CHECK(summary.find(c.name()) != std::string::npos);
}
