#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ghostlab/experiment.hpp"

namespace ghostlab::cli {

namespace fs = std::filesystem;
using exp::json;

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("ghostlab");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    if (const char* env = std::getenv("GHOSTLAB_LOG")) l->set_level(spdlog::level::from_str(env));
    return l;
  }();
  return log;
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(exp::read_file(path));
  } catch (const json::parse_error& e) {
    throw exp::ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw exp::ConfigError("--iou: not a number: \"" + item + "\"");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

fs::path manifest_path(const fs::path& out) {
  return fs::is_directory(out) ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
}

/// Output files keyed by their path with the `--out` prefix removed.
std::map<std::string, std::string> hash_outputs(const fs::path& out, const std::vector<std::string>& extra_suffixes) {
  std::map<std::string, std::string> h;
  if (fs::is_directory(out)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    for (const auto& f : files) {
      h["/" + fs::relative(f, out).generic_string()] = exp::hex64(exp::fnv1a(exp::read_file(f)));
    }
  } else {
    h[""] = exp::hex64(exp::fnv1a(exp::read_file(out)));
    for (const auto& s : extra_suffixes) {
      const fs::path p(out.string() + s);
      if (fs::exists(p)) h[s] = exp::hex64(exp::fnv1a(exp::read_file(p)));
    }
  }
  return h;
}

std::string hash_input(const fs::path& p) {
  if (!fs::is_directory(p)) return exp::hex64(exp::fnv1a(exp::read_file(p)));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, p).generic_string() + ":" + exp::hex64(exp::fnv1a(exp::read_file(f))) + "\n";
  return exp::hex64(exp::fnv1a(all));
}

struct Run {
  std::string command;
  std::vector<std::string> args;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::vector<fs::path> inputs;
  fs::path out;
  std::vector<std::string> extra_suffixes;
};

void write_manifest(const Run& r) {
  json inputs = json::object();
  for (const auto& p : r.inputs) inputs[p.generic_string()] = hash_input(p);
  json outputs = json::object();
  for (const auto& [k, v] : hash_outputs(r.out, r.extra_suffixes)) outputs[k] = v;
  const json m{{"format", "ghostlab-manifest"},
               {"version", 1},
               {"tool_version", exp::kVersion},
               {"command", r.command},
               {"args", r.args},
               {"config_hash", r.config ? json(exp::hex64(exp::fnv1a(exp::read_file(*r.config)))) : json(nullptr)},
               {"seed", r.seed ? json(*r.seed) : json(nullptr)},
               {"inputs", inputs},
               {"outputs", outputs}};
  write_text(manifest_path(r.out), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Subcommands

struct Options {
  std::string config, out, data, model, detections, manifest, method = "sgpn", split = "TEST", iou, classes, svg_dir;
  std::vector<std::string> inputs, reports;
  std::vector<int> offsets;
  std::vector<double> times{0.0};
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  int out_len = 10;
  double min_separation = 1.0;
  int frames = 3;
};

std::optional<exp::ExperimentConfig> maybe_experiment(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return exp::experiment_from_json(parse_json_file(path));
}

int cmd_simulate(const Options& o, Run& run) {
  json j = parse_json_file(o.config);
  if (o.seed) j["seed"] = *o.seed;
  if (j.contains("sequences")) {
    const auto cfg = exp::experiment_from_json(j);
    const auto data = exp::build_suite(cfg);
    exp::write_dataset(data, o.out);
    logger()->info("wrote {} sequences to {}", data.size(), o.out);
  } else {
    sim::Scenario s;
    try {
      s = sim::scenario_from_json(j);
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw exp::ConfigError(e.what());
    }
    const auto seq = sim::generate_sequence(s);
    write_sequence(seq, fs::path(o.out));
    logger()->info("wrote {} frames to {}", seq.frames.size(), o.out);
  }
  run.config = o.config;
  run.seed = o.seed ? *o.seed : j.value("seed", std::uint64_t{1});
  return 0;
}

int cmd_overlay(const Options& o, Run& run) {
  std::vector<Sequence> seqs;
  for (const auto& p : o.inputs) {
    seqs.push_back(read_sequence(fs::path(p)));
    run.inputs.emplace_back(p);
  }
  std::vector<const Sequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const sim::OverlayOptions opt{o.min_separation, o.out_len};
  Sequence out;
  std::vector<int> offsets = o.offsets;
  if (!o.offsets.empty()) {
    out = sim::overlay_sequences(ptrs, o.offsets, opt);
  } else {
    std::mt19937_64 rng(o.seed.value_or(1));
    out = sim::overlay_random(ptrs, opt, rng, 200, &offsets);
  }
  write_sequence(out, fs::path(o.out));
  std::ostringstream os;
  for (auto v : offsets) os << v << " ";
  logger()->info("overlay of {} sequences, offsets {}", seqs.size(), os.str());
  run.seed = o.seed.value_or(1);
  return 0;
}

int cmd_ghosts(const Options& o, Run& run) {
  sim::Scenario s;
  try {
    s = sim::scenario_from_json(parse_json_file(o.config));
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw exp::ConfigError(e.what());
  }
  std::ostringstream t;
  t << std::fixed << std::setprecision(3);
  t << std::setw(8) << "t" << std::setw(6) << "wall" << std::setw(7) << "kind" << std::setw(7) << "valid" << std::setw(10)
    << "x" << std::setw(10) << "y" << std::setw(10) << "range" << std::setw(10) << "bearing" << std::setw(10) << "doppler"
    << "\n";
  const Vec2 sensor(0, 0);
  for (double time : o.times) {
    const auto obj = sim::object_state(s, time);
    const auto real = geometry::real_detection(sensor, obj);
    auto row = [&](int wall, std::string_view kind, const geometry::GhostPrediction& g) {
      t << std::setw(8) << time << std::setw(6) << wall << std::setw(7) << kind << std::setw(7) << (g.valid ? "yes" : "no")
        << std::setw(10) << g.pos.x() << std::setw(10) << g.pos.y() << std::setw(10) << g.range << std::setw(10)
        << g.bearing * 180.0 / std::numbers::pi << std::setw(10) << g.doppler << "\n";
    };
    row(-1, "REAL", real);
    for (const auto& w : s.walls) {
      try {
        for (const auto& g : geometry::ghost_detections(sensor, obj, w)) row(w.id, to_string(g.kind), g);
      } catch (const geometry::NoSpecularPath&) {
        t << std::setw(8) << time << std::setw(6) << w.id << "  no specular path\n";
      }
    }
  }
  std::cout << t.str();
  if (!o.out.empty()) write_text(o.out, t.str());
  run.config = o.config;
  return 0;
}

int cmd_train(const Options& o, Run& run) {
  auto cfg = exp::load_experiment(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.steps) cfg.train.steps = *o.steps;
  if (!o.classes.empty()) {
    const auto slash = o.classes.find('/');
    if (slash == std::string::npos) throw exp::ConfigError("--classes: expected GRANULARITY/LABELS");
    try {
      cfg.classes.granularity = granularity_from_string(o.classes.substr(0, slash));
      cfg.classes.labelset = labelset_from_string(o.classes.substr(slash + 1));
    } catch (const std::invalid_argument&) {
      throw exp::ConfigError("--classes: unknown value \"" + o.classes + "\"");
    }
  }
  cfg.validate();
  const auto data = exp::read_dataset(o.data);
  const auto train = exp::select_split(data, Split::Train);
  if (cfg.train.log_every == 0) cfg.train.log_every = std::max(1, cfg.train.steps / 20);
  logger()->info("training {} on {} sequences, {} steps", cfg.classes.name(), train.size(), cfg.train.steps);
  const auto result = exp::train_model(cfg, train, [](const nn::LossRecord& r) {
    logger()->info("step {:6d}  loss {:.4f}  sem {:.4f}  sim {:.4f}  conf {:.4f}", r.step, r.loss.total, r.loss.semantic,
                   r.loss.similarity, r.loss.confidence);
  });
  nn::save_model(result.model, o.out);
  std::ostringstream curve;
  curve << "step,total,semantic,similarity,confidence\n";
  for (const auto& r : result.curve) {
    curve << r.step << "," << json(r.loss.total).dump() << "," << json(r.loss.semantic).dump() << ","
          << json(r.loss.similarity).dump() << "," << json(r.loss.confidence).dump() << "\n";
  }
  write_text(o.out + ".loss.csv", curve.str());
  run.config = o.config;
  run.seed = cfg.train.seed;
  run.inputs.emplace_back(o.data);
  run.extra_suffixes = {".loss.csv"};
  return 0;
}

int cmd_detect(const Options& o, Run& run) {
  const auto model = nn::load_model(o.model);
  const auto cfg = maybe_experiment(o.config);
  detect::SgpnParams sgpn{model.loss.k1, 0.5};
  detect::DbscanParams dbscan;
  if (cfg) {
    sgpn = cfg->sgpn;
    dbscan = cfg->dbscan;
  }
  Split split;
  try {
    split = split_from_string(o.split);
  } catch (const std::invalid_argument&) {
    throw exp::ConfigError("--split: unknown value \"" + o.split + "\"");
  }
  exp::Method method;
  try {
    method = exp::method_from_string(o.method);
  } catch (const std::invalid_argument& e) {
    throw exp::ConfigError(std::string("--method: ") + e.what());
  }
  const auto data = exp::read_dataset(o.data);
  auto seqs = fs::is_directory(o.data) ? exp::select_split(data, split) : std::vector<const exp::NamedSequence*>{&data[0]};
  const auto dets = exp::run_detection(model, seqs, method, sgpn, dbscan);
  std::ostringstream os;
  exp::write_detections(dets, os);
  write_text(o.out, os.str());
  std::size_t n = 0;
  for (const auto& f : dets.frames) n += f.detections.size();
  logger()->info("{} detections in {} frames with detections", n, dets.frames.size());
  if (cfg) run.config = o.config;
  run.inputs = {o.model, o.data};
  return 0;
}

int cmd_evaluate(const Options& o, Run& run) {
  exp::EvalConfig ec;
  if (const auto cfg = maybe_experiment(o.config)) {
    ec = cfg->eval;
    run.config = o.config;
  }
  if (!o.iou.empty()) ec.iou = parse_list(o.iou);
  for (double t : ec.iou) {
    if (!(t >= 0.0 && t < 1.0)) throw exp::ConfigError("--iou: thresholds must be in [0, 1)");
  }
  std::ifstream in(o.detections);
  if (!in) throw std::runtime_error("cannot open " + o.detections);
  const auto dets = exp::read_detections(in);
  const auto data = exp::read_dataset(o.data);
  std::vector<const exp::NamedSequence*> all;
  for (const auto& s : data) all.push_back(&s);
  std::optional<exp::SemanticPredictions> sem;
  run.inputs = {o.detections, o.data};
  if (!o.model.empty()) {
    const auto model = nn::load_model(o.model);
    std::vector<const exp::NamedSequence*> evaluated;
    for (const auto& name : dets.sequences) {
      for (const auto* s : all) {
        if (s->name == name) evaluated.push_back(s);
      }
    }
    sem = exp::semantic_predictions(model, evaluated);
    run.inputs.emplace_back(o.model);
  }
  const auto report = exp::evaluate(dets, all, ec, sem ? &*sem : nullptr);
  const auto text = exp::format_report(report);
  std::cout << text;
  write_text(o.out, exp::report_to_json(report).dump(2) + "\n");
  write_text(o.out + ".txt", text);
  run.extra_suffixes = {".txt"};
  return 0;
}

int cmd_report(const Options& o, Run& run) {
  std::vector<exp::EvalReport> reports;
  std::string text;
  for (const auto& p : o.reports) {
    reports.push_back(exp::report_from_json(parse_json_file(p)));
    run.inputs.emplace_back(p);
  }
  for (const auto& r : reports) text += exp::format_report(r) + "\n";
  text += exp::format_summary(reports);
  std::cout << text;
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "summary.txt", text);

  if (!o.detections.empty()) {
    if (o.data.empty()) throw exp::ConfigError("--data: required with --detections");
    std::ifstream in(o.detections);
    if (!in) throw std::runtime_error("cannot open " + o.detections);
    const auto dets = exp::read_detections(in);
    const auto data = exp::read_dataset(o.data);
    run.inputs.emplace_back(o.detections);
    run.inputs.emplace_back(o.data);
    std::map<std::pair<std::string, std::size_t>, const std::vector<detect::Detection>*> by_frame;
    for (const auto& f : dets.frames) by_frame[{f.sequence, f.frame}] = &f.detections;
    int written = 0;
    for (const auto& name : dets.sequences) {
      const auto it = std::find_if(data.begin(), data.end(), [&](const auto& s) { return s.name == name; });
      if (it == data.end()) throw std::invalid_argument("sequence \"" + name + "\" not in dataset");
      const auto windows = exp::window_frames(it->sequence, dets.preprocess);
      for (int k = 0; k < o.frames && !windows.empty(); ++k) {
        const auto f = windows[(windows.size() * (2 * static_cast<std::size_t>(k) + 1)) / (2 * static_cast<std::size_t>(o.frames))];
        const auto d = by_frame.find({name, f});
        const auto svg = exp::render_svg(it->sequence, f, d == by_frame.end() ? nullptr : d->second, dets.preprocess,
                                         dets.classes);
        write_text(fs::path(o.out) / (name + "_" + std::to_string(f) + ".svg"), svg);
        ++written;
      }
    }
    logger()->info("wrote {} snapshots", written);
  }
  return 0;
}

int cmd_sweep(const Options& o, Run& run) {
  auto cfg = exp::load_experiment(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.steps) cfg.train.steps = *o.steps;
  if (cfg.train.log_every == 0) cfg.train.log_every = std::max(1, cfg.train.steps / 10);
  const auto data = exp::read_dataset(o.data);
  const auto train = exp::select_split(data, Split::Train);
  const auto test = exp::select_split(data, Split::Test);
  std::vector<const exp::NamedSequence*> all;
  for (const auto& s : data) all.push_back(&s);
  fs::create_directories(o.out);

  std::vector<exp::EvalReport> reports;
  for (const auto& cc : ClassConfig::all()) {
    cfg.classes = cc;
    std::string tag = std::string(to_string(cc.granularity)) + "_" + std::string(to_string(cc.labelset));
    std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    logger()->info("sweep: training {}", cc.name());
    const auto result = exp::train_model(cfg, train, [](const nn::LossRecord& r) {
      logger()->info("step {:6d}  loss {:.4f}", r.step, r.loss.total);
    });
    nn::save_model(result.model, fs::path(o.out) / ("model_" + tag + ".json"));
    const auto sem = exp::semantic_predictions(result.model, test);
    for (auto method : {exp::Method::Sgpn, exp::Method::Dbscan}) {
      const auto dets = exp::run_detection(result.model, test, method, cfg.sgpn, cfg.dbscan);
      std::ostringstream os;
      exp::write_detections(dets, os);
      const std::string stem = tag + "_" + std::string(method == exp::Method::Sgpn ? "sgpn" : "dbscan");
      write_text(fs::path(o.out) / ("detections_" + stem + ".jsonl"), os.str());
      auto report = exp::evaluate(dets, all, cfg.eval, &sem);
      write_text(fs::path(o.out) / ("report_" + stem + ".json"), exp::report_to_json(report).dump(2) + "\n");
      write_text(fs::path(o.out) / ("report_" + stem + ".txt"), exp::format_report(report));
      reports.push_back(std::move(report));
    }
  }
  const auto summary = exp::format_summary(reports);
  write_text(fs::path(o.out) / "summary.txt", summary);
  std::cout << summary;
  run.config = o.config;
  run.seed = cfg.train.seed;
  run.inputs.emplace_back(o.data);
  return 0;
}

int cmd_replay(const Options& o) {
  const json m = parse_json_file(o.manifest);
  if (m.value("format", "") != "ghostlab-manifest") throw exp::ConfigError(o.manifest + ": not a ghostlab manifest");
  auto args = m.at("args").get<std::vector<std::string>>();
  const auto it = std::find(args.begin(), args.end(), "--out");
  if (it == args.end() || it + 1 == args.end()) throw exp::ConfigError(o.manifest + ": recorded run has no --out");
  *(it + 1) = o.out;
  for (const auto& [path, hash] : m.at("inputs").items()) {
    if (!fs::exists(path) || hash_input(path) != hash.get<std::string>()) {
      logger()->warn("input {} differs from the recorded run", path);
    }
  }
  const int status = run(args);
  if (status != 0) return status;

  int mismatches = 0;
  for (const auto& [suffix, hash] : m.at("outputs").items()) {
    const fs::path p = suffix.starts_with("/") ? fs::path(o.out) / suffix.substr(1) : fs::path(o.out + suffix);
    const bool same = fs::exists(p) && exp::hex64(exp::fnv1a(exp::read_file(p))) == hash.get<std::string>();
    if (!same) {
      ++mismatches;
      std::cout << "DIFFERS " << p.string() << "\n";
    }
  }
  std::cout << (mismatches ? "replay: outputs differ\n" : "replay: byte-identical\n");
  return mismatches ? 3 : 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"ghostlab: radar multi-path ghost lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(exp::kVersion));
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Simulate a scenario, or a whole experiment suite into a directory");
  simulate->add_option("--config", o.config, "Scenario or experiment JSON")->required();
  simulate->add_option("--seed", o.seed, "Override the seed");
  simulate->add_option("--out", o.out, "Output .jsonl (scenario) or directory (experiment)")->required();

  auto* overlay = app.add_subcommand("overlay", "Overlay 2-5 sequences of one scenario");
  overlay->add_option("--inputs", o.inputs, "Source sequences")->required()->expected(2, 5);
  overlay->add_option("--offsets", o.offsets, "Frame offsets per source (random when omitted)");
  overlay->add_option("--seed", o.seed, "Seed for random offsets");
  overlay->add_option("--out-len", o.out_len, "Output length in frames");
  overlay->add_option("--min-separation", o.min_separation, "Minimum centroid distance between sources, m");
  overlay->add_option("--out", o.out, "Output .jsonl")->required();

  auto* ghosts = app.add_subcommand("ghosts", "Tabulate predicted ghost positions for a scenario");
  ghosts->add_option("--config", o.config, "Scenario JSON")->required();
  ghosts->add_option("--time", o.times, "Times in seconds");
  ghosts->add_option("--out", o.out, "Also write the table to this file");

  auto* train = app.add_subcommand("train", "Train a model on the TRAIN split");
  train->add_option("--config", o.config, "Experiment JSON")->required();
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--seed", o.seed, "Override the training seed");
  train->add_option("--steps", o.steps, "Override the number of steps");
  train->add_option("--classes", o.classes, "Override the classes, e.g. MERGED/GHOST_MERGED");
  train->add_option("--out", o.out, "Model checkpoint")->required();

  auto* det = app.add_subcommand("detect", "Run instance detection");
  det->add_option("--model", o.model, "Model checkpoint")->required();
  det->add_option("--data", o.data, "Dataset directory or sequence file")->required();
  det->add_option("--split", o.split, "Split to process (dataset directories)");
  det->add_option("--method", o.method, "sgpn or dbscan");
  det->add_option("--config", o.config, "Experiment JSON with detector parameters");
  det->add_option("--out", o.out, "Detections .jsonl")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score detections against ground truth");
  evaluate->add_option("--detections", o.detections, "Detections .jsonl")->required();
  evaluate->add_option("--data", o.data, "Dataset directory or sequence file")->required();
  evaluate->add_option("--model", o.model, "Model checkpoint, enables semantic F1");
  evaluate->add_option("--config", o.config, "Experiment JSON with eval settings");
  evaluate->add_option("--iou", o.iou, "Comma-separated IoU thresholds");
  evaluate->add_option("--out", o.out, "Report .json (text next to it)")->required();

  auto* report = app.add_subcommand("report", "Render metric tables and BEV snapshots");
  report->add_option("--reports", o.reports, "Report .json files")->required();
  report->add_option("--detections", o.detections, "Detections for BEV snapshots");
  report->add_option("--data", o.data, "Dataset for BEV snapshots");
  report->add_option("--frames", o.frames, "Snapshots per sequence");
  report->add_option("--out", o.out, "Output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate all six class configurations");
  sweep->add_option("--config", o.config, "Experiment JSON")->required();
  sweep->add_option("--data", o.data, "Dataset directory")->required();
  sweep->add_option("--seed", o.seed, "Override the training seed");
  sweep->add_option("--steps", o.steps, "Override the number of steps");
  sweep->add_option("--out", o.out, "Output directory")->required();

  auto* replay = app.add_subcommand("replay", "Re-run a stage from its manifest and compare outputs");
  replay->add_option("--manifest", o.manifest, "Manifest written by an earlier run")->required();
  replay->add_option("--out", o.out, "Where to write the re-run outputs")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto* sub = app.get_subcommands().front();
  Run r{sub->get_name(), args, std::nullopt, std::nullopt, {}, fs::path(o.out), {}};
  try {
    int status = 0;
    const auto& name = sub->get_name();
    if (name == "replay") return cmd_replay(o);
    if (name == "simulate") status = cmd_simulate(o, r);
    else if (name == "overlay") status = cmd_overlay(o, r);
    else if (name == "ghosts") status = cmd_ghosts(o, r);
    else if (name == "train") status = cmd_train(o, r);
    else if (name == "detect") status = cmd_detect(o, r);
    else if (name == "evaluate") status = cmd_evaluate(o, r);
    else if (name == "report") status = cmd_report(o, r);
    else if (name == "sweep") status = cmd_sweep(o, r);
    if (status == 0 && !o.out.empty()) write_manifest(r);
    return status;
  } catch (const exp::ConfigError& e) {
    logger()->error("config error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return 1;
  }
}

}  // namespace ghostlab::cli
