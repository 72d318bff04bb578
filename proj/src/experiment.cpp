#include "ghostlab/experiment.hpp"

#include <type_traits>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace ghostlab::exp {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) { throw ConfigError(field + ": " + what); }

template <typename T>
T field(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (j.at(key).is_number_integer() && j.at(key).get<std::int64_t>() < 0) fail(path + "." + key, "must not be negative");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename F>
auto parse_enum(const json& j, const std::string& key, const std::string& path, F from_string,
                decltype(from_string("")) fallback) {
  if (!j.contains(key)) return fallback;
  const auto s = field<std::string>(j, key, path, "");
  try {
    return from_string(s);
  } catch (const std::exception&) {
    fail(path + "." + key, "unknown value \"" + s + "\"");
  }
}

eval::Interpolation interpolation_from_string(std::string_view s) {
  if (s == "ALL_POINT") return eval::Interpolation::AllPoint;
  if (s == "ELEVEN_POINT") return eval::Interpolation::ElevenPoint;
  throw std::invalid_argument("interpolation");
}

Pooling pooling_from_string(std::string_view s) {
  if (s == "POOLED") return Pooling::Pooled;
  if (s == "PER_FRAME") return Pooling::PerFrame;
  throw std::invalid_argument("pooling");
}

const NamedSequence& find_sequence(const std::vector<const NamedSequence*>& data, const std::string& name) {
  for (const auto* s : data) {
    if (s->name == name) return *s;
  }
  throw std::invalid_argument("sequence \"" + name + "\" not in dataset");
}

std::string pct(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return "-";
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * *v;
  return o.str();
}

std::string pad(std::string s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string iou_key(double iou) {
  std::ostringstream o;
  o << iou;
  return o.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (scenarios.empty()) fail("scenarios", "at least one scenario required");
  if (sequences.empty()) fail("sequences", "at least one sequence required");
  std::set<std::string> names;
  std::set<std::string> train_val, test;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    const std::string path = "sequences[" + std::to_string(i) + "]";
    if (s.name.empty()) fail(path + ".name", "must not be empty");
    if (s.name.find_first_of("/\\") != std::string::npos) fail(path + ".name", "must not contain path separators");
    if (!names.insert(s.name).second) fail(path + ".name", "duplicate \"" + s.name + "\"");
    if (!scenarios.contains(s.scenario)) fail(path + ".scenario", "unknown scenario \"" + s.scenario + "\"");
    (s.split == Split::Test ? test : train_val).insert(s.scenario);
    try {
      scenario_for(s).validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(path, e.what());
    }
  }
  for (const auto& id : test) {
    if (train_val.contains(id)) fail("sequences", "scenario \"" + id + "\" appears in both test and train/val splits");
  }
  if (overlays.min_sources < 2 || overlays.max_sources > 5 || overlays.min_sources > overlays.max_sources) {
    fail("overlays.sources", "need 2 <= min_sources <= max_sources <= 5");
  }
  if (overlays.options.out_len < 10) fail("overlays.out_len", "must be at least 10");
  if (!(overlays.options.min_separation >= 0.0)) fail("overlays.min_separation", "must be non-negative");
  for (const auto& [split, n] : overlays.count) {
    if (n < 0) fail("overlays.count." + std::string(to_string(split)), "must be non-negative");
  }
  if (preprocess.n_cycles < 1) fail("preprocess.n_cycles", "must be at least 1");
  if (preprocess.n_points < 1) fail("preprocess.n_points", "must be at least 1");
  if (model.hidden < 1) fail("model.hidden", "must be positive");
  if (model.embed < 1) fail("model.embed", "must be positive");
  if (model.k < 1 || static_cast<std::size_t>(model.k) > preprocess.n_points) {
    fail("model.k", "must be in [1, preprocess.n_points]");
  }
  try {
    auto w = loss;
    w.class_weights.assign(static_cast<std::size_t>(classes.num_classes()), 1.0);
    w.validate();
  } catch (const std::exception& e) {
    fail("loss", e.what());
  }
  if (!(train.lr > 0.0)) fail("train.lr", "must be positive");
  if (train.steps < 0) fail("train.steps", "must be non-negative");
  if (train.batch < 1) fail("train.batch", "must be at least 1");
  if (train.pair_points < 2) fail("train.pair_points", "must be at least 2");
  if (frame_stride < 1) fail("train.frame_stride", "must be at least 1");
  if (!(sgpn.k1 > 0.0)) fail("detector.sgpn.k1", "must be positive");
  if (!(sgpn.nms_iou >= 0.0 && sgpn.nms_iou <= 1.0)) fail("detector.sgpn.nms_iou", "must be in [0, 1]");
  if (!(dbscan.eps > 0.0)) fail("detector.dbscan.eps", "must be positive");
  if (dbscan.min_pts < 1) fail("detector.dbscan.min_pts", "must be at least 1");
  if (eval.iou.empty()) fail("eval.iou", "at least one threshold required");
  for (double t : eval.iou) {
    if (!(t >= 0.0 && t < 1.0)) fail("eval.iou", "thresholds must be in [0, 1)");
  }
  if (!(eval.attribution_iou >= 0.0 && eval.attribution_iou < 1.0)) fail("eval.attribution_iou", "must be in [0, 1)");
}

sim::Scenario ExperimentConfig::scenario_for(const SequenceSpec& spec) const {
  json doc = scenarios.at(spec.scenario);
  doc.merge_patch(spec.overrides);
  doc["scenario_id"] = spec.scenario;
  doc["split"] = std::string(to_string(spec.split));
  doc["seed"] = spec.seed;
  return sim::scenario_from_json(doc);
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) fail("experiment", "expected an object");
  ExperimentConfig c;
  c.name = field<std::string>(j, "name", "experiment", c.name);
  c.seed = field<std::uint64_t>(j, "seed", "experiment", c.seed);

  if (!j.contains("scenarios") || !j.at("scenarios").is_object()) fail("scenarios", "expected an object of scenarios");
  for (const auto& [id, doc] : j.at("scenarios").items()) {
    if (!doc.is_object()) fail("scenarios." + id, "expected an object");
    c.scenarios[id] = doc;
  }
  if (!j.contains("sequences") || !j.at("sequences").is_array()) fail("sequences", "expected an array");
  for (std::size_t i = 0; i < j.at("sequences").size(); ++i) {
    const auto& js = j.at("sequences")[i];
    const std::string path = "sequences[" + std::to_string(i) + "]";
    if (!js.is_object()) fail(path, "expected an object");
    SequenceSpec s;
    s.scenario = field<std::string>(js, "scenario", path, "");
    s.name = field<std::string>(js, "name", path, s.scenario + "-" + std::to_string(i));
    s.split = parse_enum(js, "split", path, split_from_string, Split::Train);
    s.seed = field<std::uint64_t>(js, "seed", path, c.seed + i);
    if (js.contains("overrides")) {
      if (!js.at("overrides").is_object()) fail(path + ".overrides", "expected an object");
      s.overrides = js.at("overrides");
    }
    c.sequences.push_back(std::move(s));
  }

  if (j.contains("overlays")) {
    const auto& jo = j.at("overlays");
    if (jo.contains("count")) {
      for (const auto& [split, n] : jo.at("count").items()) {
        Split sp;
        try {
          sp = split_from_string(split);
        } catch (const std::exception&) {
          fail("overlays.count", "unknown split \"" + split + "\"");
        }
        if (!n.is_number_integer()) fail("overlays.count." + split, "expected an integer");
        c.overlays.count[sp] = n.get<int>();
      }
    }
    c.overlays.min_sources = field<int>(jo, "min_sources", "overlays", c.overlays.min_sources);
    c.overlays.max_sources = field<int>(jo, "max_sources", "overlays", c.overlays.max_sources);
    c.overlays.options.out_len = field<int>(jo, "out_len", "overlays", c.overlays.options.out_len);
    c.overlays.options.min_separation = field<double>(jo, "min_separation", "overlays", c.overlays.options.min_separation);
  }

  if (j.contains("classes")) {
    const auto& jc = j.at("classes");
    c.classes.granularity = parse_enum(jc, "granularity", "classes", granularity_from_string, c.classes.granularity);
    c.classes.labelset = parse_enum(jc, "labels", "classes", labelset_from_string, c.classes.labelset);
  }
  if (j.contains("preprocess")) {
    const auto& jp = j.at("preprocess");
    c.preprocess.n_cycles = field<int>(jp, "n_cycles", "preprocess", c.preprocess.n_cycles);
    c.preprocess.n_points = field<std::size_t>(jp, "n_points", "preprocess", c.preprocess.n_points);
    c.preprocess.standardize = field<bool>(jp, "standardize", "preprocess", c.preprocess.standardize);
  }
  if (j.contains("model")) {
    const auto& jm = j.at("model");
    c.model.hidden = field<int>(jm, "hidden", "model", c.model.hidden);
    c.model.k = field<int>(jm, "k", "model", c.model.k);
    c.model.embed = field<int>(jm, "embed", "model", c.model.embed);
  }
  if (j.contains("loss")) {
    const auto& jl = j.at("loss");
    c.loss.k1 = field<double>(jl, "k1", "loss", c.loss.k1);
    c.loss.k2 = field<double>(jl, "k2", "loss", c.loss.k2);
    c.loss.alpha = field<double>(jl, "alpha", "loss", c.loss.alpha);
    c.loss.semantic = field<double>(jl, "semantic", "loss", c.loss.semantic);
    c.loss.similarity = field<double>(jl, "similarity", "loss", c.loss.similarity);
    c.loss.confidence = field<double>(jl, "confidence", "loss", c.loss.confidence);
  }
  if (j.contains("train")) {
    const auto& jt = j.at("train");
    c.train.lr = field<double>(jt, "lr", "train", c.train.lr);
    c.train.steps = field<int>(jt, "steps", "train", c.train.steps);
    c.train.batch = field<int>(jt, "batch", "train", c.train.batch);
    c.train.pair_points = field<int>(jt, "pair_points", "train", c.train.pair_points);
    c.train.seed = field<std::uint64_t>(jt, "seed", "train", c.train.seed);
    c.train.log_every = field<int>(jt, "log_every", "train", c.train.log_every);
    c.frame_stride = field<int>(jt, "frame_stride", "train", c.frame_stride);
  }
  if (j.contains("detector")) {
    const auto& jd = j.at("detector");
    if (jd.contains("sgpn")) {
      const auto& js = jd.at("sgpn");
      c.sgpn.k1 = field<double>(js, "k1", "detector.sgpn", c.loss.k1);
      c.sgpn.nms_iou = field<double>(js, "nms_iou", "detector.sgpn", c.sgpn.nms_iou);
    } else {
      c.sgpn.k1 = c.loss.k1;
    }
    if (jd.contains("dbscan")) {
      const auto& jb = jd.at("dbscan");
      c.dbscan.eps = field<double>(jb, "eps", "detector.dbscan", c.dbscan.eps);
      c.dbscan.min_pts = field<int>(jb, "min_pts", "detector.dbscan", c.dbscan.min_pts);
      c.dbscan.doppler_weight = field<double>(jb, "doppler_weight", "detector.dbscan", c.dbscan.doppler_weight);
      c.dbscan.time_weight = field<double>(jb, "time_weight", "detector.dbscan", c.dbscan.time_weight);
      c.dbscan.background_threshold =
          field<double>(jb, "background_threshold", "detector.dbscan", c.dbscan.background_threshold);
    }
  }
  if (j.contains("eval")) {
    const auto& je = j.at("eval");
    c.eval.iou = field<std::vector<double>>(je, "iou", "eval", c.eval.iou);
    c.eval.interpolation = parse_enum(je, "interpolation", "eval", interpolation_from_string, c.eval.interpolation);
    c.eval.pooling = parse_enum(je, "pooling", "eval", pooling_from_string, c.eval.pooling);
    c.eval.attribution_iou = field<double>(je, "attribution_iou", "eval", c.eval.attribution_iou);
  }
  c.validate();
  return c;
}

json experiment_to_json(const ExperimentConfig& c) {
  json scen = json::object();
  for (const auto& [id, doc] : c.scenarios) scen[id] = doc;
  json seqs = json::array();
  for (const auto& s : c.sequences) {
    seqs.push_back({{"name", s.name},
                    {"scenario", s.scenario},
                    {"split", to_string(s.split)},
                    {"seed", s.seed},
                    {"overrides", s.overrides}});
  }
  json counts = json::object();
  for (const auto& [split, n] : c.overlays.count) counts[std::string(to_string(split))] = n;
  return {{"name", c.name},
          {"seed", c.seed},
          {"scenarios", scen},
          {"sequences", seqs},
          {"overlays",
           {{"count", counts},
            {"min_sources", c.overlays.min_sources},
            {"max_sources", c.overlays.max_sources},
            {"out_len", c.overlays.options.out_len},
            {"min_separation", c.overlays.options.min_separation}}},
          {"classes", {{"granularity", to_string(c.classes.granularity)}, {"labels", to_string(c.classes.labelset)}}},
          {"preprocess",
           {{"n_cycles", c.preprocess.n_cycles},
            {"n_points", c.preprocess.n_points},
            {"standardize", c.preprocess.standardize}}},
          {"model", {{"hidden", c.model.hidden}, {"k", c.model.k}, {"embed", c.model.embed}}},
          {"loss",
           {{"k1", c.loss.k1},
            {"k2", c.loss.k2},
            {"alpha", c.loss.alpha},
            {"semantic", c.loss.semantic},
            {"similarity", c.loss.similarity},
            {"confidence", c.loss.confidence}}},
          {"train",
           {{"lr", c.train.lr},
            {"steps", c.train.steps},
            {"batch", c.train.batch},
            {"pair_points", c.train.pair_points},
            {"seed", c.train.seed},
            {"log_every", c.train.log_every},
            {"frame_stride", c.frame_stride}}},
          {"detector",
           {{"sgpn", {{"k1", c.sgpn.k1}, {"nms_iou", c.sgpn.nms_iou}}},
            {"dbscan",
             {{"eps", c.dbscan.eps},
              {"min_pts", c.dbscan.min_pts},
              {"doppler_weight", c.dbscan.doppler_weight},
              {"time_weight", c.dbscan.time_weight},
              {"background_threshold", c.dbscan.background_threshold}}}}},
          {"eval",
           {{"iou", c.eval.iou},
            {"interpolation", c.eval.interpolation == eval::Interpolation::AllPoint ? "ALL_POINT" : "ELEVEN_POINT"},
            {"pooling", c.eval.pooling == Pooling::Pooled ? "POOLED" : "PER_FRAME"},
            {"attribution_iou", c.eval.attribution_iou}}}};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig load_experiment(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<NamedSequence> build_suite(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<NamedSequence> out;
  for (const auto& spec : cfg.sequences) out.push_back({spec.name, sim::generate_sequence(cfg.scenario_for(spec))});

  const std::size_t n_original = out.size();
  for (const auto& [split, count] : cfg.overlays.count) {
    // Sources are grouped by scenario since overlays never mix scenarios.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n_original; ++i) {
      if (out[i].sequence.split == split) groups[out[i].sequence.scenario_id].push_back(i);
    }
    if (count > 0 && groups.empty()) fail("overlays.count." + std::string(to_string(split)), "split has no sequences");
    std::vector<std::vector<std::size_t>> pools;
    for (auto& [id, idx] : groups) pools.push_back(idx);

    for (int k = 0; k < count; ++k) {
      auto rng = sim::frame_rng(cfg.seed ^ fnv1a(to_string(split)), k);
      const auto& pool = pools[static_cast<std::size_t>(k) % pools.size()];
      std::optional<Sequence> made;
      std::string last_error;
      for (int attempt = 0; attempt < 20 && !made; ++attempt) {
        const int n = std::uniform_int_distribution<int>(cfg.overlays.min_sources, cfg.overlays.max_sources)(rng);
        std::vector<const Sequence*> src;
        for (int s = 0; s < n; ++s) {
          src.push_back(&out[pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]].sequence);
        }
        try {
          made = sim::overlay_random(src, cfg.overlays.options, rng);
        } catch (const sim::OverlayError& e) {
          last_error = e.what();
        }
      }
      if (!made) throw sim::OverlayError("overlay " + std::to_string(k) + " failed: " + last_error);
      out.push_back({lower(to_string(split)) + "-overlay-" + std::to_string(k), std::move(*made)});
    }
  }
  return out;
}

void write_dataset(const std::vector<NamedSequence>& data, const fs::path& dir) {
  fs::create_directories(dir);
  json index{{"format", "ghostlab-dataset"}, {"version", kDatasetFormatVersion}, {"sequences", json::array()}};
  for (const auto& s : data) {
    const std::string file = s.name + ".jsonl";
    write_sequence(s.sequence, dir / file);
    index["sequences"].push_back({{"name", s.name},
                                  {"file", file},
                                  {"split", to_string(s.sequence.split)},
                                  {"synthesized", s.sequence.synthesized}});
  }
  std::ofstream(dir / "index.json") << index.dump(2) << "\n";
}

std::vector<NamedSequence> read_dataset(const fs::path& path) {
  if (!fs::is_directory(path)) return {{path.stem().string(), read_sequence(path)}};
  const json index = json::parse(read_file(path / "index.json"));
  if (index.value("format", "") != "ghostlab-dataset") throw FormatError("index.json: not a ghostlab dataset");
  std::vector<NamedSequence> out;
  for (const auto& e : index.at("sequences")) {
    out.push_back({e.at("name").get<std::string>(), read_sequence(path / e.at("file").get<std::string>())});
  }
  return out;
}

std::vector<const NamedSequence*> select_split(const std::vector<NamedSequence>& data, Split split) {
  std::vector<const NamedSequence*> out;
  for (const auto& s : data) {
    if (s.sequence.split == split) out.push_back(&s);
  }
  return out;
}

std::vector<std::size_t> window_frames(const Sequence& seq, const prep::PreprocessConfig& cfg, int stride) {
  std::vector<std::size_t> out;
  for (std::size_t f = static_cast<std::size_t>(cfg.n_cycles - 1); f < seq.frames.size();
       f += static_cast<std::size_t>(stride)) {
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training and inference

TrainOutput train_model(const ExperimentConfig& cfg, const std::vector<const NamedSequence*>& train,
                        const nn::ProgressFn& progress) {
  if (train.empty()) throw std::invalid_argument("train_model: no training sequences");
  std::vector<prep::FixedCloud> clouds;
  for (const auto* s : train) {
    for (auto f : window_frames(s->sequence, cfg.preprocess, cfg.frame_stride)) {
      clouds.push_back(prep::make_cloud(s->sequence, f, cfg.preprocess));
    }
  }
  if (clouds.empty()) throw std::invalid_argument("train_model: sequences too short for the accumulation window");

  nn::Model model;
  model.classes = cfg.classes;
  model.preprocess = cfg.preprocess;
  if (cfg.preprocess.standardize) model.stats = prep::compute_feature_stats(clouds);

  std::vector<nn::Sample> samples;
  std::vector<prep::PointTargets> targets;
  samples.reserve(clouds.size());
  for (const auto& c : clouds) {
    samples.push_back(nn::make_sample(c, cfg.classes, cfg.preprocess.standardize ? &model.stats : nullptr, cfg.model.k));
    targets.push_back(samples.back().targets);
  }
  clouds.clear();

  model.loss = cfg.loss;
  model.loss.class_weights = nn::class_weights(targets, cfg.classes);
  nn::ModelShape shape = cfg.model;
  shape.classes = cfg.classes.num_classes();
  auto result = nn::train(nn::ModelParams::random(shape, cfg.train.seed), samples, model.loss, cfg.train, progress);
  model.params = std::move(result.params);
  return {std::move(model), std::move(result.curve)};
}

std::string_view to_string(Method m) { return m == Method::Sgpn ? "SGPN" : "DBSCAN"; }

Method method_from_string(std::string_view s) {
  const auto l = lower(s);
  if (l == "sgpn") return Method::Sgpn;
  if (l == "dbscan") return Method::Dbscan;
  throw std::invalid_argument("unknown method \"" + std::string(s) + "\"");
}

DetectionSet run_detection(const nn::Model& model, const std::vector<const NamedSequence*>& data, Method method,
                           const detect::SgpnParams& sgpn, const detect::DbscanParams& dbscan) {
  DetectionSet d;
  d.method = method;
  d.classes = model.classes;
  d.preprocess = model.preprocess;
  for (const auto* s : data) {
    d.sequences.push_back(s->name);
    for (auto f : window_frames(s->sequence, model.preprocess)) {
      const auto cloud = prep::make_cloud(s->sequence, f, model.preprocess);
      const auto out = model.run(cloud);
      FrameDetections fd{s->name, f, {}};
      fd.detections = method == Method::Sgpn ? detect::sgpn_pipeline(out, cloud, sgpn)
                                             : detect::dbscan_pipeline(nn::softmax(out.logits), cloud, dbscan);
      if (!fd.detections.empty()) d.frames.push_back(std::move(fd));
    }
  }
  return d;
}

void write_detections(const DetectionSet& d, std::ostream& out) {
  const json header{{"format", "ghostlab-detections"},
                    {"version", 1},
                    {"method", to_string(d.method)},
                    {"classes", {{"granularity", to_string(d.classes.granularity)}, {"labels", to_string(d.classes.labelset)}}},
                    {"preprocess",
                     {{"n_cycles", d.preprocess.n_cycles},
                      {"n_points", d.preprocess.n_points},
                      {"standardize", d.preprocess.standardize}}},
                    {"sequences", d.sequences}};
  out << header.dump() << "\n";
  const auto names = d.classes.class_names();
  for (const auto& fd : d.frames) {
    for (const auto& det : fd.detections) {
      const json line{{"sequence", fd.sequence},
                      {"frame", fd.frame},
                      {"points", det.point_indices},
                      {"class", det.cls},
                      {"class_name", names.at(static_cast<std::size_t>(det.cls))},
                      {"score", det.score}};
      out << line.dump() << "\n";
    }
  }
}

DetectionSet read_detections(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("detections: empty input");
  DetectionSet d;
  try {
    const json h = json::parse(line);
    if (h.value("format", "") != "ghostlab-detections") throw FormatError("detections: bad header");
    d.method = method_from_string(h.at("method").get<std::string>());
    d.classes.granularity = granularity_from_string(h.at("classes").at("granularity").get<std::string>());
    d.classes.labelset = labelset_from_string(h.at("classes").at("labels").get<std::string>());
    d.preprocess.n_cycles = h.at("preprocess").at("n_cycles").get<int>();
    d.preprocess.n_points = h.at("preprocess").at("n_points").get<std::size_t>();
    d.preprocess.standardize = h.at("preprocess").at("standardize").get<bool>();
    d.sequences = h.at("sequences").get<std::vector<std::string>>();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      detect::Detection det;
      det.point_indices = j.at("points").get<std::vector<std::size_t>>();
      det.cls = j.at("class").get<int>();
      det.score = j.at("score").get<double>();
      if (det.cls < 1 || det.cls >= d.classes.num_classes()) {
        throw FormatError("detections line " + std::to_string(lineno) + ": class out of range");
      }
      const auto seq = j.at("sequence").get<std::string>();
      const auto frame = j.at("frame").get<std::size_t>();
      if (d.frames.empty() || d.frames.back().sequence != seq || d.frames.back().frame != frame) {
        d.frames.push_back({seq, frame, {}});
      }
      d.frames.back().detections.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("detections: ") + e.what());
  }
  return d;
}

SemanticPredictions semantic_predictions(const nn::Model& model, const std::vector<const NamedSequence*>& data) {
  SemanticPredictions sp;
  for (const auto* s : data) {
    if (s->sequence.synthesized) continue;
    for (auto f : window_frames(s->sequence, model.preprocess)) {
      const auto cloud = prep::make_cloud(s->sequence, f, model.preprocess);
      const auto out = model.run(cloud);
      for (auto i : detect::unique_origins(cloud)) {
        Eigen::Index best = 0;
        out.logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
        sp.predictions.push_back(static_cast<int>(best));
        sp.targets.push_back(map_labels(cloud.points[i].annotation, model.classes));
      }
    }
  }
  return sp;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const DetectionSet& dets, const std::vector<const NamedSequence*>& data, const EvalConfig& cfg,
                    const SemanticPredictions* semantic) {
  const auto names = dets.classes.class_names();
  const int n_cls = dets.classes.num_classes();
  const auto n_fg = static_cast<std::size_t>(n_cls - 1);

  std::map<std::pair<std::string, std::size_t>, const FrameDetections*> by_frame;
  for (const auto& fd : dets.frames) by_frame[{fd.sequence, fd.frame}] = &fd;
  static const std::vector<detect::Detection> kNone;

  struct FrameCase {
    eval::FrameTruth truth;
    const std::vector<detect::Detection>* dets;
  };
  std::vector<FrameCase> cases;
  for (const auto& name : dets.sequences) {
    const auto& seq = find_sequence(data, name).sequence;
    for (auto f : window_frames(seq, dets.preprocess)) {
      const auto cloud = prep::make_cloud(seq, f, dets.preprocess);
      auto it = by_frame.find({name, f});
      cases.push_back({eval::frame_truth(cloud, dets.classes), it == by_frame.end() ? &kNone : &it->second->detections});
    }
  }

  EvalReport r;
  r.method = std::string(to_string(dets.method));
  r.classes = dets.classes;

  auto ap_of = [&](const std::vector<eval::ScoredFlag>& flags, int n_gt) -> std::optional<double> {
    if (n_gt < 1) return std::nullopt;
    return eval::average_precision(flags, n_gt, cfg.interpolation);
  };

  for (double iou : cfg.iou) {
    ApTable table{iou, {}};
    std::vector<std::vector<eval::ScoredFlag>> flags(n_fg);
    std::vector<int> n_gt(n_fg, 0);
    std::vector<double> frame_ap_sum(n_fg, 0.0);
    std::vector<int> frame_ap_count(n_fg, 0);
    for (const auto& fc : cases) {
      const auto m = eval::match_detections(*fc.dets, fc.truth, iou);
      std::vector<std::vector<eval::ScoredFlag>> frame_flags(n_fg);
      std::vector<int> frame_gt(n_fg, 0);
      for (const auto& g : fc.truth.instances) {
        if (!g.difficult) ++frame_gt[static_cast<std::size_t>(g.cls - 1)];
      }
      for (std::size_t d = 0; d < fc.dets->size(); ++d) {
        if (m.flags[d] == eval::MatchFlag::Ignored) continue;
        const auto c = static_cast<std::size_t>((*fc.dets)[d].cls - 1);
        frame_flags[c].push_back({(*fc.dets)[d].score, m.flags[d] == eval::MatchFlag::TP});
      }
      for (std::size_t c = 0; c < n_fg; ++c) {
        n_gt[c] += frame_gt[c];
        flags[c].insert(flags[c].end(), frame_flags[c].begin(), frame_flags[c].end());
        if (cfg.pooling == Pooling::PerFrame && frame_gt[c] > 0) {
          frame_ap_sum[c] += *ap_of(frame_flags[c], frame_gt[c]);
          ++frame_ap_count[c];
        }
      }
    }
    for (std::size_t c = 0; c < n_fg; ++c) {
      ClassAp ca{names[c + 1], n_gt[c], static_cast<int>(flags[c].size()), std::nullopt};
      if (cfg.pooling == Pooling::Pooled) {
        ca.ap = ap_of(flags[c], n_gt[c]);
      } else if (frame_ap_count[c] > 0) {
        ca.ap = frame_ap_sum[c] / frame_ap_count[c];
      }
      table.classes.push_back(std::move(ca));
    }
    r.ap.push_back(std::move(table));
  }

  // FP attribution at the best-F1 operating point of each class.
  {
    std::vector<eval::MatchResult> matches;
    std::vector<std::vector<eval::ScoredFlag>> flags(n_fg);
    std::vector<int> n_gt(n_fg, 0);
    for (const auto& fc : cases) {
      matches.push_back(eval::match_detections(*fc.dets, fc.truth, cfg.attribution_iou));
      for (const auto& g : fc.truth.instances) {
        if (!g.difficult) ++n_gt[static_cast<std::size_t>(g.cls - 1)];
      }
      for (std::size_t d = 0; d < fc.dets->size(); ++d) {
        if (matches.back().flags[d] == eval::MatchFlag::Ignored) continue;
        flags[static_cast<std::size_t>((*fc.dets)[d].cls - 1)].push_back(
            {(*fc.dets)[d].score, matches.back().flags[d] == eval::MatchFlag::TP});
      }
    }
    auto& ar = r.attribution;
    for (std::size_t c = 0; c < n_fg; ++c) {
      const auto curve = eval::pr_curve(flags[c], n_gt[c]);
      ar.thresholds.push_back(curve.points.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : eval::best_f1_threshold(curve));
    }
    std::vector<eval::FalsePositive> fps;
    for (std::size_t k = 0; k < cases.size(); ++k) {
      for (std::size_t d = 0; d < cases[k].dets->size(); ++d) {
        const auto& det = (*cases[k].dets)[d];
        if (matches[k].flags[d] == eval::MatchFlag::FP && det.score >= ar.thresholds[static_cast<std::size_t>(det.cls - 1)]) {
          fps.push_back({&det, &cases[k].truth});
        }
      }
    }
    ar.attribution = eval::fp_attribution(fps, dets.classes);
    ar.empty = fps.empty();
  }

  if (semantic) r.f1 = eval::f1_semantic(semantic->predictions, semantic->targets, n_cls);
  return r;
}

std::optional<double> find_ap(const EvalReport& r, std::string_view class_name, double iou) {
  for (const auto& t : r.ap) {
    if (std::abs(t.iou - iou) > 1e-12) continue;
    for (const auto& c : t.classes) {
      if (c.name == class_name) return c.ap;
    }
  }
  return std::nullopt;
}

json report_to_json(const EvalReport& r) {
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json ap = json::object();
  for (const auto& t : r.ap) {
    json cls = json::object();
    for (const auto& c : t.classes) {
      cls[c.name] = {{"ap", c.ap ? json(*c.ap) : json(nullptr)}, {"n_gt", c.n_gt}, {"n_det", c.n_det}};
    }
    ap[iou_key(t.iou)] = cls;
  }
  json j{{"format", "ghostlab-report"},
         {"version", 1},
         {"method", r.method},
         {"classes", {{"granularity", to_string(r.classes.granularity)}, {"labels", to_string(r.classes.labelset)}}},
         {"ap", ap}};
  if (r.f1) {
    json f1 = json::object();
    const auto names = r.classes.class_names();
    for (std::size_t c = 0; c < r.f1->per_class.size(); ++c) f1[names[c + 1]] = num(r.f1->per_class[c]);
    j["f1"] = {{"per_class", f1}, {"macro", num(r.f1->macro)}};
  }
  const auto& a = r.attribution;
  json counts = json::object(), fractions = json::object();
  for (std::size_t k = 0; k < a.attribution.counts.size(); ++k) {
    const auto cause = static_cast<eval::FpCause>(k);
    counts[std::string(eval::to_string(cause))] = a.attribution.counts[k];
    fractions[std::string(eval::to_string(cause))] = a.attribution.fraction(cause);
  }
  json thresholds = json::array();
  for (double t : a.thresholds) thresholds.push_back(num(t));
  j["fp_attribution"] = {{"empty", a.empty},
                         {"total", a.attribution.total},
                         {"counts", counts},
                         {"fractions", fractions},
                         {"ghost_share", a.attribution.ghost_share()},
                         {"thresholds", thresholds}};
  return j;
}

EvalReport report_from_json(const json& j) {
  if (j.value("format", "") != "ghostlab-report") throw FormatError("report: not a ghostlab report");
  auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.classes.granularity = granularity_from_string(j.at("classes").at("granularity").get<std::string>());
  r.classes.labelset = labelset_from_string(j.at("classes").at("labels").get<std::string>());
  const auto names = r.classes.class_names();
  for (const auto& [key, cls] : j.at("ap").items()) {
    ApTable t{std::stod(key), {}};
    for (std::size_t c = 1; c < names.size(); ++c) {
      const auto& e = cls.at(names[c]);
      ClassAp ca{names[c], e.at("n_gt").get<int>(), e.at("n_det").get<int>(), std::nullopt};
      if (!e.at("ap").is_null()) ca.ap = e.at("ap").get<double>();
      t.classes.push_back(std::move(ca));
    }
    r.ap.push_back(std::move(t));
  }
  std::sort(r.ap.begin(), r.ap.end(), [](const ApTable& a, const ApTable& b) { return a.iou < b.iou; });
  if (j.contains("f1")) {
    eval::F1Report f1;
    for (std::size_t c = 1; c < names.size(); ++c) f1.per_class.push_back(num(j.at("f1").at("per_class").at(names[c])));
    f1.macro = num(j.at("f1").at("macro"));
    r.f1 = f1;
  }
  const auto& a = j.at("fp_attribution");
  r.attribution.empty = a.at("empty").get<bool>();
  r.attribution.attribution.total = a.at("total").get<int>();
  for (std::size_t k = 0; k < r.attribution.attribution.counts.size(); ++k) {
    r.attribution.attribution.counts[k] =
        a.at("counts").at(std::string(eval::to_string(static_cast<eval::FpCause>(k)))).get<int>();
  }
  for (const auto& t : a.at("thresholds")) r.attribution.thresholds.push_back(num(t));
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream o;
  o << r.method << "  " << r.classes.name() << "\n\n";

  o << pad("AP (%)", 12, true);
  for (const auto& t : r.ap) o << pad("IoU " + iou_key(t.iou), 10);
  o << pad("GT", 8) << "\n";
  if (!r.ap.empty()) {
    for (std::size_t c = 0; c < r.ap.front().classes.size(); ++c) {
      o << pad(r.ap.front().classes[c].name, 12, true);
      for (const auto& t : r.ap) o << pad(pct(t.classes[c].ap), 10);
      o << pad(std::to_string(r.ap.front().classes[c].n_gt), 8) << "\n";
    }
    o << pad("average", 12, true);
    for (const auto& t : r.ap) {
      double sum = 0.0;
      int n = 0;
      for (const auto& c : t.classes) {
        if (c.ap) {
          sum += *c.ap;
          ++n;
        }
      }
      o << pad(pct(n ? std::optional<double>(sum / n) : std::nullopt), 10);
    }
    o << "\n";
  }

  if (r.f1) {
    const auto names = r.classes.class_names();
    o << "\n" << pad("F1 (%)", 12, true);
    for (std::size_t c = 1; c < names.size(); ++c) o << pad(names[c], 12);
    o << pad("average", 10) << "\n" << pad("", 12, true);
    for (double v : r.f1->per_class) o << pad(pct(v), 12);
    o << pad(pct(r.f1->macro), 10) << "\n";
  }

  const auto& a = r.attribution;
  o << "\n" << pad("FP cause (%)", 14, true);
  for (std::size_t k = 0; k < a.attribution.counts.size(); ++k) o << pad(std::string(eval::to_string(static_cast<eval::FpCause>(k))), 11);
  o << pad("FPs", 7) << "\n" << pad("", 14, true);
  if (a.empty) {
    o << "no false positives above the best-F1 threshold\n";
  } else {
    for (std::size_t k = 0; k < a.attribution.counts.size(); ++k) o << pad(pct(a.attribution.fraction(static_cast<eval::FpCause>(k))), 11);
    o << pad(std::to_string(a.attribution.total), 7) << "\n";
  }
  return o.str();
}

std::string format_summary(const std::vector<EvalReport>& reports) {
  std::set<double> ious;
  for (const auto& r : reports) {
    for (const auto& t : r.ap) ious.insert(t.iou);
  }
  std::ostringstream o;
  for (double iou : ious) {
    o << "IoU " << iou_key(iou) << "\n";
    o << pad("method", 8, true) << pad("classes", 24, true) << "AP per class (%)\n";
    for (const auto& r : reports) {
      o << pad(r.method, 8, true) << pad(r.classes.name(), 24, true);
      double sum = 0.0;
      int n = 0;
      for (const auto& t : r.ap) {
        if (t.iou != iou) continue;
        for (const auto& c : t.classes) {
          o << c.name << " " << pct(c.ap) << "  ";
          if (c.ap) {
            sum += *c.ap;
            ++n;
          }
        }
      }
      o << "mean " << pct(n ? std::optional<double>(sum / n) : std::nullopt) << "\n";
    }
    o << "\n";
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_svg(const Sequence& seq, std::size_t frame, const std::vector<detect::Detection>* dets,
                       const prep::PreprocessConfig& pcfg, const ClassConfig& classes) {
  if (frame >= seq.frames.size()) throw std::out_of_range("render_svg: frame out of range");
  constexpr double kScale = 12.0;  // px per metre
  const double span = 40.0;
  const double w = 2 * span * kScale, h = span * kScale + 40;
  auto px = [&](double x) { return (x + span) * kScale; };
  auto py = [&](double y) { return h - 20 - (y + 0.0) * kScale; };
  // Sensor looks along +x in the data; the drawing puts +x upwards.
  auto sx = [&](const Vec2& p) { return px(-p.y()); };
  auto sy = [&](const Vec2& p) { return py(p.x()); };

  auto colour = [](Label l) -> std::string_view {
    switch (l) {
      case Label::Real: return "#1f77b4";
      case Label::MP12: return "#d62728";
      case Label::MP22: return "#ff7f0e";
      case Label::MP23: return "#9467bd";
      case Label::OMP: return "#8c564b";
      case Label::Indistinguishable: return "#e377c2";
      case Label::Ignore: return "#bcbd22";
      default: return "#c7c7c7";
    }
  };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"8\" y=\"14\">" << seq.scenario_id << " frame " << frame << " (cycle " << seq.frames[frame].cycle_index
    << ")</text>\n";
  for (const auto& wall : seq.walls) {
    o << "<line x1=\"" << sx(wall.a) << "\" y1=\"" << sy(wall.a) << "\" x2=\"" << sx(wall.b) << "\" y2=\"" << sy(wall.b)
      << "\" stroke=\"black\" stroke-width=\"3\"/>\n";
  }
  o << "<circle cx=\"" << sx(Vec2(0, 0)) << "\" cy=\"" << sy(Vec2(0, 0)) << "\" r=\"5\" fill=\"black\"/>\n";

  const std::size_t first = frame + 1 >= static_cast<std::size_t>(pcfg.n_cycles) ? frame + 1 - pcfg.n_cycles : 0;
  const auto acc = prep::accumulate(std::span(seq.frames).subspan(first, frame + 1 - first), seq.sensor.cycle_time);
  for (const auto& ap : acc) {
    const Vec2 p(ap.point.x, ap.point.y);
    const double opacity = 1.0 - 0.25 * ap.age;
    o << "<circle cx=\"" << sx(p) << "\" cy=\"" << sy(p) << "\" r=\"2\" fill=\"" << colour(ap.point.annotation.label)
      << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  // Predicted ghost positions for each real object, from the centroid of its newest points.
  std::map<int, std::pair<Vec2, int>> centroids;
  for (const auto& pt : seq.frames[frame].points) {
    if (pt.annotation.label != Label::Real) continue;
    auto& [sum, n] = centroids[pt.annotation.instance_id];
    if (n == 0) sum = Vec2::Zero();
    sum += Vec2(pt.x, pt.y);
    ++n;
  }
  for (const auto& [id, c] : centroids) {
    const Vec2 obj = c.first / c.second;
    for (const auto& wall : seq.walls) {
      try {
        for (const auto& g : geometry::ghost_detections(Vec2(0, 0), {obj, Vec2::Zero()}, wall)) {
          if (!g.valid) continue;
          const double x = sx(g.pos), y = sy(g.pos);
          o << "<path d=\"M" << x - 5 << " " << y - 5 << " L" << x + 5 << " " << y + 5 << " M" << x - 5 << " " << y + 5
            << " L" << x + 5 << " " << y - 5 << "\" stroke=\"" << colour(g.kind) << "\" stroke-width=\"1.5\"/>\n";
        }
      } catch (const std::exception&) {
        // object on the far side of the wall; no specular path
      }
    }
  }

  if (dets) {
    const auto names = classes.class_names();
    for (const auto& d : *dets) {
      Vec2 sum = Vec2::Zero();
      double rad = 0.0;
      for (auto i : d.point_indices) sum += Vec2(acc[i].point.x, acc[i].point.y);
      const Vec2 c = sum / static_cast<double>(d.point_indices.size());
      for (auto i : d.point_indices) rad = std::max(rad, (Vec2(acc[i].point.x, acc[i].point.y) - c).norm());
      o << "<circle cx=\"" << sx(c) << "\" cy=\"" << sy(c) << "\" r=\"" << (rad + 0.3) * kScale
        << "\" fill=\"none\" stroke=\"green\" stroke-width=\"1.5\"/>\n";
      o << "<text x=\"" << sx(c) + (rad + 0.4) * kScale << "\" y=\"" << sy(c) << "\" fill=\"green\">"
        << names.at(static_cast<std::size_t>(d.cls)) << " " << std::setprecision(2) << d.score << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace ghostlab::exp
