#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ghostlab/core.hpp"
#include "ghostlab/detect.hpp"
#include "ghostlab/eval.hpp"
#include "ghostlab/nnet.hpp"
#include "ghostlab/preprocess.hpp"
#include "ghostlab/simulate.hpp"

namespace ghostlab::exp {

using nlohmann::json;

inline constexpr std::string_view kVersion = "0.1.0";

/// Config validation failure; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SequenceSpec {
  std::string name;
  std::string scenario;  // key into ExperimentConfig::scenarios
  Split split = Split::Train;
  std::uint64_t seed = 1;
  json overrides = json::object();  // merged over the base scenario
};

struct OverlaySpec {
  std::map<Split, int> count;  // overlays to synthesize per split
  int min_sources = 2;
  int max_sources = 3;
  sim::OverlayOptions options;
};

enum class Pooling { Pooled, PerFrame };

struct EvalConfig {
  std::vector<double> iou{0.3, 0.5};
  eval::Interpolation interpolation = eval::Interpolation::AllPoint;
  Pooling pooling = Pooling::Pooled;
  double attribution_iou = 0.3;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::map<std::string, json> scenarios;  // base scenario documents by id
  std::vector<SequenceSpec> sequences;
  OverlaySpec overlays;

  ClassConfig classes;
  prep::PreprocessConfig preprocess;
  nn::ModelShape model;  // `classes` is derived from the class config
  nn::LossWeights loss;  // class weights are derived from the training data
  nn::TrainConfig train;
  int frame_stride = 1;  // training uses every n-th accumulation window

  detect::SgpnParams sgpn;
  detect::DbscanParams dbscan;
  EvalConfig eval;

  /// Throws ConfigError naming the field.
  void validate() const;
  sim::Scenario scenario_for(const SequenceSpec& spec) const;
};

ExperimentConfig experiment_from_json(const json& j);
json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Datasets

struct NamedSequence {
  std::string name;
  Sequence sequence;
};

/// Simulates every configured sequence, then the overlays of each split. Deterministic for the config.
std::vector<NamedSequence> build_suite(const ExperimentConfig& cfg);

/// One `<name>.jsonl` per sequence plus `index.json`.
void write_dataset(const std::vector<NamedSequence>& data, const std::filesystem::path& dir);
/// Reads a dataset directory or a single sequence file.
std::vector<NamedSequence> read_dataset(const std::filesystem::path& path);

std::vector<const NamedSequence*> select_split(const std::vector<NamedSequence>& data, Split split);

/// Accumulation windows that have a full history, every `stride`-th one.
std::vector<std::size_t> window_frames(const Sequence& seq, const prep::PreprocessConfig& cfg, int stride = 1);

// ---------------------------------------------------------------------------
// Training and inference

struct TrainOutput {
  nn::Model model;
  std::vector<nn::LossRecord> curve;
};

TrainOutput train_model(const ExperimentConfig& cfg, const std::vector<const NamedSequence*>& train,
                        const nn::ProgressFn& progress = {});

enum class Method { Sgpn, Dbscan };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

struct FrameDetections {
  std::string sequence;
  std::size_t frame = 0;
  std::vector<detect::Detection> detections;
};

struct DetectionSet {
  Method method = Method::Sgpn;
  ClassConfig classes;
  prep::PreprocessConfig preprocess;
  std::vector<std::string> sequences;  // every evaluated sequence, including those without detections
  std::vector<FrameDetections> frames;
};

DetectionSet run_detection(const nn::Model& model, const std::vector<const NamedSequence*>& data, Method method,
                           const detect::SgpnParams& sgpn, const detect::DbscanParams& dbscan);

void write_detections(const DetectionSet& d, std::ostream& out);
DetectionSet read_detections(std::istream& in);

/// Pointwise predictions and targets for the semantic F1 over original (non-synthesized) sequences.
struct SemanticPredictions {
  std::vector<int> predictions;
  std::vector<int> targets;
};

SemanticPredictions semantic_predictions(const nn::Model& model, const std::vector<const NamedSequence*>& data);

// ---------------------------------------------------------------------------
// Evaluation

struct ClassAp {
  std::string name;
  int n_gt = 0;
  int n_det = 0;
  std::optional<double> ap;  // empty without ground truth
};

struct ApTable {
  double iou = 0.0;
  std::vector<ClassAp> classes;  // foreground classes in index order
};

struct AttributionReport {
  bool empty = true;
  eval::Attribution attribution;
  std::vector<double> thresholds;  // best-F1 score threshold per foreground class (NaN if no curve)
};

struct EvalReport {
  std::string method;
  ClassConfig classes;
  std::vector<ApTable> ap;
  std::optional<eval::F1Report> f1;
  AttributionReport attribution;
};

EvalReport evaluate(const DetectionSet& dets, const std::vector<const NamedSequence*>& data, const EvalConfig& cfg,
                    const SemanticPredictions* semantic = nullptr);

/// AP of the class at `iou`, or nullopt when the class or threshold is missing.
std::optional<double> find_ap(const EvalReport& r, std::string_view class_name, double iou);

json report_to_json(const EvalReport& r);
EvalReport report_from_json(const json& j);
/// Aligned text tables: AP per class and IoU, semantic F1, FP attribution percentages.
std::string format_report(const EvalReport& r);
/// One row per report: mean AP at each IoU over classes.
std::string format_summary(const std::vector<EvalReport>& reports);

// ---------------------------------------------------------------------------
// Rendering

/// Bird's-eye view of one frame: points by label, walls, predicted ghost positions from the real-object
/// centroid, and detections as labelled circles.
std::string render_svg(const Sequence& seq, std::size_t frame, const std::vector<detect::Detection>* dets,
                       const prep::PreprocessConfig& pcfg, const ClassConfig& classes);

}  // namespace ghostlab::exp
