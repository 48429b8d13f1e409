#pragma once

// End-to-end commands over a workspace directory. The CLI is a thin shell
// around these; the acceptance suite calls them directly.

#include "mmi/backbone.hpp"
#include "mmi/corpus.hpp"
#include "mmi/encoder.hpp"
#include "mmi/finetune.hpp"
#include "mmi/metrics.hpp"
#include "mmi/mine.hpp"

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace mmi::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

using Logger = std::function<void(const std::string&)>;

struct Workspace {
  fs::path dir;
  bool force = false;
  Logger log;  // may be empty

  fs::path file(const std::string& name) const { return dir / name; }
  void info(const std::string& msg) const {
    if (log) log(msg);
  }
};

/// Throws UsageError when the path exists and force is off.
void ensure_writable(const fs::path& path, bool force);

/// Seed of a named component derived from the master seed.
std::uint64_t component_seed(const nlohmann::json& cfg, const std::string& component);

// --- manifests ---------------------------------------------------------------

/// Writes a manifest naming inputs, outputs (with content hashes) and parent
/// manifests; returns its id, a hash of everything except the timestamps.
std::string write_manifest(const fs::path& path, const std::string& command, const nlohmann::json& resolved,
                           const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                           const std::vector<fs::path>& parent_manifests, const std::string& started);
std::string manifest_id(const fs::path& manifest_path);
std::string now_string();

// --- prepare -----------------------------------------------------------------

struct PrepareSummary {
  std::size_t loaded = 0, clamped = 0, line_errors = 0;
  std::size_t dropped_min_reviews = 0, dropped_first_person = 0;
  std::size_t synthesized_features = 0;
  bool feature_shortfall = false;
  std::size_t train = 0, valid = 0, test = 0, vocab = 0;
  std::string manifest_id;
};

PrepareSummary prepare(const nlohmann::json& cfg, const Workspace& ws);

struct Prepared {
  std::vector<corpus::ReviewRecord> train, valid, test;
  corpus::Vocabulary vocab;
  corpus::FeatureProfile profile;

  const std::vector<corpus::ReviewRecord>& split(corpus::Split s) const;
};

Prepared load_prepared(const Workspace& ws);

/// Model examples for a split. Training contexts condition on the review's
/// annotated feature; evaluation contexts on the assigned one.
std::vector<backbone::Example> make_examples(const std::vector<corpus::ReviewRecord>& records, const Prepared& data,
                                             const backbone::IdMap& users, const backbone::IdMap& items,
                                             Index max_len, bool assigned_context);

// --- pretraining -------------------------------------------------------------

encoder::EncoderReport pretrain_encoder(const nlohmann::json& cfg, const Workspace& ws);

backbone::PretrainResult pretrain_backbone(const nlohmann::json& cfg, const Workspace& ws, backbone::Arch arch);

struct MineSummary {
  mine::MIEstimator estimator;
  mine::TrainingCurve curve;
  double estimate = 0;  // nats on the training pairs
  double nmi = 0;       // rating estimators only
};

MineSummary pretrain_mine(const nlohmann::json& cfg, const Workspace& ws, mine::Target target);

struct LoadedEncoder {
  encoder::SentenceEncoder encoder;
  encoder::FeatureTable features;
};
LoadedEncoder load_encoder(const Workspace& ws, const Prepared& data);

nlohmann::json read_json(const fs::path& path, const std::string& what);
void write_text(const fs::path& path, const std::string& text);

// --- fine-tuning and evaluation ---------------------------------------------

struct FinetuneRun {
  finetune::FinetuneResult result;
  fs::path dir;
  std::string manifest_id;
};

/// Fine-tunes into ws.dir / run_name.
FinetuneRun run_finetune(const nlohmann::json& cfg, const Workspace& ws, const std::string& run_name);

struct EvaluateRun {
  metrics::EvaluationReport report;
  fs::path dir;
  std::string manifest_id;
};

/// Evaluates a backbone checkpoint on a split into ws.dir / name.
EvaluateRun run_evaluate(const nlohmann::json& cfg, const Workspace& ws, const fs::path& checkpoint,
                         corpus::Split split, const std::string& name);

struct AblationArm {
  std::string name;
  FinetuneRun run;
  EvaluateRun eval;
};

/// Arms for the configured task: mi, mi_kl, full, plus full_no_dwa for
/// feature tasks.
std::vector<std::string> ablation_arms(const nlohmann::json& cfg);
nlohmann::json arm_overrides(const std::string& arm);
std::vector<AblationArm> run_ablate(const nlohmann::json& cfg, const Workspace& ws);

/// Per-channel plots for each run directory plus an overlay across runs.
std::vector<fs::path> run_plot(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool force);

}  // namespace mmi::pipeline
