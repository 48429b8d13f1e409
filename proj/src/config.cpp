#include "mmi/config.hpp"

#include "mmi/core/types.hpp"

#include <fstream>
#include <sstream>

namespace mmi::config {

using nlohmann::json;

json defaults() {
  return json::parse(R"({
    "seed": 1,
    "data": {
      "raw": "",
      "synthetic": "",
      "synthetic_users": 260,
      "synthetic_items": 120,
      "synthetic_reviews_per_user": 22,
      "synthetic_noise": null,
      "min_reviews": 5,
      "features": 10,
      "lexicon": [],
      "N": 5.0,
      "min_freq": 1
    },
    "encoder": {"embed_dim": 64, "sentence_dim": 64, "epochs": 6, "batch": 32, "lr": 0.002, "clip_norm": 5.0},
    "backbone": {
      "arch": "posthoc", "use_rating": true, "use_feature": null, "attr_dim": 16, "word_dim": 32, "hidden": 64,
      "rating_hidden": 32, "max_len": 20, "epochs": 8, "batch": 32, "lr": 0.003, "clip_norm": 5.0
    },
    "mine": {
      "hidden": 128, "activation": "elu", "steps": 3000, "min_steps": 1000, "batch": 256, "lr": 0.001,
      "ema_decay": 0.99, "window": 50, "rel_tol": 0.001, "eval_shuffles": 10
    },
    "finetune": {
      "task": "rating", "backbone": "posthoc", "name": "finetune", "epochs": 8, "batch": 64,
      "samples_per_epoch": 1024, "lr": 0.001, "clip_norm": 5.0, "baseline": "batch-mean", "weighting": "auto",
      "alpha": 0.5, "beta": 0.01, "tau": 2.0, "use_kl": true, "use_entropy": true, "kl_direction": "q||p",
      "lambda": 0.5, "epsilon": 0.2, "refresh_every": 1, "refresh_steps": 200, "refresh_batch": 128,
      "refresh_generated_share": 0.5, "valid_mine_steps": 300
    },
    "evaluate": {
      "split": "test",
      "checkpoint": "",
      "name": "",
      "mine": {"steps": 3000, "min_steps": 1000}
    },
    "ablate": {"arms": null}
  })");
}

json load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  json user;
  try {
    in >> user;
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  json cfg = defaults();
  cfg.merge_patch(user);
  return cfg;
}

namespace {

json::json_pointer pointer_of(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw UsageError("malformed config key '" + dotted + "'");
    p += "/" + part;
  }
  return json::json_pointer(p);
}

}  // namespace

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const auto ptr = pointer_of(key);
  if (!cfg.contains(ptr)) throw UsageError("unknown config key '" + key + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  cfg[ptr] = value;
}

const json& at(const json& cfg, const std::string& dotted) {
  const auto ptr = pointer_of(dotted);
  if (!cfg.contains(ptr)) throw UsageError("config key '" + dotted + "' is missing");
  return cfg.at(ptr);
}

}  // namespace mmi::config
