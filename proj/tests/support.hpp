#pragma once

#include "mmi/config.hpp"
#include "mmi/nn/param.hpp"
#include "mmi/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

namespace mmi::support {

/// Central-difference check of accumulated gradients against a scalar loss.
/// `loss` must not touch gradients; `backward` must accumulate them.
inline double max_grad_error(const nn::ParamList<Real>& params, const std::function<Real()>& loss,
                             const std::function<void()>& backward, double h = 1e-5, int max_coords = 60) {
  nn::zero_grads(params);
  backward();
  double worst = 0;
  for (auto* p : params) {
    const Index n = p->value.size();
    const Index stride = std::max<Index>(1, n / max_coords);
    for (Index i = 0; i < n; i += stride) {
      Real& v = p->value.data()[i];
      const Real keep = v;
      v = keep + h;
      const Real up = loss();
      v = keep - h;
      const Real down = loss();
      v = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmi_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small and fast settings for pipeline tests.
inline nlohmann::json tiny_config(const std::string& kind) {
  auto cfg = config::defaults();
  cfg["data"]["synthetic"] = kind;
  cfg["data"]["synthetic_users"] = 40;
  cfg["data"]["synthetic_items"] = 20;
  cfg["data"]["synthetic_reviews_per_user"] = 8;
  cfg["encoder"]["epochs"] = 1;
  cfg["encoder"]["embed_dim"] = 16;
  cfg["encoder"]["sentence_dim"] = 16;
  cfg["backbone"]["epochs"] = 1;
  cfg["backbone"]["hidden"] = 16;
  cfg["backbone"]["word_dim"] = 8;
  cfg["backbone"]["attr_dim"] = 4;
  cfg["backbone"]["max_len"] = 10;
  cfg["mine"]["steps"] = 60;
  cfg["mine"]["min_steps"] = 60;
  cfg["mine"]["hidden"] = 16;
  cfg["mine"]["batch"] = 64;
  cfg["finetune"]["epochs"] = 2;
  cfg["finetune"]["batch"] = 16;
  cfg["finetune"]["samples_per_epoch"] = 32;
  cfg["finetune"]["refresh_steps"] = 10;
  cfg["finetune"]["valid_mine_steps"] = 20;
  cfg["evaluate"]["mine"]["steps"] = 40;
  cfg["evaluate"]["mine"]["min_steps"] = 40;
  if (kind == "feature") cfg["finetune"]["task"] = "feature";
  return cfg;
}

/// Prepares a workspace and pretrains everything the fine-tuner needs.
inline pipeline::Workspace tiny_workspace(const std::string& name, const nlohmann::json& cfg, bool multitask = false) {
  pipeline::Workspace ws{temp_dir(name), false, {}};
  pipeline::prepare(cfg, ws);
  pipeline::pretrain_encoder(cfg, ws);
  pipeline::pretrain_backbone(cfg, ws, multitask ? backbone::Arch::multitask : backbone::Arch::posthoc);
  if (cfg["finetune"]["task"] != "feature") pipeline::pretrain_mine(cfg, ws, mine::Target::rating);
  if (cfg["finetune"]["task"] != "rating") pipeline::pretrain_mine(cfg, ws, mine::Target::feature);
  return ws;
}

}  // namespace mmi::support
