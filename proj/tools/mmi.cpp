// mmi: command-line driver for the explanation fine-tuning pipeline.

#include "mmi/config.hpp"
#include "mmi/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmi;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool force = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "workspace directory")->capture_default_str();
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set finetune.epochs=4");
}

json resolve(const Common& c) {
  json cfg = c.config_path.empty() ? config::defaults() : config::load(c.config_path);
  for (const auto& o : c.overrides) config::apply_override(cfg, o);
  if (c.seed) cfg["seed"] = *c.seed;
  return cfg;
}

pipeline::Workspace workspace(const Common& c) {
  return {fs::path(c.out), c.force, [](const std::string& m) { std::cerr << m << '\n'; }};
}

void print_report(const metrics::EvaluationReport& r) {
  std::cout << metrics::EvaluationReport::csv_header() << '\n' << r.csv_row() << '\n';
  if (r.rmse) std::cout << "RMSE " << *r.rmse << "  MAE " << *r.mae << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explanation generator fine-tuning with mutual-information rewards"};
  app.require_subcommand(1);
  Common common;

  auto* prep = app.add_subcommand("prepare", "build corpus splits, vocabulary and feature profiles");
  add_common(prep, common);
  std::string synth, raw;
  prep->add_option("--synthetic", synth, "generate a synthetic corpus (rating, feature, sentiment)");
  prep->add_option("--raw", raw, "raw JSONL corpus");

  auto* pre = app.add_subcommand("pretrain", "train one component");
  add_common(pre, common);
  std::string target;
  pre->add_option("--target", target, "encoder, posthoc, multitask, mine-rating or mine-feature")
      ->required()
      ->check(CLI::IsMember({"encoder", "posthoc", "multitask", "mine-rating", "mine-feature"}));

  auto* ft = app.add_subcommand("finetune", "fine-tune a pretrained backbone");
  add_common(ft, common);
  std::string task, name;
  ft->add_option("--task", task, "rating, feature or both");
  ft->add_option("--name", name, "run directory name inside the workspace");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(ev, common);
  std::string checkpoint, split;
  ev->add_option("--checkpoint", checkpoint, "backbone checkpoint (default: <finetune.name>/final.json)");
  ev->add_option("--split", split, "valid or test");
  ev->add_option("--name", name, "report directory name");

  auto* ab = app.add_subcommand("ablate", "reward ablation suite");
  add_common(ab, common);
  ab->add_option("--task", task, "rating or feature");

  auto* pl = app.add_subcommand("plot", "reward curves of fine-tuning runs");
  add_common(pl, common);
  std::vector<std::string> runs;
  pl->add_option("runs", runs, "run directories containing reward_log.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    json cfg = resolve(common);
    const auto ws = workspace(common);
    if (!task.empty()) cfg["finetune"]["task"] = task;

    if (prep->parsed()) {
      if (!synth.empty()) cfg["data"]["synthetic"] = synth;
      if (!raw.empty()) cfg["data"]["raw"] = raw;
      const auto s = pipeline::prepare(cfg, ws);
      std::cout << "loaded " << s.loaded << " (clamped " << s.clamped << ", bad lines " << s.line_errors << ")\n"
                << "dropped " << s.dropped_min_reviews << " by min-review filter, " << s.dropped_first_person
                << " first-person\n"
                << "synthesized features " << s.synthesized_features << "\n"
                << "train/valid/test " << s.train << '/' << s.valid << '/' << s.test << ", vocab " << s.vocab
                << "\nmanifest " << s.manifest_id << '\n';
    } else if (pre->parsed()) {
      if (target == "encoder") {
        const auto r = pipeline::pretrain_encoder(cfg, ws);
        std::cout << "held-out accuracy " << r.heldout_accuracy << '\n';
      } else if (target == "posthoc" || target == "multitask") {
        const auto r = pipeline::pretrain_backbone(cfg, ws, backbone::arch_from_string(target));
        for (const auto& row : r.curve)
          std::cout << "epoch " << row.epoch << " train " << row.train_nll << " valid " << row.valid_nll << '\n';
      } else {
        const auto t = mine::target_from_string(target.substr(5));
        const auto r = pipeline::pretrain_mine(cfg, ws, t);
        std::cout << "estimate " << r.estimate << " nats";
        if (t == mine::Target::rating) std::cout << ", NMI " << r.nmi;
        std::cout << '\n';
      }
    } else if (ft->parsed()) {
      const std::string run = name.empty() ? cfg["finetune"]["name"].get<std::string>() : name;
      const auto r = pipeline::run_finetune(cfg, ws, run);
      std::cout << "wrote " << (r.dir / "final.json").string() << " (best epoch " << r.result.best_epoch
                << "), manifest " << r.manifest_id << '\n';
    } else if (ev->parsed()) {
      if (!split.empty()) cfg["evaluate"]["split"] = split;
      if (checkpoint.empty()) checkpoint = cfg["evaluate"]["checkpoint"].get<std::string>();
      fs::path ckpt = checkpoint.empty() ? ws.dir / cfg["finetune"]["name"].get<std::string>() / "final.json"
                                         : fs::path(checkpoint);
      const auto sp = corpus::split_from_string(cfg["evaluate"]["split"].get<std::string>());
      std::string out_name = name.empty() ? cfg["evaluate"]["name"].get<std::string>() : name;
      if (out_name.empty())
        out_name = "eval_" + ckpt.parent_path().filename().string() + "_" + ckpt.stem().string() + "_" +
                   corpus::to_string(sp);
      const auto r = pipeline::run_evaluate(cfg, ws, ckpt, sp, out_name);
      print_report(r.report);
      std::cout << "manifest " << r.manifest_id << '\n';
    } else if (ab->parsed()) {
      const auto arms = pipeline::run_ablate(cfg, ws);
      std::cout << "arm,B-1,alignment\n";
      for (const auto& a : arms)
        std::cout << a.name << ',' << a.eval.report.bleu1 << ','
                  << (cfg["finetune"]["task"] == "feature" ? a.eval.report.fmr : a.eval.report.nmi) << '\n';
    } else if (pl->parsed()) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      for (const auto& p : pipeline::run_plot(dirs, ws.dir / "plots", common.force)) std::cout << p.string() << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
