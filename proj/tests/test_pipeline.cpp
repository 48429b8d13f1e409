#include "mmi/core/hash.hpp"
#include "mmi/pipeline.hpp"

#include "support.hpp"

#include <fstream>
#include <sstream>

using namespace mmi;
using namespace mmi::pipeline;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, OverridesParseJsonAndRejectUnknownKeys) {
  auto cfg = config::defaults();
  config::apply_override(cfg, "finetune.lr=0.01");
  EXPECT_EQ(config::at(cfg, "finetune.lr"), 0.01);
  config::apply_override(cfg, "finetune.task=feature");
  EXPECT_EQ(config::at(cfg, "finetune.task"), "feature");
  EXPECT_THROW(config::apply_override(cfg, "finetune.nonsense=1"), UsageError);
  EXPECT_THROW(config::apply_override(cfg, "no_equals_sign"), UsageError);
  EXPECT_THROW(config::at(cfg, "missing.key"), UsageError);
}

TEST(Prepare, DeterministicAndRefusesToOverwrite) {
  const auto cfg = support::tiny_config("sentiment");
  Workspace a{support::temp_dir("prep_a"), false, {}}, b{support::temp_dir("prep_b"), false, {}};
  const auto sa = prepare(cfg, a);
  const auto sb = prepare(cfg, b);
  EXPECT_EQ(sa.manifest_id, sb.manifest_id);
  EXPECT_GT(sa.train, sa.valid);
  for (const char* f : {"corpus.jsonl.train", "corpus.jsonl.valid", "corpus.jsonl.test", "vocab.json", "profiles.json"})
    EXPECT_EQ(slurp(a.file(f)), slurp(b.file(f))) << f;
  EXPECT_THROW(prepare(cfg, a), UsageError);
  a.force = true;
  EXPECT_NO_THROW(prepare(cfg, a));
  auto other = cfg;
  other["seed"] = 99;
  Workspace c{support::temp_dir("prep_c"), false, {}};
  prepare(other, c);
  EXPECT_NE(slurp(a.file("corpus.jsonl.valid")), slurp(c.file("corpus.jsonl.valid")));
}

TEST(Prepare, MissingDependenciesNameTheCommand) {
  const auto cfg = support::tiny_config("sentiment");
  Workspace ws{support::temp_dir("missing"), false, {}};
  EXPECT_THROW(pretrain_encoder(cfg, ws), DataError);
  prepare(cfg, ws);
  try {
    pretrain_mine(cfg, ws, mine::Target::rating);
    FAIL() << "expected a missing encoder";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("mmi pretrain"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, FinetuneEvaluatePlot) {
  const auto cfg = support::tiny_config("sentiment");
  const auto ws = support::tiny_workspace("flow", cfg);
  const auto run = run_finetune(cfg, ws, "run1");
  for (const char* f : {"final.json", "best.json", "training_log.csv", "reward_log.csv", "timing.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(run.dir / f)) << f;
  const auto man = read_json(run.dir / "manifest.json", "manifest");
  EXPECT_EQ(man["id"], run.manifest_id);
  EXPECT_FALSE(man["parents"].empty());

  const auto ev = run_evaluate(cfg, ws, run.dir / "final.json", corpus::Split::valid, "eval_valid");
  EXPECT_EQ(ev.report.n_samples, load_prepared(ws).valid.size());
  EXPECT_TRUE(fs::exists(ev.dir / "generations.jsonl"));
  EXPECT_GE(ev.report.nmi, 0.0);
  EXPECT_LE(ev.report.nmi, 1.0);
  EXPECT_THROW(run_evaluate(cfg, ws, run.dir / "final.json", corpus::Split::valid, "eval_valid"), UsageError);

  auto second = cfg;
  second["finetune"]["lr"] = 5e-3;
  const auto run2 = run_finetune(second, ws, "run2");
  const auto plots = run_plot({run.dir, run2.dir}, ws.dir / "plots", false);
  EXPECT_EQ(plots.size(), 9u);
  std::size_t tagged = 0;
  for (const auto& p : plots) {
    EXPECT_TRUE(fs::exists(p));
    tagged += p.filename().string().starts_with(run.manifest_id);
  }
  EXPECT_EQ(tagged, 5u);
  EXPECT_TRUE(fs::exists(ws.dir / "plots" / (run.manifest_id + "_vs_" + run2.manifest_id + "_entropy_overlay.svg")));
  EXPECT_THROW(run_plot({run.dir}, ws.dir / "plots", false), UsageError);
}

TEST(Plot, MissingLogIsADataError) {
  const auto dir = support::temp_dir("plot_missing");
  EXPECT_THROW(run_plot({dir}, dir / "plots", false), DataError);
  EXPECT_THROW(run_plot({}, dir / "plots", false), UsageError);
}

TEST(Ablate, ArmsDependOnTheTask) {
  auto cfg = config::defaults();
  EXPECT_EQ(ablation_arms(cfg), (std::vector<std::string>{"mi", "mi_kl", "full"}));
  cfg["finetune"]["task"] = "feature";
  EXPECT_EQ(ablation_arms(cfg).size(), 4u);
  EXPECT_EQ(arm_overrides("mi")["use_kl"], false);
  EXPECT_EQ(arm_overrides("full_no_dwa")["weighting"], "static");
  EXPECT_THROW(arm_overrides("bogus"), UsageError);
}

TEST(ComponentSeed, DependsOnNameAndMasterSeed) {
  auto cfg = config::defaults();
  const auto a = component_seed(cfg, "encoder");
  EXPECT_NE(a, component_seed(cfg, "finetune"));
  cfg["seed"] = 2;
  EXPECT_NE(a, component_seed(cfg, "encoder"));
}
