#include "mmi/pipeline.hpp"

#include "mmi/config.hpp"
#include "mmi/core/hash.hpp"
#include "mmi/core/random.hpp"
#include "mmi/plot.hpp"
#include "mmi/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace mmi::pipeline {

using nlohmann::json;

namespace {

constexpr const char* kTrain = "corpus.jsonl.train";
constexpr const char* kValid = "corpus.jsonl.valid";
constexpr const char* kTest = "corpus.jsonl.test";
constexpr const char* kVocab = "vocab.json";
constexpr const char* kProfiles = "profiles.json";
constexpr const char* kEncoder = "encoder.json";

std::string backbone_file(backbone::Arch a) { return "backbone_" + backbone::to_string(a) + ".json"; }
std::string mine_file(mine::Target t) { return "mine_" + mine::to_string(t) + ".json"; }
std::string manifest_file(const std::string& what) { return "manifest." + what + ".json"; }

fs::path require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw DataError("missing dependency " + path.string() + " (run `mmi " + producer + "` first)");
  return path;
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

Index feature_index(const std::vector<std::string>& features, const std::optional<std::string>& f) {
  if (!f) return -1;
  auto it = std::find(features.begin(), features.end(), *f);
  return it == features.end() ? -1 : static_cast<Index>(it - features.begin());
}

bool backbone_uses_feature(const json& cfg) {
  const auto& v = config::at(cfg, "backbone.use_feature");
  if (!v.is_null()) return v.get<bool>();
  return config::at(cfg, "finetune.task").get<std::string>() != "rating";
}

backbone::BackboneConfig backbone_config(const json& cfg, backbone::Arch arch) {
  json j = config::at(cfg, "backbone");
  j["arch"] = backbone::to_string(arch);
  j["use_feature"] = backbone_uses_feature(cfg);
  auto bc = backbone::BackboneConfig::from_json(j);
  bc.arch = arch;
  bc.seed = component_seed(cfg, "backbone." + backbone::to_string(arch));
  return bc;
}

mine::MineConfig mine_config(const json& section, std::uint64_t seed) {
  auto mc = mine::MineConfig::from_json(section);
  mc.seed = seed;
  return mc;
}

struct IdMaps {
  backbone::IdMap users, items;
};

IdMaps id_maps(const Prepared& data) {
  std::set<std::string> users, items;
  for (const auto& r : data.train) {
    users.insert(r.user_id);
    items.insert(r.item_id);
  }
  return {backbone::IdMap({users.begin(), users.end()}), backbone::IdMap({items.begin(), items.end()})};
}

Matrix rating_matrix(const std::vector<double>& ratings) {
  Matrix m(5, static_cast<Index>(ratings.size()));
  for (std::size_t i = 0; i < ratings.size(); ++i) m.col(static_cast<Index>(i)) = encoder::rating_onehot(ratings[i]);
  return m;
}

std::vector<fs::path> workspace_manifests(const Workspace& ws, const std::vector<std::string>& names) {
  std::vector<fs::path> out;
  for (const auto& n : names)
    if (fs::exists(ws.file(manifest_file(n)))) out.push_back(ws.file(manifest_file(n)));
  return out;
}

std::string curve_csv(const std::vector<backbone::CurveRow>& rows, bool multitask) {
  std::ostringstream os;
  os << "epoch,train_nll,valid_nll";
  if (multitask) os << ",valid_rmse,valid_mae";
  os << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.train_nll << ',' << r.valid_nll;
    if (multitask) os << ',' << r.valid_rmse << ',' << r.valid_mae;
    os << '\n';
  }
  return os.str();
}

}  // namespace

void ensure_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force)
    throw UsageError("refusing to overwrite " + path.string() + " (pass --force)");
}

std::uint64_t component_seed(const json& cfg, const std::string& component) {
  const auto master = config::at(cfg, "seed").get<std::uint64_t>();
  Fnv1a h;
  h.update(component);
  return derive_seed(master, h.value());
}

std::string now_string() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

json read_json(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + what + " " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(what + " " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string write_manifest(const fs::path& path, const std::string& command, const json& resolved,
                           const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                           const std::vector<fs::path>& parent_manifests, const std::string& started) {
  json m;
  m["kind"] = "run_manifest";
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["seed"] = resolved.value("seed", json());
  m["config"] = resolved;
  m["inputs"] = json::array();
  for (const auto& p : inputs) m["inputs"].push_back({{"path", p.filename().string()}, {"hash", hash_file(p)}});
  m["outputs"] = json::array();
  for (const auto& p : outputs) m["outputs"].push_back({{"path", p.filename().string()}, {"hash", hash_file(p)}});
  m["parents"] = json::array();
  for (const auto& p : parent_manifests) m["parents"].push_back(manifest_id(p));
  m["id"] = hash_string(m.dump()).substr(0, 12);
  m["started"] = started;
  m["finished"] = now_string();
  write_text(path, m.dump(2) + "\n");
  return m["id"].get<std::string>();
}

std::string manifest_id(const fs::path& manifest_path) {
  return read_json(manifest_path, "manifest").at("id").get<std::string>();
}

// --- prepare -----------------------------------------------------------------

PrepareSummary prepare(const json& cfg, const Workspace& ws) {
  const auto started = now_string();
  fs::create_directories(ws.dir);
  for (const char* f : {kTrain, kValid, kTest, kVocab, kProfiles}) ensure_writable(ws.file(f), ws.force);

  PrepareSummary sum;
  fs::path raw = config::at(cfg, "data.raw").get<std::string>();
  const auto synth = config::at(cfg, "data.synthetic").get<std::string>();
  std::vector<fs::path> inputs;
  if (!synth.empty()) {
    synthetic::Config sc;
    sc.kind = synthetic::kind_from_string(synth);
    sc.users = config::at(cfg, "data.synthetic_users").get<std::size_t>();
    sc.items = config::at(cfg, "data.synthetic_items").get<std::size_t>();
    sc.reviews_per_user = config::at(cfg, "data.synthetic_reviews_per_user").get<std::size_t>();
    const auto& noise = config::at(cfg, "data.synthetic_noise");
    sc.noise = noise.is_null() ? synthetic::default_noise(sc.kind) : noise.get<double>();
    sc.seed = component_seed(cfg, "synthetic");
    raw = ws.file("raw.jsonl");
    ensure_writable(raw, ws.force);
    synthetic::write_raw(raw.string(), synthetic::generate(sc));
    ws.info("wrote synthetic " + synth + " corpus to " + raw.string());
  }
  if (raw.empty()) throw UsageError("no input corpus: set data.raw or pass --synthetic");
  inputs.push_back(raw);

  auto loaded = corpus::load_corpus(raw);
  sum.loaded = loaded.records.size();
  sum.clamped = loaded.clamped;
  sum.line_errors = loaded.errors.size();
  for (const auto& e : loaded.errors) ws.info("line " + std::to_string(e.line) + ": " + e.message);

  auto recs = corpus::filter_min_reviews(loaded.records, config::at(cfg, "data.min_reviews").get<std::size_t>());
  sum.dropped_min_reviews = loaded.records.size() - recs.size();
  const auto before_fp = recs.size();
  recs = corpus::filter_first_person(recs);
  sum.dropped_first_person = before_fp - recs.size();
  // Users can fall below the threshold once narratives are gone.
  recs = corpus::filter_min_reviews(recs, config::at(cfg, "data.min_reviews").get<std::size_t>());

  auto lexicon = config::at(cfg, "data.lexicon").get<std::vector<std::string>>();
  if (lexicon.empty() && !synth.empty()) lexicon = synthetic::feature_words();
  sum.synthesized_features = corpus::synthesize_features(recs, lexicon);
  if (sum.synthesized_features) ws.info("synthesized " + std::to_string(sum.synthesized_features) + " feature annotations");

  const auto k = config::at(cfg, "data.features").get<std::size_t>();
  const auto selection = corpus::select_top_features(recs, k);
  sum.feature_shortfall = selection.shortfall;
  if (selection.shortfall)
    ws.info("only " + std::to_string(selection.features.size()) + " distinct features available (wanted " +
            std::to_string(k) + ")");

  auto parts = corpus::split(recs, component_seed(cfg, "split"));
  for (auto& r : parts.train) r.split = corpus::Split::train;
  for (auto& r : parts.valid) r.split = corpus::Split::valid;
  for (auto& r : parts.test) r.split = corpus::Split::test;

  const auto profile = corpus::build_profiles(parts.train, selection.features, config::at(cfg, "data.N").get<double>());
  for (auto* part : {&parts.train, &parts.valid, &parts.test})
    for (auto& r : *part)
      if (!selection.features.empty()) r.assigned_feature = corpus::assign_pair_feature(profile, r.user_id, r.item_id);

  const auto vocab = corpus::build_vocab(parts.train, config::at(cfg, "data.min_freq").get<std::size_t>());

  corpus::write_jsonl(ws.file(kTrain), parts.train);
  corpus::write_jsonl(ws.file(kValid), parts.valid);
  corpus::write_jsonl(ws.file(kTest), parts.test);
  write_text(ws.file(kVocab), vocab.to_json().dump() + "\n");
  write_text(ws.file(kProfiles), profile.to_json().dump() + "\n");

  sum.train = parts.train.size();
  sum.valid = parts.valid.size();
  sum.test = parts.test.size();
  sum.vocab = static_cast<std::size_t>(vocab.size());

  json resolved = cfg;
  resolved["summary"] = {{"loaded", sum.loaded},          {"clamped", sum.clamped},
                         {"line_errors", sum.line_errors}, {"dropped_min_reviews", sum.dropped_min_reviews},
                         {"dropped_first_person", sum.dropped_first_person},
                         {"synthesized_features", sum.synthesized_features},
                         {"train", sum.train},             {"valid", sum.valid},
                         {"test", sum.test},               {"vocab", sum.vocab}};
  std::vector<fs::path> outputs{ws.file(kTrain), ws.file(kValid), ws.file(kTest), ws.file(kVocab), ws.file(kProfiles)};
  sum.manifest_id = write_manifest(ws.file(manifest_file("prepare")), "prepare", resolved, inputs, outputs, {}, started);
  return sum;
}

const std::vector<corpus::ReviewRecord>& Prepared::split(corpus::Split s) const {
  switch (s) {
    case corpus::Split::train: return train;
    case corpus::Split::valid: return valid;
    case corpus::Split::test: return test;
  }
  return train;
}

Prepared load_prepared(const Workspace& ws) {
  Prepared p;
  auto load = [&](const char* name) {
    auto res = corpus::load_corpus(require(ws.file(name), "prepare"));
    if (!res.errors.empty()) throw DataError(std::string(name) + " has malformed lines");
    return std::move(res.records);
  };
  p.train = load(kTrain);
  p.valid = load(kValid);
  p.test = load(kTest);
  p.vocab = corpus::Vocabulary::from_json(read_json(require(ws.file(kVocab), "prepare"), "vocabulary"));
  p.profile = corpus::FeatureProfile::from_json(read_json(require(ws.file(kProfiles), "prepare"), "profiles"));
  return p;
}

std::vector<backbone::Example> make_examples(const std::vector<corpus::ReviewRecord>& records, const Prepared& data,
                                             const backbone::IdMap& users, const backbone::IdMap& items,
                                             Index max_len, bool assigned_context) {
  std::vector<backbone::Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    backbone::Example e;
    e.ctx.user = users.lookup(r.user_id);
    e.ctx.item = items.lookup(r.item_id);
    e.ctx.rating = r.rating;
    e.rating = r.rating;
    e.target = backbone::make_target(data.vocab.encode(r.text), max_len);
    e.annotated_feature = feature_index(data.profile.features, r.feature);
    e.assigned_feature = feature_index(data.profile.features, r.assigned_feature);
    e.ctx.feature = assigned_context ? e.assigned_feature : e.annotated_feature;
    out.push_back(std::move(e));
  }
  return out;
}

// --- pretraining -------------------------------------------------------------

encoder::EncoderReport pretrain_encoder(const json& cfg, const Workspace& ws) {
  const auto started = now_string();
  const auto data = load_prepared(ws);
  ensure_writable(ws.file(kEncoder), ws.force);
  auto ec = encoder::EncoderConfig::from_json(config::at(cfg, "encoder"));
  ec.seed = component_seed(cfg, "encoder");
  auto rep = encoder::train_encoder(data.train, data.valid, data.vocab, ec);
  write_text(ws.file(kEncoder), rep.encoder.to_json().dump() + "\n");
  std::ostringstream csv;
  csv << "epoch,train_loss\n" << std::setprecision(10);
  for (std::size_t i = 0; i < rep.epoch_loss.size(); ++i) csv << i + 1 << ',' << rep.epoch_loss[i] << '\n';
  write_text(ws.file("encoder_curve.csv"), csv.str());
  json resolved = cfg;
  resolved["heldout_accuracy"] = rep.heldout_accuracy;
  write_manifest(ws.file(manifest_file("encoder")), "pretrain encoder", resolved,
                 {ws.file(kTrain), ws.file(kValid), ws.file(kVocab)}, {ws.file(kEncoder), ws.file("encoder_curve.csv")},
                 workspace_manifests(ws, {"prepare"}), started);
  ws.info("encoder held-out accuracy " + fmt(rep.heldout_accuracy, 4));
  return rep;
}

LoadedEncoder load_encoder(const Workspace& ws, const Prepared& data) {
  LoadedEncoder out;
  out.encoder = encoder::SentenceEncoder::from_json(read_json(require(ws.file(kEncoder), "pretrain --target encoder"),
                                                              "encoder checkpoint"),
                                                    data.vocab.hash());
  out.features = encoder::feature_embeddings(out.encoder, data.vocab, data.profile.features);
  return out;
}

backbone::PretrainResult pretrain_backbone(const json& cfg, const Workspace& ws, backbone::Arch arch) {
  const auto started = now_string();
  const auto data = load_prepared(ws);
  const auto out = ws.file(backbone_file(arch));
  ensure_writable(out, ws.force);
  const auto bc = backbone_config(cfg, arch);
  const auto maps = id_maps(data);
  const auto train = make_examples(data.train, data, maps.users, maps.items, bc.max_len, false);
  const auto valid = make_examples(data.valid, data, maps.users, maps.items, bc.max_len, true);
  const Index K = data.profile.size();
  auto res = arch == backbone::Arch::posthoc
                 ? backbone::pretrain_posthoc(train, valid, bc, data.vocab.size(), data.vocab.hash(), maps.users,
                                              maps.items, K)
                 : backbone::pretrain_multitask(train, valid, bc, data.vocab.size(), data.vocab.hash(), maps.users,
                                                maps.items, K);
  write_text(out, res.model.to_json().dump() + "\n");
  const auto curve = ws.file("backbone_" + backbone::to_string(arch) + "_curve.csv");
  write_text(curve, curve_csv(res.curve, arch == backbone::Arch::multitask));
  write_manifest(ws.file(manifest_file("backbone_" + backbone::to_string(arch))), "pretrain " + backbone::to_string(arch),
                 cfg, {ws.file(kTrain), ws.file(kValid), ws.file(kVocab), ws.file(kProfiles)}, {out, curve},
                 workspace_manifests(ws, {"prepare"}), started);
  if (!res.curve.empty())
    ws.info(backbone::to_string(arch) + " train NLL " + fmt(res.curve.front().train_nll, 4) + " -> " +
            fmt(res.curve.back().train_nll, 4));
  return res;
}

MineSummary pretrain_mine(const json& cfg, const Workspace& ws, mine::Target target) {
  const auto started = now_string();
  const auto data = load_prepared(ws);
  const auto out = ws.file(mine_file(target));
  ensure_writable(out, ws.force);
  const auto enc = load_encoder(ws, data);

  std::vector<const corpus::ReviewRecord*> rows;
  std::vector<Index> feats;
  for (const auto& r : data.train) {
    if (target == mine::Target::feature) {
      const Index f = feature_index(data.profile.features, r.feature);
      if (f < 0) continue;
      feats.push_back(f);
    }
    rows.push_back(&r);
  }
  if (rows.size() < 2) throw DataError("not enough training pairs for the " + mine::to_string(target) + " estimator");
  std::vector<TokenSeq> texts;
  std::vector<double> ratings;
  for (const auto* r : rows) {
    texts.push_back(data.vocab.encode(r->text));
    ratings.push_back(r->rating);
  }
  const Matrix X = enc.encoder.encode_batch(texts);
  Matrix Y;
  if (target == mine::Target::rating) {
    Y = rating_matrix(ratings);
  } else {
    Y.resize(enc.features.rows.rows(), static_cast<Index>(feats.size()));
    for (std::size_t i = 0; i < feats.size(); ++i) Y.col(static_cast<Index>(i)) = encoder::feature_embedding(enc.features, feats[i]);
  }

  const auto mc = mine_config(config::at(cfg, "mine"), component_seed(cfg, "mine." + mine::to_string(target)));
  MineSummary sum;
  sum.estimator = mine::train_mine(target, X.rows(), Y.rows(), mine::dataset_sampler(X, Y), mc, &sum.curve);
  sum.estimator.encoder_hash = enc.encoder.checkpoint_hash();
  Rng eval_rng(derive_seed(mc.seed, 0x4556414c));
  if (target == mine::Target::rating) {
    const auto n = mine::normalized_mi(sum.estimator, X, Y, mc.eval_shuffles, eval_rng);
    sum.estimate = n.raw_mi;
    sum.nmi = n.clamped;
  } else {
    sum.estimate = mine::estimate_mi(sum.estimator, X, Y, mc.eval_shuffles, eval_rng);
  }

  write_text(out, sum.estimator.to_json().dump() + "\n");
  std::ostringstream csv;
  csv << "step,bound\n" << std::setprecision(10);
  for (std::size_t i = 0; i < sum.curve.bounds.size(); ++i) csv << i + 1 << ',' << sum.curve.bounds[i] << '\n';
  const auto curve = ws.file("mine_" + mine::to_string(target) + "_curve.csv");
  write_text(curve, csv.str());
  json resolved = cfg;
  resolved["estimate"] = {{"mi", sum.estimate}, {"nmi", sum.nmi}, {"steps", sum.curve.steps},
                          {"converged", sum.curve.converged}};
  write_manifest(ws.file(manifest_file("mine_" + mine::to_string(target))), "pretrain mine-" + mine::to_string(target),
                 resolved, {ws.file(kTrain), ws.file(kEncoder)}, {out, curve},
                 workspace_manifests(ws, {"prepare", "encoder"}), started);
  ws.info("mine-" + mine::to_string(target) + " estimate " + fmt(sum.estimate, 4) + " nats after " +
          std::to_string(sum.curve.steps) + " steps" +
          (target == mine::Target::rating ? ", NMI " + fmt(sum.nmi, 4) : std::string()));
  return sum;
}

// --- fine-tuning -------------------------------------------------------------

namespace {

fs::path backbone_checkpoint(const json& cfg, const Workspace& ws) {
  const auto b = config::at(cfg, "finetune.backbone").get<std::string>();
  if (b == "posthoc" || b == "multitask") return ws.file(backbone_file(backbone::arch_from_string(b)));
  return fs::path(b);
}

finetune::FinetuneConfig finetune_config(const json& cfg) {
  auto fc = finetune::FinetuneConfig::from_json(config::at(cfg, "finetune"));
  fc.seed = component_seed(cfg, "finetune");
  return fc;
}

std::string timing_csv(const std::vector<double>& secs) {
  std::ostringstream os;
  os << "epoch,seconds\n" << std::setprecision(6);
  for (std::size_t i = 0; i < secs.size(); ++i) os << i + 1 << ',' << secs[i] << '\n';
  return os.str();
}

}  // namespace

FinetuneRun run_finetune(const json& cfg, const Workspace& ws, const std::string& run_name) {
  const auto started = now_string();
  FinetuneRun run;
  run.dir = ws.dir / run_name;
  ensure_writable(run.dir / "final.json", ws.force);
  const auto data = load_prepared(ws);
  const auto enc = load_encoder(ws, data);
  const auto fc = finetune_config(cfg);

  const auto ckpt = require(backbone_checkpoint(cfg, ws), "pretrain --target posthoc|multitask");
  const auto pretrained = backbone::Generator::from_json(read_json(ckpt, "backbone checkpoint"), data.vocab.hash());

  finetune::Estimators est;
  std::vector<fs::path> inputs{ckpt, ws.file(kEncoder), ws.file(kTrain), ws.file(kValid)};
  std::vector<std::string> parents{"prepare", "encoder",
                                   "backbone_" + backbone::to_string(pretrained.config().arch)};
  if (fc.task != finetune::Task::feature) {
    const auto p = require(ws.file(mine_file(mine::Target::rating)), "pretrain --target mine-rating");
    est.rating = mine::MIEstimator::from_json(read_json(p, "rating estimator"));
    inputs.push_back(p);
    parents.push_back("mine_rating");
  }
  if (fc.task != finetune::Task::rating) {
    const auto p = require(ws.file(mine_file(mine::Target::feature)), "pretrain --target mine-feature");
    est.feature = mine::MIEstimator::from_json(read_json(p, "feature estimator"));
    inputs.push_back(p);
    parents.push_back("mine_feature");
  }

  finetune::FinetuneInputs in;
  in.encoder = &enc.encoder;
  in.features = &enc.features;
  in.vocab = &data.vocab;
  in.feature_names = data.profile.features;
  in.train = make_examples(data.train, data, pretrained.users(), pretrained.items(), pretrained.max_len(), false);
  in.valid = make_examples(data.valid, data, pretrained.users(), pretrained.items(), pretrained.max_len(), true);

  ws.info("fine-tuning " + run_name + " (" + finetune::to_string(fc.task) + ", " +
          std::to_string(fc.epochs) + " epochs)");
  run.result = finetune::finetune(pretrained, std::move(est), in, fc);

  fs::create_directories(run.dir);
  std::vector<fs::path> outputs{run.dir / "final.json", run.dir / "best.json", run.dir / "training_log.csv",
                                run.dir / "reward_log.csv"};
  write_text(outputs[0], run.result.final_model.to_json().dump() + "\n");
  write_text(outputs[1], run.result.best_model.to_json().dump() + "\n");
  write_text(outputs[2], finetune::training_log_csv(run.result));
  write_text(outputs[3], finetune::reward_log_csv(run.result));
  write_text(run.dir / "timing.csv", timing_csv(run.result.wall_seconds));
  if (run.result.estimators.rating) {
    outputs.push_back(run.dir / "mine_rating.json");
    write_text(outputs.back(), run.result.estimators.rating->to_json().dump() + "\n");
  }
  if (run.result.estimators.feature) {
    outputs.push_back(run.dir / "mine_feature.json");
    write_text(outputs.back(), run.result.estimators.feature->to_json().dump() + "\n");
  }
  json resolved = cfg;
  resolved["finetune_resolved"] = fc.to_json();
  resolved["best_epoch"] = run.result.best_epoch;
  run.manifest_id = write_manifest(run.dir / "manifest.json", "finetune", resolved, inputs, outputs,
                                   workspace_manifests(ws, parents), started);
  return run;
}

EvaluateRun run_evaluate(const json& cfg, const Workspace& ws, const fs::path& checkpoint, corpus::Split split,
                         const std::string& name) {
  const auto started = now_string();
  EvaluateRun run;
  run.dir = ws.dir / name;
  ensure_writable(run.dir / "report.json", ws.force);
  const auto data = load_prepared(ws);
  const auto enc = load_encoder(ws, data);
  require(checkpoint, "finetune");
  const auto model = backbone::Generator::from_json(read_json(checkpoint, "checkpoint"), data.vocab.hash());
  const auto examples =
      make_examples(data.split(split), data, model.users(), model.items(), model.max_len(), true);

  metrics::EvaluateOptions opts;
  json mj = config::at(cfg, "mine");
  mj.merge_patch(config::at(cfg, "evaluate.mine"));
  opts.mine = mine_config(mj, component_seed(cfg, "evaluate.mine"));
  opts.feature_mi = data.profile.size() > 0;
  opts.seed = component_seed(cfg, "evaluate");
  std::vector<metrics::GenerationRecord> dump;
  run.report = metrics::evaluate(model, examples, enc.encoder, enc.features, data.vocab, data.profile.features, opts,
                                 &dump);
  // Generation records carry user/item names from the split.
  const auto& recs = data.split(split);
  for (std::size_t i = 0; i < dump.size() && i < recs.size(); ++i) {
    dump[i].user = recs[i].user_id;
    dump[i].item = recs[i].item_id;
  }

  fs::create_directories(run.dir);
  json rj = run.report.to_json();
  rj["split"] = corpus::to_string(split);
  rj["checkpoint"] = checkpoint.filename().string();
  rj["checkpoint_hash"] = model.checkpoint_hash();
  write_text(run.dir / "report.json", rj.dump(2) + "\n");
  write_text(run.dir / "report.csv", metrics::EvaluationReport::csv_header() + "\n" + run.report.csv_row() + "\n");
  std::ostringstream gens;
  for (const auto& g : dump) gens << g.to_json().dump() << '\n';
  write_text(run.dir / "generations.jsonl", gens.str());

  std::vector<fs::path> parents = workspace_manifests(ws, {"prepare", "encoder"});
  if (fs::exists(checkpoint.parent_path() / "manifest.json")) parents.push_back(checkpoint.parent_path() / "manifest.json");
  for (const char* arch : {"posthoc", "multitask"})
    if (checkpoint.filename() == backbone_file(backbone::arch_from_string(arch)))
      for (auto& p : workspace_manifests(ws, {std::string("backbone_") + arch})) parents.push_back(p);
  json resolved = cfg;
  resolved["split"] = corpus::to_string(split);
  resolved["meteor"] = "omitted";
  run.manifest_id = write_manifest(run.dir / "manifest.json", "evaluate", resolved,
                                   {checkpoint, ws.file(kEncoder), ws.file(kTest)},
                                   {run.dir / "report.json", run.dir / "report.csv", run.dir / "generations.jsonl"},
                                   parents, started);
  return run;
}

// --- ablation ----------------------------------------------------------------

std::vector<std::string> ablation_arms(const json& cfg) {
  const auto& arms = config::at(cfg, "ablate.arms");
  if (!arms.is_null()) return arms.get<std::vector<std::string>>();
  std::vector<std::string> out{"mi", "mi_kl", "full"};
  if (config::at(cfg, "finetune.task").get<std::string>() != "rating") out.push_back("full_no_dwa");
  return out;
}

json arm_overrides(const std::string& arm) {
  if (arm == "mi") return {{"use_kl", false}, {"use_entropy", false}};
  if (arm == "mi_kl") return {{"use_kl", true}, {"use_entropy", false}};
  if (arm == "full") return {{"use_kl", true}, {"use_entropy", true}};
  if (arm == "full_no_dwa")
    return {{"use_kl", true}, {"use_entropy", true}, {"weighting", "static"}, {"alpha", 1.0}, {"beta", 1.0}};
  throw UsageError("unknown ablation arm '" + arm + "'");
}

std::vector<AblationArm> run_ablate(const json& cfg, const Workspace& ws) {
  const auto started = now_string();
  const auto table_csv = ws.dir / "ablate" / "ablation.csv";
  ensure_writable(table_csv, ws.force);
  const bool feature_task = config::at(cfg, "finetune.task").get<std::string>() == "feature";
  std::vector<AblationArm> out;
  std::vector<fs::path> arm_manifests;
  for (const auto& arm : ablation_arms(cfg)) {
    json c = cfg;
    c["finetune"].merge_patch(arm_overrides(arm));
    AblationArm a;
    a.name = arm;
    a.run = run_finetune(c, ws, "ablate/" + arm);
    a.eval = run_evaluate(c, ws, a.run.dir / "final.json",
                          corpus::split_from_string(config::at(cfg, "evaluate.split").get<std::string>()),
                          "ablate/" + arm + "/eval");
    arm_manifests.push_back(a.eval.dir / "manifest.json");
    ws.info("arm " + arm + ": BLEU-1 " + fmt(a.eval.report.bleu1, 4) + ", " +
            (feature_task ? "FMR " + fmt(a.eval.report.fmr, 4) : "NMI " + fmt(a.eval.report.nmi, 4)));
    out.push_back(std::move(a));
  }
  std::ostringstream csv;
  csv << "arm,B-1," << (feature_task ? "FMR" : "I(R;E)/H(R)") << ",I(F;E)\n" << std::setprecision(10);
  json table = json::array();
  for (const auto& a : out) {
    const double align = feature_task ? a.eval.report.fmr : a.eval.report.nmi;
    csv << a.name << ',' << a.eval.report.bleu1 << ',' << align << ',' << a.eval.report.mi_feature << '\n';
    table.push_back({{"arm", a.name}, {"bleu1", a.eval.report.bleu1}, {"alignment", align},
                     {"report", a.eval.report.to_json()}});
  }
  write_text(table_csv, csv.str());
  write_text(ws.dir / "ablate" / "ablation.json", table.dump(2) + "\n");
  write_manifest(ws.dir / "ablate" / "manifest.json", "ablate", cfg, {},
                 {table_csv, ws.dir / "ablate" / "ablation.json"}, arm_manifests, started);
  return out;
}

// --- plots -------------------------------------------------------------------

namespace {

struct EpochSeries {
  std::vector<double> epochs;
  std::vector<double> mi, kl, entropy;  // weighted channel means
  std::vector<double> g_mi, g_kl, g_entropy;
};

EpochSeries epoch_series(const plot::Table& t) {
  const auto epoch = t.column("epoch");
  const auto mi = t.column("mi_mean"), kl = t.column("kl_mean"), en = t.column("entropy_mean");
  const auto gm = t.column("gamma_mi"), gk = t.column("gamma_kl"), ge = t.column("gamma_entropy");
  EpochSeries s;
  std::size_t i = 0;
  while (i < epoch.size()) {
    std::size_t j = i;
    double a = 0, b = 0, c = 0, wa = 0, wb = 0, wc = 0;
    while (j < epoch.size() && epoch[j] == epoch[i]) {
      a += gm[j] * mi[j];
      b += gk[j] * kl[j];
      c += ge[j] * en[j];
      wa += gm[j];
      wb += gk[j];
      wc += ge[j];
      ++j;
    }
    const double n = static_cast<double>(j - i);
    s.epochs.push_back(epoch[i]);
    s.mi.push_back(a / n);
    s.kl.push_back(b / n);
    s.entropy.push_back(c / n);
    s.g_mi.push_back(wa / n);
    s.g_kl.push_back(wb / n);
    s.g_entropy.push_back(wc / n);
    i = j;
  }
  return s;
}

}  // namespace

std::vector<fs::path> run_plot(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool force) {
  if (run_dirs.empty()) throw UsageError("plot needs at least one run directory");
  std::vector<fs::path> written;
  std::vector<std::pair<std::string, EpochSeries>> runs;
  for (const auto& dir : run_dirs) {
    const auto table = plot::read_csv(dir / "reward_log.csv");
    const auto manifest = dir / "manifest.json";
    const std::string id = fs::exists(manifest) ? manifest_id(manifest) : dir.filename().string();
    runs.emplace_back(id, epoch_series(table));
  }
  fs::create_directories(out_dir);
  auto emit = [&](const fs::path& p, const std::string& title, const std::string& ylabel,
                  const std::vector<plot::Series>& series) {
    ensure_writable(p, force);
    plot::write_line_chart(p, title, "epoch", ylabel, series);
    written.push_back(p);
  };
  for (const auto& [id, s] : runs) {
    emit(out_dir / (id + "_mi.svg"), "weighted MI reward", "reward", {{"mi", s.epochs, s.mi}});
    emit(out_dir / (id + "_kl.svg"), "weighted KL reward", "reward", {{"kl", s.epochs, s.kl}});
    emit(out_dir / (id + "_entropy.svg"), "weighted entropy reward", "reward", {{"entropy", s.epochs, s.entropy}});
    emit(out_dir / (id + "_weights.svg"), "reward weights", "weight",
         {{"gamma_mi", s.epochs, s.g_mi}, {"gamma_kl", s.epochs, s.g_kl}, {"gamma_entropy", s.epochs, s.g_entropy}});
  }
  if (runs.size() >= 2) {
    std::string name;
    std::vector<plot::Series> series;
    for (const auto& [id, s] : runs) {
      name += (name.empty() ? "" : "_vs_") + id;
      series.push_back({id, s.epochs, s.entropy});
    }
    emit(out_dir / (name + "_entropy_overlay.svg"), "weighted entropy reward", "reward", series);
  }
  return written;
}

}  // namespace mmi::pipeline
