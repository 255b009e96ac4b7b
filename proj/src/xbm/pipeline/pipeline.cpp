#include "xbm/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "xbm/util/checksum.hpp"
#include "xbm/util/error.hpp"
#include "xbm/world/grammar.hpp"

namespace xbm::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::set<std::string>& accepted_keys() {
  static const std::set<std::string> keys{
      // data
      "rows", "cols", "shapes", "colors", "image_size", "pretrain_size", "train_size", "val_size", "test_size",
      "intervention_size", "data_seed",
      // model
      "d_model", "depth", "heads", "mlp_hidden", "patch", "max_len", "classifier_mode",
      // pretraining and judges
      "pretrain_epochs", "pretrain_lr", "pretrain_batch_size", "pretrain_seed", "judge_epochs", "judge_lr",
      "judge_batch_size", "judge_temperature", "judge_seed",
      // XBM training
      "lambda", "lr", "batch_size", "epochs", "seed", "tau0", "anneal_rate", "tau_min", "anneal", "regularizer",
      "beam_width", "reference_cache", "weight_decay", "grad_clip", "freeze_captioner", "classification_loss",
      "max_steps", "run",
      // evaluation, interpretation, interventions, ablation
      "eval_beam_width", "head_aggregation", "intervention_kind", "intervention_seed", "intervention_text",
      "intervention_split", "ablation_seeds"};
  return keys;
}

Settings load_settings(const std::string& config_path, const fs::path& root) {
  Settings s;
  if (!config_path.empty()) s.config = KeyValueConfig::load(config_path, accepted_keys());
  s.root = root;
  return s;
}

void set_override(Settings& s, const std::string& key, const std::string& value) {
  if (!accepted_keys().count(key)) fail(ErrorKind::config, "unknown config key: " + key);
  s.config.set(key, value);
}

namespace {

int get_int(const KeyValueConfig& c, const std::string& key, std::int64_t fallback) {
  const auto v = c.get_int(key, fallback);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    fail(ErrorKind::config, key + " is out of range");
  return static_cast<int>(v);
}

std::uint64_t get_u64(const KeyValueConfig& c, const std::string& key, std::uint64_t fallback) {
  const auto v = c.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) fail(ErrorKind::config, key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

constexpr std::int64_t kSmokeSteps = 50;

}  // namespace

SceneSpec scene_spec(const KeyValueConfig& c) {
  SceneSpec s;
  s.rows = get_int(c, "rows", s.rows);
  s.cols = get_int(c, "cols", s.cols);
  s.shapes = c.get_list("shapes", s.shapes);
  s.colors = c.get_list("colors", s.colors);
  s.image_size = get_int(c, "image_size", s.image_size);
  s.validate();
  return s;
}

nn::ModelConfig model_config(const KeyValueConfig& c, const SceneSpec& spec) {
  nn::ModelConfig m;
  m.image_size = spec.image_size;
  m.patch = get_int(c, "patch", m.patch);
  m.d_model = get_int(c, "d_model", m.d_model);
  m.depth = get_int(c, "depth", m.depth);
  m.heads = get_int(c, "heads", m.heads);
  m.mlp_hidden = get_int(c, "mlp_hidden", m.mlp_hidden);
  m.max_len = get_int(c, "max_len", m.max_len);
  m.vocab_size = Vocabulary::standard().size();
  m.num_classes = spec.num_classes();
  m.classifier_mode = nn::parse_mode(c.get_string("classifier_mode", nn::mode_name(m.classifier_mode)));
  m.validate();
  if (max_caption_length(spec) > m.max_len)
    fail(ErrorKind::config, "max_len " + std::to_string(m.max_len) + " is shorter than the longest caption (" +
                                std::to_string(max_caption_length(spec)) + ")");
  return m;
}

train::PretrainConfig pretrain_config(const KeyValueConfig& c, bool smoke) {
  train::PretrainConfig p;
  p.epochs = get_int(c, "pretrain_epochs", p.epochs);
  p.lr = c.get_double("pretrain_lr", p.lr);
  p.batch_size = get_int(c, "pretrain_batch_size", p.batch_size);
  if (p.epochs < 0 || p.batch_size < 1 || !(p.lr >= 0.0)) fail(ErrorKind::config, "invalid pretraining settings");
  if (smoke) p.max_steps = kSmokeSteps;
  return p;
}

metrics::JudgeConfig judge_config(const KeyValueConfig& c, bool smoke) {
  metrics::JudgeConfig j;
  j.epochs = get_int(c, "judge_epochs", j.epochs);
  j.lr = c.get_double("judge_lr", j.lr);
  j.batch_size = get_int(c, "judge_batch_size", j.batch_size);
  j.temperature = c.get_double("judge_temperature", j.temperature);
  if (smoke) j.max_steps = kSmokeSteps;
  return j;
}

train::TrainConfig train_config(const KeyValueConfig& c, bool smoke) {
  train::TrainConfig t;
  t.lambda = c.get_double("lambda", t.lambda);
  t.lr = c.get_double("lr", t.lr);
  t.batch_size = get_int(c, "batch_size", t.batch_size);
  t.epochs = get_int(c, "epochs", t.epochs);
  t.seed = get_u64(c, "seed", t.seed);
  t.tau0 = c.get_double("tau0", t.tau0);
  t.anneal_rate = c.get_double("anneal_rate", t.anneal_rate);
  t.tau_min = c.get_double("tau_min", t.tau_min);
  t.anneal = c.get_bool("anneal", t.anneal);
  t.regularizer = train::parse_regularizer(c.get_string("regularizer", train::regularizer_name(t.regularizer)));
  t.classifier_mode = nn::parse_mode(c.get_string("classifier_mode", nn::mode_name(t.classifier_mode)));
  t.beam_width = get_int(c, "beam_width", t.beam_width);
  t.reference_cache = c.get_bool("reference_cache", t.reference_cache);
  t.weight_decay = c.get_double("weight_decay", t.weight_decay);
  t.grad_clip = c.get_double("grad_clip", t.grad_clip);
  t.freeze_captioner = c.get_bool("freeze_captioner", t.freeze_captioner);
  t.classification_loss = c.get_bool("classification_loss", t.classification_loss);
  t.max_steps = c.get_int("max_steps", t.max_steps);
  if (smoke) t.max_steps = t.max_steps > 0 ? std::min<std::int64_t>(t.max_steps, kSmokeSteps) : kSmokeSteps;
  t.validate();
  return t;
}

namespace paths {
fs::path split(const fs::path& root, SplitId id) {
  return root / "data" / (std::string(kSplitNames[static_cast<std::size_t>(id)]) + ".xbmd");
}
fs::path vocab(const fs::path& root) { return root / "data" / "vocab.txt"; }
fs::path teacher(const fs::path& root) { return root / "teacher.ckpt"; }
fs::path judges(const fs::path& root) { return root / "judges.ckpt"; }
fs::path manifest(const fs::path& root, const std::string& command) {
  return root / "manifests" / (command + ".json");
}
fs::path run_dir(const fs::path& root, const std::string& run) { return root / "runs" / run; }
}  // namespace paths

namespace {

std::string run_name(const Settings& s) {
  const auto r = s.config.get_string("run", "xbm");
  if (r.empty() || r.find_first_of("/\\") != std::string::npos || r == "." || r == "..")
    fail(ErrorKind::config, "run must be a plain directory name");
  return r;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorKind::data, "cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::data, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::data, "write failed: " + path.string());
}

std::string relative(const Settings& s, const fs::path& p) { return p.lexically_relative(s.root).generic_string(); }

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) fail(ErrorKind::data, "missing " + p.string() + " (run `" + producer + "` first)");
}

struct Manifest {
  json j;

  Manifest(const Settings& s, const std::string& command) {
    j["command"] = command;
    j["config_sha256"] = sha256_hex(s.config.canonical_text());
    j["config"] = s.config.canonical_text();
    j["smoke"] = s.smoke;
    j["inputs"] = json::object();
    j["outputs"] = json::object();
  }
  void input(const Settings& s, const fs::path& p) { j["inputs"][relative(s, p)] = sha256_file(p); }
  void output(const Settings& s, const fs::path& p) { j["outputs"][relative(s, p)] = sha256_file(p); }
  void write(const fs::path& path) const { write_text(path, j.dump(2) + "\n"); }
};

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) fail(ErrorKind::data, "cannot read " + p.string());
  try {
    return json::parse(f);
  } catch (const std::exception& e) {
    fail(ErrorKind::data, p.string() + ": " + e.what());
  }
}

// Compares the current checksum of `file` with the one recorded by the
// producing command's manifest.
void verify(const Settings& s, const fs::path& file, const fs::path& manifest) {
  if (s.force) return;
  require_file(manifest, "the producing command");
  const json m = read_json(manifest);
  const auto key = relative(s, file);
  if (!m.contains("outputs") || !m["outputs"].contains(key))
    fail(ErrorKind::checksum, manifest.string() + " does not record " + key);
  const std::string want = m["outputs"][key].get<std::string>();
  const std::string have = sha256_file(file);
  if (want != have)
    fail(ErrorKind::checksum, "checksum mismatch for " + key + " (recorded " + want.substr(0, 12) + ", found " +
                                  have.substr(0, 12) + "); pass --force to override");
}

LoadedSplit load_split(const Settings& s, SplitId id) {
  const auto p = paths::split(s.root, id);
  require_file(p, "gen-data");
  auto loaded = read_split(p);
  const auto expected = scene_spec(s.config);
  if (!(loaded.spec == expected))
    fail(ErrorKind::config, p.string() + " was generated with a different scene spec than the config describes");
  return loaded;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << std::fixed << v;
  return os.str();
}

train::Captioner load_teacher(const Settings& s, const nn::ModelConfig& cfg) {
  require_file(paths::teacher(s.root), "pretrain");
  verify(s, paths::teacher(s.root), paths::manifest(s.root, "pretrain"));
  const auto ckpt = nn::Checkpoint::read(paths::teacher(s.root));
  const auto stored = nn::ModelConfig::from_text(ckpt.config_text);
  auto want = cfg;
  want.classifier_mode = stored.classifier_mode;
  if (!(stored == want)) fail(ErrorKind::config, "teacher checkpoint was trained with a different model config");
  train::Captioner c(stored, 0);
  c.cfg = cfg;
  auto ps = c.params();
  ckpt.load("captioner/", ps);
  return c;
}

metrics::Judges load_judges(const Settings& s) {
  require_file(paths::judges(s.root), "train-judges");
  verify(s, paths::judges(s.root), paths::manifest(s.root, "train-judges"));
  return metrics::Judges::from_checkpoint(nn::Checkpoint::read(paths::judges(s.root)));
}

std::uint64_t pretrain_seed(const Settings& s) { return get_u64(s.config, "pretrain_seed", 0); }

}  // namespace

void save_bundle(train::XbmModel& model, const fs::path& path) {
  nn::Checkpoint c;
  nn::ModelConfig cfg = model.student.cfg;
  cfg.classifier_mode = model.classifier.mode();
  c.config_text = cfg.to_text();
  c.add("teacher/", model.teacher.params());
  c.add("student/", model.student.params());
  c.add("classifier/", model.classifier_params());
  ensure_dir(path.parent_path());
  c.write(path);
}

train::XbmModel load_bundle(const fs::path& path) {
  const auto c = nn::Checkpoint::read(path);
  const auto cfg = nn::ModelConfig::from_text(c.config_text);
  train::Captioner teacher(cfg, 0);
  train::XbmModel m(teacher, cfg.classifier_mode, cfg.num_classes, 0);
  c.load("teacher/", m.teacher.params());
  c.load("student/", m.student.params());
  c.load("classifier/", m.classifier_params());
  return m;
}

void gen_data(const Settings& s) {
  s.config.require({"pretrain_size", "train_size", "val_size", "test_size", "intervention_size", "data_seed"});
  const auto spec = scene_spec(s.config);
  const auto cfg = model_config(s.config, spec);
  std::array<std::uint64_t, 5> sizes{};
  for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = get_u64(s.config, std::string(kSplitNames[i]) + "_size", 0);
  const auto corpora = build_corpora(spec, CorpusPlan::from_sizes(get_u64(s.config, "data_seed", 0), sizes), cfg.max_len);
  Manifest m(s, "gen-data");
  ensure_dir(s.root / "data");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto id = static_cast<SplitId>(i);
    write_split(paths::split(s.root, id), corpora[id], spec);
    m.output(s, paths::split(s.root, id));
    m.j["results"][kSplitNames[i]] = corpora[id].examples.size();
    s.say(std::string("wrote ") + kSplitNames[i] + ": " + std::to_string(corpora[id].examples.size()) + " examples");
  }
  Vocabulary::standard().write_sidecar(paths::vocab(s.root));
  m.output(s, paths::vocab(s.root));
  m.write(paths::manifest(s.root, "gen-data"));
}

void pretrain(const Settings& s) {
  const auto data = load_split(s, SplitId::pretrain);
  verify(s, paths::split(s.root, SplitId::pretrain), paths::manifest(s.root, "gen-data"));
  const auto cfg = model_config(s.config, data.spec);
  const auto pc = pretrain_config(s.config, s.smoke);
  const auto seed = pretrain_seed(s);
  train::Captioner cap(cfg, seed);
  std::string log = "epoch\tloss\n";
  train::pretrain_captioner(cap, data.split.examples, pc, seed, [&](const train::PretrainEpoch& e) {
    log += std::to_string(e.epoch) + "\t" + fmt(e.loss) + "\n";
    s.say("pretrain epoch " + std::to_string(e.epoch) + " loss " + fmt(e.loss, 4));
  });
  nn::Checkpoint ck;
  ck.config_text = cfg.to_text();
  ck.add("captioner/", cap.params());
  ck.write(paths::teacher(s.root));
  write_text(s.root / "pretrain_metrics.tsv", log);
  Manifest m(s, "pretrain");
  m.input(s, paths::split(s.root, SplitId::pretrain));
  m.output(s, paths::teacher(s.root));
  m.output(s, s.root / "pretrain_metrics.tsv");
  m.write(paths::manifest(s.root, "pretrain"));
}

void train_judges(const Settings& s) {
  const auto data = load_split(s, SplitId::pretrain);
  verify(s, paths::split(s.root, SplitId::pretrain), paths::manifest(s.root, "gen-data"));
  const auto cfg = model_config(s.config, data.spec);
  const auto jc = judge_config(s.config, s.smoke);
  std::string log = "epoch\tcontrastive\tlm_nll\n";
  auto judges = metrics::train_judges(data.split.examples, cfg, jc, get_u64(s.config, "judge_seed", 0),
                                      [&](const metrics::JudgeEpoch& e) {
                                        log += std::to_string(e.epoch) + "\t" + fmt(e.contrastive) + "\t" +
                                               fmt(e.lm_nll) + "\n";
                                        s.say("judges epoch " + std::to_string(e.epoch) + " contrastive " +
                                              fmt(e.contrastive, 4) + " lm " + fmt(e.lm_nll, 4));
                                      });
  judges.to_checkpoint().write(paths::judges(s.root));
  write_text(s.root / "judge_metrics.tsv", log);
  Manifest m(s, "train-judges");
  m.input(s, paths::split(s.root, SplitId::pretrain));
  m.output(s, paths::judges(s.root));
  m.output(s, s.root / "judge_metrics.tsv");
  m.j["judge_checksum"] = judges.checksum();
  m.write(paths::manifest(s.root, "train-judges"));
}

namespace {

std::string metrics_tsv(const train::TrainResult& r) {
  std::string out = "epoch\tL_cls\tR_int\ttotal\tval_acc\ttau\n";
  for (const auto& e : r.epochs)
    out += std::to_string(e.epoch) + "\t" + fmt(e.cls) + "\t" + fmt(e.reg) + "\t" + fmt(e.total) + "\t" +
           fmt(e.val_acc) + "\t" + fmt(e.tau) + "\n";
  return out;
}

struct TrainedRow {
  train::XbmModel model;
  train::TrainResult result;
};

TrainedRow train_one(const Settings& s, const train::Captioner& teacher, const LoadedSplit& tr, const LoadedSplit& va,
                     const train::TrainConfig& tc, const std::string& tag) {
  train::XbmModel model(teacher, tc.classifier_mode, teacher.cfg.num_classes, tc.seed);
  auto result = train::train_xbm(model, tr.split.examples, va.split.examples, tc, [&](const train::EpochMetrics& e) {
    s.say(tag + " epoch " + std::to_string(e.epoch) + " L_cls " + fmt(e.cls, 4) + " R_int " + fmt(e.reg, 4) +
          " val_acc " + fmt(e.val_acc, 4) + " tau " + fmt(e.tau, 4));
  });
  return {std::move(model), std::move(result)};
}

}  // namespace

void train_xbm(const Settings& s) {
  const auto tr = load_split(s, SplitId::train);
  const auto va = load_split(s, SplitId::val);
  for (auto id : {SplitId::train, SplitId::val})
    verify(s, paths::split(s.root, id), paths::manifest(s.root, "gen-data"));
  const auto cfg = model_config(s.config, tr.spec);
  const auto tc = train_config(s.config, s.smoke);
  const auto teacher = load_teacher(s, cfg);
  const auto run = run_name(s);
  const auto dir = paths::run_dir(s.root, run);
  auto [model, result] = train_one(s, teacher, tr, va, tc, run);
  save_bundle(model, dir / "xbm.ckpt");
  write_text(dir / "metrics.tsv", metrics_tsv(result));
  write_text(dir / "train_config.txt", tc.to_text());
  Manifest m(s, "train-xbm");
  m.input(s, paths::split(s.root, SplitId::train));
  m.input(s, paths::split(s.root, SplitId::val));
  m.input(s, paths::teacher(s.root));
  m.output(s, dir / "xbm.ckpt");
  m.output(s, dir / "metrics.tsv");
  m.output(s, dir / "train_config.txt");
  m.j["results"] = {{"best_epoch", result.best_epoch},
                    {"best_val_acc", result.best_val_acc},
                    {"steps", result.steps},
                    {"clipped_steps", result.clipped_steps}};
  m.write(dir / "manifest.json");
}

namespace {

train::XbmModel load_run(const Settings& s, const fs::path& dir) {
  require_file(dir / "xbm.ckpt", "train-xbm");
  verify(s, dir / "xbm.ckpt", dir / "manifest.json");
  return load_bundle(dir / "xbm.ckpt");
}

metrics::EvalOptions eval_options(const Settings& s) {
  metrics::EvalOptions o;
  o.beam_width = get_int(s.config, "eval_beam_width", o.beam_width);
  if (o.beam_width < 1) fail(ErrorKind::config, "eval_beam_width must be >= 1");
  return o;
}

}  // namespace

void eval(const Settings& s) {
  const auto test = load_split(s, SplitId::test);
  verify(s, paths::split(s.root, SplitId::test), paths::manifest(s.root, "gen-data"));
  auto judges = load_judges(s);
  const auto run = run_name(s);
  const auto dir = paths::run_dir(s.root, run);
  auto model = load_run(s, dir);
  const auto row = metrics::evaluate(model, test.split.examples, judges, run, eval_options(s));
  const std::vector<metrics::EvalRow> rows{row};
  write_text(dir / "report.tsv", metrics::report_tsv(rows));
  s.say(run + " test_acc " + fmt(row.test_acc, 4) + " alignment " + fmt(row.alignment, 4) + " perplexity " +
        fmt(row.perplexity, 3) + " miou " + fmt(row.miou, 4));
  Manifest m(s, "eval");
  m.input(s, paths::split(s.root, SplitId::test));
  m.input(s, paths::judges(s.root));
  m.input(s, dir / "xbm.ckpt");
  m.output(s, dir / "report.tsv");
  m.j["judge_checksum"] = row.judge_checksum;
  m.write(dir / "eval_manifest.json");
}

namespace {

SplitId parse_split(const std::string& name) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (name == kSplitNames[i]) return static_cast<SplitId>(i);
  fail(ErrorKind::config, "unknown split: " + name);
}

}  // namespace

void explain(const Settings& s, const std::string& split_name, int index) {
  const auto id = parse_split(split_name);
  const auto data = load_split(s, id);
  verify(s, paths::split(s.root, id), paths::manifest(s.root, "gen-data"));
  if (index < 0 || static_cast<std::size_t>(index) >= data.split.examples.size())
    fail(ErrorKind::config, "index " + std::to_string(index) + " is out of range for split " + split_name + " (" +
                                std::to_string(data.split.examples.size()) + " examples)");
  const auto dir = paths::run_dir(s.root, run_name(s));
  auto model = load_run(s, dir);
  const auto agg = interpret::parse_aggregation(s.config.get_string("head_aggregation", "mean"));
  const auto& ex = data.split.examples[static_cast<std::size_t>(index)];
  const auto report = interpret::explain_example(model, ex, eval_options(s).beam_width, agg);
  const auto out = dir / "explain" / (split_name + "_" + std::to_string(index));
  write_text(out / "report.txt", report.to_text());
  write_text(out / "report.json", report.to_json());
  interpret::write_ppm(out / "image.ppm", ex.image);
  Manifest m(s, "explain");
  m.input(s, paths::split(s.root, id));
  m.input(s, dir / "xbm.ckpt");
  m.output(s, out / "report.txt");
  m.output(s, out / "report.json");
  m.output(s, out / "image.ppm");
  if (report.has_heatmap) {
    interpret::write_pgm(out / "heatmap.pgm", report.heatmap);
    m.output(s, out / "heatmap.pgm");
  }
  m.write(out / "manifest.json");
  s.say(report.to_text());
}

void intervene(const Settings& s) {
  const auto split_name = s.config.get_string("intervention_split", "intervention");
  const auto id = parse_split(split_name);
  const auto data = load_split(s, id);
  verify(s, paths::split(s.root, id), paths::manifest(s.root, "gen-data"));
  const auto dir = paths::run_dir(s.root, run_name(s));
  auto model = load_run(s, dir);
  const int beam = eval_options(s).beam_width;
  const auto kind = s.config.get_string("intervention_kind", "all");
  std::vector<interpret::InterventionSpec> specs;
  const auto seed = get_u64(s.config, "intervention_seed", 0);
  if (kind == "all") {
    specs.push_back({interpret::InterventionKind::randomized, {}, seed});
    if (data.split.examples.empty() || data.split.examples[0].has_caption)
      specs.push_back({interpret::InterventionKind::ground_truth, {}, seed});
  } else {
    interpret::InterventionSpec spec{interpret::parse_intervention(kind), {}, seed};
    if (spec.kind == interpret::InterventionKind::custom) {
      s.config.require({"intervention_text"});
      spec.replacement = Vocabulary::standard().encode(s.config.get_string("intervention_text", ""));
      spec.replacement.push_back(Vocabulary::kEos);
    }
    specs.push_back(spec);
  }
  std::string tsv = "kind\tnormal_acc\treplaced_acc\tcount\n";
  for (const auto& spec : specs) {
    const auto acc = interpret::intervention_accuracy(model, data.split.examples, spec, beam);
    tsv += std::string(interpret::intervention_name(spec.kind)) + "\t" + fmt(acc.normal) + "\t" + fmt(acc.replaced) +
           "\t" + std::to_string(acc.count) + "\n";
    s.say(std::string(interpret::intervention_name(spec.kind)) + ": normal " + fmt(acc.normal, 4) + " replaced " +
          fmt(acc.replaced, 4));
  }
  write_text(dir / "intervention.tsv", tsv);
  Manifest m(s, "intervene");
  m.input(s, paths::split(s.root, id));
  m.input(s, dir / "xbm.ckpt");
  m.output(s, dir / "intervention.tsv");
  m.write(dir / "intervene_manifest.json");
}

namespace {

std::string number_label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::vector<AblationRow> ablation_rows(const train::TrainConfig& base) {
  std::vector<AblationRow> rows;
  auto distill = base;
  distill.regularizer = train::Regularizer::explanation_distillation;
  distill.freeze_captioner = false;
  distill.tau0 = 10.0;
  distill.anneal = true;
  {
    auto c = distill;
    c.freeze_captioner = true;
    c.regularizer = train::Regularizer::none;
    rows.push_back({"frozen", c});
  }
  for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
    auto c = distill;
    c.lambda = lambda;
    rows.push_back({"lambda_" + number_label(lambda), c});
  }
  for (double tau : {1.0, 10.0, 100.0})
    for (bool anneal : {true, false}) {
      auto c = distill;
      c.lambda = 0.1;
      c.tau0 = tau;
      c.anneal = anneal;
      rows.push_back({"tau" + number_label(tau) + (anneal ? "_anneal" : "_const"), c});
    }
  {
    auto c = distill;
    c.lambda = 0.1;
    c.regularizer = train::Regularizer::l2sp;
    rows.push_back({"l2sp", c});
  }
  return rows;
}

void ablate(const Settings& s) {
  const auto tr = load_split(s, SplitId::train);
  const auto va = load_split(s, SplitId::val);
  const auto te = load_split(s, SplitId::test);
  for (auto id : {SplitId::train, SplitId::val, SplitId::test})
    verify(s, paths::split(s.root, id), paths::manifest(s.root, "gen-data"));
  const auto cfg = model_config(s.config, tr.spec);
  const auto base = train_config(s.config, s.smoke);
  const auto teacher = load_teacher(s, cfg);
  auto judges = load_judges(s);
  const int seeds = get_int(s.config, "ablation_seeds", 1);
  if (seeds < 1) fail(ErrorKind::config, "ablation_seeds must be >= 1");
  const auto opts = eval_options(s);
  const auto dir = s.root / "ablation";

  std::vector<metrics::EvalRow> rows;
  std::vector<std::string> failures;
  std::map<std::string, metrics::EvalRow> done;  // keyed by training config text
  std::string metrics_log;
  for (int k = 0; k < seeds; ++k) {
    for (auto row : ablation_rows(base)) {
      row.config.seed = base.seed + static_cast<std::uint64_t>(k);
      const std::string label = seeds > 1 ? row.label + "@seed" + std::to_string(row.config.seed) : row.label;
      const auto key = row.config.to_text();
      try {
        metrics::EvalRow r;
        if (auto it = done.find(key); it != done.end()) {
          r = it->second;
          s.say(label + ": same configuration as an earlier row, reusing its result");
        } else {
          auto [model, result] = train_one(s, teacher, tr, va, row.config, label);
          r = metrics::evaluate(model, te.split.examples, judges, label, opts);
          metrics_log += "# " + label + "\n" + metrics_tsv(result);
          done[key] = r;
        }
        r.label = label;
        rows.push_back(r);
        s.say(label + " test_acc " + fmt(r.test_acc, 4) + " alignment " + fmt(r.alignment, 4) + " perplexity " +
              fmt(r.perplexity, 3) + " unique " + fmt(r.unique_ratio, 3));
      } catch (const Error& e) {
        failures.push_back(label + "\t" + e.what());
        s.say(label + " failed: " + e.what());
      }
    }
  }
  // Degeneration against the lambda = 0.1 row of the same seed.
  for (auto& r : rows) {
    const auto at = r.label.find('@');
    const std::string suffix = at == std::string::npos ? "" : r.label.substr(at);
    for (const auto& ref : rows)
      if (ref.label == "lambda_0.1" + suffix)
        r.degenerate = metrics::degeneration(r.unique_ratio, r.perplexity, ref.perplexity).fired;
  }
  write_text(dir / "report.tsv", metrics::report_tsv(rows));
  write_text(dir / "metrics.tsv", metrics_log);
  std::string fail_text = "row\terror\n";
  for (const auto& f : failures) fail_text += f + "\n";
  write_text(dir / "failures.tsv", fail_text);
  Manifest m(s, "ablate");
  for (auto id : {SplitId::train, SplitId::val, SplitId::test}) m.input(s, paths::split(s.root, id));
  m.input(s, paths::teacher(s.root));
  m.input(s, paths::judges(s.root));
  m.output(s, dir / "report.tsv");
  m.output(s, dir / "metrics.tsv");
  m.output(s, dir / "failures.tsv");
  m.j["judge_checksum"] = judges.checksum();
  m.j["failed_rows"] = failures.size();
  m.write(dir / "manifest.json");
}

}  // namespace xbm::pipeline
