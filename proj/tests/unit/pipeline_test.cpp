#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "xbm/pipeline/pipeline.hpp"
#include "xbm/util/checksum.hpp"
#include "xbm/util/error.hpp"

namespace xbm::pipeline {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("xbm_pipeline_test_" + name);
  fs::remove_all(p);
  return p;
}

Settings tiny_settings(const fs::path& root) {
  Settings s;
  s.root = root;
  const std::pair<const char*, const char*> kv[] = {
      {"pretrain_size", "24"}, {"train_size", "12"}, {"val_size", "6"},    {"test_size", "6"},
      {"intervention_size", "5"}, {"data_seed", "3"}, {"d_model", "8"},    {"heads", "2"},
      {"depth", "1"},          {"mlp_hidden", "16"},  {"image_size", "16"}, {"epochs", "1"},
      {"pretrain_epochs", "1"}, {"judge_epochs", "1"}, {"batch_size", "4"}};
  for (const auto& [k, v] : kv) set_override(s, k, v);
  return s;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an xbm::Error";
  return ErrorKind::state;
}

TEST(Settings, UnknownOverrideKeyIsAConfigError) {
  Settings s;
  EXPECT_EQ(kind_of([&] { set_override(s, "lamdba", "0.1"); }), ErrorKind::config);
}

TEST(Settings, UnknownKeyInFileIsRejected) {
  const auto dir = scratch("badkey");
  fs::create_directories(dir);
  std::ofstream(dir / "c.conf") << "lambda = 0.1\nbogus = 1\n";
  EXPECT_EQ(kind_of([&] { load_settings((dir / "c.conf").string(), dir); }), ErrorKind::config);
}

TEST(Settings, TrainConfigEchoesDefaults) {
  const auto t = train_config(KeyValueConfig{}, false);
  EXPECT_EQ(t.lambda, 0.1);
  EXPECT_EQ(t.tau0, 10.0);
  EXPECT_EQ(t.anneal_rate, 1e-4);
  EXPECT_EQ(train_config(KeyValueConfig{}, true).max_steps, 50);
}

TEST(Settings, MaxLenShorterThanCaptionsIsRejected) {
  Settings s;
  set_override(s, "max_len", "16");
  EXPECT_EQ(kind_of([&] { model_config(s.config, scene_spec(s.config)); }), ErrorKind::config);
}

TEST(GenData, MissingRequiredKeyNamesIt) {
  Settings s;
  s.root = scratch("missing");
  set_override(s, "train_size", "3");
  try {
    gen_data(s);
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("pretrain_size"), std::string::npos) << e.what();
  }
}

TEST(GenData, CountsMatchAndRerunsAreByteIdentical) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  gen_data(tiny_settings(a));
  gen_data(tiny_settings(b));
  const int sizes[] = {24, 12, 6, 6, 5};
  for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
    const auto id = static_cast<SplitId>(i);
    EXPECT_EQ(read_split(paths::split(a, id)).split.size(), static_cast<std::size_t>(sizes[i])) << kSplitNames[i];
    EXPECT_EQ(sha256_file(paths::split(a, id)), sha256_file(paths::split(b, id)));
  }
  EXPECT_EQ(sha256_file(paths::vocab(a)), sha256_file(paths::vocab(b)));
  EXPECT_EQ(sha256_file(paths::manifest(a, "gen-data")), sha256_file(paths::manifest(b, "gen-data")));
}

TEST(Pipeline, StagesRunAndTamperingIsDetected) {
  const auto root = scratch("stages");
  auto s = tiny_settings(root);
  s.smoke = true;
  gen_data(s);
  pretrain(s);
  train_judges(s);
  train_xbm(s);
  eval(s);
  explain(s, "test", 1);
  intervene(s);
  const auto run = paths::run_dir(root, "xbm");
  for (const char* f : {"xbm.ckpt", "metrics.tsv", "report.tsv", "intervention.tsv", "manifest.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_TRUE(fs::exists(run / "explain" / "test_1" / "report.txt"));

  std::ifstream metrics(run / "metrics.tsv");
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "epoch\tL_cls\tR_int\ttotal\tval_acc\ttau");

  { std::ofstream(paths::judges(root), std::ios::app) << "x"; }
  EXPECT_EQ(kind_of([&] { eval(s); }), ErrorKind::checksum);
  EXPECT_EQ(kind_of([&] { explain(s, "test", 99); }), ErrorKind::config);
}

TEST(Pipeline, MissingUpstreamArtifactIsADataError) {
  auto s = tiny_settings(scratch("nodata"));
  EXPECT_EQ(kind_of([&] { pretrain(s); }), ErrorKind::data);
}

TEST(Pipeline, DataFromADifferentSceneIsRejected) {
  const auto root = scratch("spec");
  gen_data(tiny_settings(root));
  auto s = tiny_settings(root);
  set_override(s, "colors", "red, green, blue");
  EXPECT_EQ(kind_of([&] { pretrain(s); }), ErrorKind::config);
}

TEST(Bundle, RoundTripPreservesPredictions) {
  nn::ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.depth = 1;
  c.mlp_hidden = 16;
  c.image_size = 16;
  train::Captioner teacher(c, 1);
  train::XbmModel m(teacher, nn::ClassifierMode::multimodal, c.num_classes, 2);
  const auto path = scratch("bundle") / "b.ckpt";
  save_bundle(m, path);
  auto r = load_bundle(path);
  const auto pa = m.classifier_params(), pb = r.classifier_params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(std::ranges::equal(pa[i]->value.data(), pb[i]->value.data()));
  const auto sa = m.student.params(), sb = r.student.params();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_TRUE(std::ranges::equal(sa[i]->value.data(), sb[i]->value.data()));
}

TEST(Ablation, RowSetAndDerivedSettings) {
  train::TrainConfig base;
  const auto rows = ablation_rows(base);
  std::vector<std::string> labels;
  for (const auto& r : rows) labels.push_back(r.label);
  const std::vector<std::string> want{"frozen",      "lambda_0",    "lambda_0.01",   "lambda_0.1",
                                      "lambda_1",    "tau1_anneal", "tau1_const",    "tau10_anneal",
                                      "tau10_const", "tau100_anneal", "tau100_const", "l2sp"};
  EXPECT_EQ(labels, want);
  EXPECT_TRUE(rows[0].config.freeze_captioner);
  EXPECT_EQ(rows[1].config.lambda, 0.0);
  EXPECT_EQ(rows[11].config.regularizer, train::Regularizer::l2sp);
  EXPECT_EQ(rows[3].config.to_text(), rows[7].config.to_text());
  EXPECT_FALSE(rows[8].config.anneal);
}

}  // namespace
}  // namespace xbm::pipeline
