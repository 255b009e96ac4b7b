#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xbm/interpret/interpret.hpp"
#include "xbm/metrics/judges.hpp"
#include "xbm/util/config.hpp"

namespace xbm::pipeline {

/// Every key any command accepts. Unknown keys are rejected when loading.
const std::set<std::string>& accepted_keys();

/// Shared state for one command invocation.
struct Settings {
  KeyValueConfig config;
  std::filesystem::path root;  // workspace: data/, teacher.ckpt, judges.ckpt, runs/, ablation/
  bool smoke = false;          // caps every training stage at 50 optimizer steps
  bool force = false;          // skip checksum verification
  std::function<void(const std::string&)> log;

  void say(const std::string& line) const {
    if (log) log(line);
  }
};

Settings load_settings(const std::string& config_path, const std::filesystem::path& root);
/// Applies a `key = value` override, rejecting unknown keys.
void set_override(Settings& s, const std::string& key, const std::string& value);

SceneSpec scene_spec(const KeyValueConfig& c);
nn::ModelConfig model_config(const KeyValueConfig& c, const SceneSpec& spec);
train::PretrainConfig pretrain_config(const KeyValueConfig& c, bool smoke);
metrics::JudgeConfig judge_config(const KeyValueConfig& c, bool smoke);
train::TrainConfig train_config(const KeyValueConfig& c, bool smoke);

namespace paths {
std::filesystem::path split(const std::filesystem::path& root, SplitId id);
std::filesystem::path vocab(const std::filesystem::path& root);
std::filesystem::path teacher(const std::filesystem::path& root);
std::filesystem::path judges(const std::filesystem::path& root);
std::filesystem::path manifest(const std::filesystem::path& root, const std::string& command);
std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& run);
}  // namespace paths

/// Student/teacher/classifier bundle in one checkpoint.
void save_bundle(train::XbmModel& model, const std::filesystem::path& path);
train::XbmModel load_bundle(const std::filesystem::path& path);

// Commands. Each writes its outputs plus a JSON run manifest under the
// workspace and throws xbm::Error on failure.
void gen_data(const Settings& s);
void pretrain(const Settings& s);
void train_judges(const Settings& s);
void train_xbm(const Settings& s);
void eval(const Settings& s);
void explain(const Settings& s, const std::string& split, int index);
void intervene(const Settings& s);
void ablate(const Settings& s);

/// One ablation row: label plus the training config changes it applies.
struct AblationRow {
  std::string label;
  train::TrainConfig config;
};

/// frozen, lambda in {0, 0.01, 0.1, 1}, tau0 in {1, 10, 100} x anneal
/// on/off, l2sp; all derived from `base`.
std::vector<AblationRow> ablation_rows(const train::TrainConfig& base);

}  // namespace xbm::pipeline
