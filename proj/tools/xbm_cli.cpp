#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xbm/xbm.h"

namespace {

void print_line(const char* line, void*) { std::fprintf(stdout, "%s\n", line); }

int report(xbm_session* s, int rc) {
  if (rc != XBM_OK) std::fprintf(stderr, "error: %s\n", xbm_session_last_error(s));
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explanation bottleneck model toolkit"};
  app.set_version_flag("--version", std::string(xbm_version()));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool smoke = false;
  bool force = false;
  bool quiet = false;
  app.add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", out, "workspace directory (default $XBM_OUTPUT_ROOT)");
  app.add_option("--seed", seed, "training seed override");
  app.add_option("--set", overrides, "key=value override (repeatable)");
  app.add_flag("--smoke", smoke, "cap every training stage at 50 steps");
  app.add_flag("--force", force, "skip checksum verification of inputs");
  app.add_flag("--quiet", quiet, "suppress progress lines");

  std::string split = "test";
  int index = 0;
  auto* gen = app.add_subcommand("gen-data", "generate all dataset splits");
  auto* pre = app.add_subcommand("pretrain", "pretrain the captioner");
  auto* judges = app.add_subcommand("train-judges", "train the dual encoder and reference LM");
  auto* trainx = app.add_subcommand("train-xbm", "train an explanation bottleneck model");
  auto* ev = app.add_subcommand("eval", "evaluate a trained run on the test split");
  auto* ex = app.add_subcommand("explain", "explain one example");
  ex->add_option("--split", split, "split name");
  ex->add_option("--index", index, "example index")->check(CLI::NonNegativeNumber);
  auto* iv = app.add_subcommand("intervene", "replace explanations and measure accuracy");
  auto* ab = app.add_subcommand("ablate", "run the ablation grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: %s\n", e.what());
    return XBM_ERR_CONFIG;
  }

  if (out.empty()) {
    const char* env = std::getenv("XBM_OUTPUT_ROOT");
    if (!env || !*env) {
      std::fprintf(stderr, "error: no output directory (pass --out or set XBM_OUTPUT_ROOT)\n");
      return XBM_ERR_CONFIG;
    }
    out = env;
  }

  xbm_session* s = nullptr;
  if (int rc = xbm_session_create(config.c_str(), out.c_str(), &s); rc != XBM_OK) {
    std::fprintf(stderr, "error: %s\n", xbm_last_global_error());
    return rc;
  }
  struct Guard {
    xbm_session* s;
    ~Guard() { xbm_session_destroy(s); }
  } guard{s};

  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return XBM_ERR_CONFIG;
    }
    if (int rc = xbm_session_set(s, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) return report(s, rc);
  }
  if (seed >= 0)
    if (int rc = xbm_session_set(s, "seed", std::to_string(seed).c_str())) return report(s, rc);
  xbm_session_set_smoke(s, smoke);
  xbm_session_set_force(s, force);
  if (!quiet) xbm_session_set_log(s, print_line, nullptr);

  int rc = XBM_OK;
  if (*gen) rc = xbm_gen_data(s);
  else if (*pre) rc = xbm_pretrain(s);
  else if (*judges) rc = xbm_train_judges(s);
  else if (*trainx) rc = xbm_train_xbm(s);
  else if (*ev) rc = xbm_eval(s);
  else if (*ex) rc = xbm_explain(s, split.c_str(), index);
  else if (*iv) rc = xbm_intervene(s);
  else if (*ab) rc = xbm_ablate(s);
  return report(s, rc);
}
