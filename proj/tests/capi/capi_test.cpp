#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "xbm/xbm.h"

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("xbm_capi_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(CApi, StatusNamesMatchExitCodes) {
  EXPECT_STREQ(xbm_status_name(XBM_OK), "ok");
  EXPECT_STREQ(xbm_status_name(XBM_ERR_CONFIG), "config");
  EXPECT_STREQ(xbm_status_name(XBM_ERR_DATA), "data");
  EXPECT_STREQ(xbm_status_name(XBM_ERR_NUMERIC), "numeric");
  EXPECT_STREQ(xbm_status_name(XBM_ERR_CHECKSUM), "checksum");
  EXPECT_EQ(XBM_ERR_CONFIG, 2);
  EXPECT_EQ(XBM_ERR_CHECKSUM, 5);
}

TEST(CApi, CreateRequiresOutputRootAndReadableConfig) {
  xbm_session* s = reinterpret_cast<xbm_session*>(0x1);
  EXPECT_EQ(xbm_session_create(nullptr, nullptr, &s), XBM_ERR_CONFIG);
  EXPECT_EQ(s, nullptr);
  EXPECT_NE(std::string(xbm_last_global_error()).size(), 0u);
  EXPECT_NE(xbm_session_create("/nonexistent/x.conf", "/tmp", &s), XBM_OK);
  EXPECT_EQ(s, nullptr);
}

TEST(CApi, NullSessionIsRejected) {
  EXPECT_EQ(xbm_gen_data(nullptr), XBM_ERR_CONFIG);
  EXPECT_EQ(xbm_session_set(nullptr, "a", "b"), XBM_ERR_CONFIG);
  xbm_session_destroy(nullptr);
}

TEST(CApi, UnknownKeyAndMissingKeyReportTheKey) {
  xbm_session* s = nullptr;
  ASSERT_EQ(xbm_session_create("", scratch("keys").c_str(), &s), XBM_OK);
  EXPECT_EQ(xbm_session_set(s, "no_such_key", "1"), XBM_ERR_CONFIG);
  EXPECT_NE(std::string(xbm_session_last_error(s)).find("no_such_key"), std::string::npos);
  EXPECT_EQ(xbm_gen_data(s), XBM_ERR_CONFIG);
  EXPECT_NE(std::string(xbm_session_last_error(s)).find("pretrain_size"), std::string::npos);
  xbm_session_destroy(s);
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

TEST(CApi, GenDataLogsAndClearsTheError) {
  const auto root = scratch("gen");
  xbm_session* s = nullptr;
  ASSERT_EQ(xbm_session_create(nullptr, root.c_str(), &s), XBM_OK);
  const std::pair<const char*, const char*> kv[] = {{"pretrain_size", "4"}, {"train_size", "3"},
                                                    {"val_size", "2"},      {"test_size", "2"},
                                                    {"intervention_size", "2"}, {"data_seed", "9"}};
  for (const auto& [k, v] : kv) ASSERT_EQ(xbm_session_set(s, k, v), XBM_OK);
  std::vector<std::string> lines;
  xbm_session_set_log(s, collect, &lines);
  EXPECT_EQ(xbm_gen_data(s), XBM_OK);
  EXPECT_STREQ(xbm_session_last_error(s), "");
  EXPECT_EQ(lines.size(), 5u);
  EXPECT_TRUE(fs::exists(root / "data" / "train.xbmd"));
  EXPECT_TRUE(fs::exists(root / "manifests" / "gen-data.json"));
  EXPECT_EQ(xbm_explain(s, "nonsense", 0), XBM_ERR_CONFIG);
  xbm_session_destroy(s);
}

}  // namespace
