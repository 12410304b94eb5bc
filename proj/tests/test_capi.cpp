// Uses only the public C header and the shared library.
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ecs/ecs.h"

namespace {

std::string tmp(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ecs_capi_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

template <class F>
std::string read_string(F f) {
  size_t needed = 0;
  EXPECT_EQ(f(nullptr, 0, &needed), ECS_ERR_BUFFER_TOO_SMALL);
  std::string s(needed, '\0');
  EXPECT_EQ(f(s.data(), s.size(), &needed), ECS_OK);
  s.resize(needed - 1);
  return s;
}

}  // namespace

TEST(CApi, StatusAndErrors) {
  EXPECT_STREQ(ecs_status_string(ECS_OK), "ok");
  EXPECT_EQ(ecs_network_create_lenet(0, nullptr), ECS_ERR_INVALID_ARGUMENT);
  EXPECT_STRNE(ecs_last_error(), "");
  ecs_network* net = nullptr;
  EXPECT_EQ(ecs_network_load("/nonexistent/x.ckpt", &net), ECS_ERR_IO);
  EXPECT_EQ(net, nullptr);
}

TEST(CApi, ConfigRoundTrip) {
  ecs_config* cfg = nullptr;
  ASSERT_EQ(ecs_config_create(&cfg), ECS_OK);
  EXPECT_EQ(ecs_config_set(cfg, "ga.population", "12"), ECS_OK);
  EXPECT_EQ(ecs_config_set(cfg, "ga.bogus", "1"), ECS_ERR_CONFIG);
  EXPECT_EQ(ecs_config_parse_text(cfg, "[fitness]\nlambda = 0.3\n"), ECS_OK);
  const std::string pop = read_string([&](char* b, size_t c, size_t* n) {
    return ecs_config_get(cfg, "ga.population", b, c, n);
  });
  EXPECT_EQ(pop, "12");
  const std::string text = read_string([&](char* b, size_t c, size_t* n) {
    return ecs_config_serialize(cfg, b, c, n);
  });
  EXPECT_NE(text.find("lambda = 0.3"), std::string::npos);
  EXPECT_EQ(ecs_config_set(cfg, "ga.s1", "0.5"), ECS_OK);
  EXPECT_EQ(ecs_config_validate(cfg), ECS_ERR_CONFIG);
  ecs_config_free(cfg);
}

TEST(CApi, NetworkIndividualAndRatios) {
  ecs_network* net = nullptr;
  ASSERT_EQ(ecs_network_create_lenet(1, &net), ECS_OK);
  size_t params = 0;
  ASSERT_EQ(ecs_network_parameter_count(net, &params), ECS_OK);
  // 430500 weights, 580 biases, batchnorm scale and shift on 570 channels.
  EXPECT_EQ(params, 432220u);

  const int counts[] = {9, 17, 84};
  ecs_individual* ind = nullptr;
  ASSERT_EQ(ecs_individual_keep_first(net, counts, 3, &ind), ECS_OK);
  double rc, rs, rf;
  ASSERT_EQ(ecs_ratios(net, ind, &rc, &rs, &rf), ECS_OK);
  EXPECT_NEAR(rc, 15.52, 0.005);
  EXPECT_NEAR(rs, 5.76, 0.005);

  ecs_network* compact = nullptr;
  ASSERT_EQ(ecs_individual_compact(net, ind, &compact), ECS_OK);
  std::vector<float> img(28 * 28, 0.5f), a(10), b(10);
  EXPECT_EQ(ecs_network_forward(compact, img.data(), 1, a.data(), 10), ECS_OK);
  EXPECT_EQ(ecs_network_forward(compact, img.data(), 1, b.data(), 9),
            ECS_ERR_BUFFER_TOO_SMALL);

  const std::string dir = tmp("net");
  ASSERT_EQ(ecs_network_save(compact, (dir + "/c.ckpt").c_str()), ECS_OK);
  ecs_network* loaded = nullptr;
  ASSERT_EQ(ecs_network_load((dir + "/c.ckpt").c_str(), &loaded), ECS_OK);
  EXPECT_EQ(ecs_network_forward(loaded, img.data(), 1, b.data(), 10), ECS_OK);
  EXPECT_EQ(a, b);

  ASSERT_EQ(ecs_individual_save(ind, (dir + "/m.individual").c_str()), ECS_OK);
  ecs_individual* back = nullptr;
  ASSERT_EQ(ecs_individual_load((dir + "/m.individual").c_str(), &back), ECS_OK);
  const std::string s1 = read_string([&](char* buf, size_t c, size_t* n) {
    return ecs_individual_to_string(ind, buf, c, n);
  });
  const std::string s2 = read_string([&](char* buf, size_t c, size_t* n) {
    return ecs_individual_to_string(back, buf, c, n);
  });
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1.size(), 570u + 2u);

  ecs_individual* bad = nullptr;
  EXPECT_EQ(ecs_individual_parse(net, "0101", &bad), ECS_ERR_LAYOUT);

  const std::string report = read_string([&](char* buf, size_t c, size_t* n) {
    return ecs_report_text(net, ind, buf, c, n);
  });
  EXPECT_NE(report.find("15.52"), std::string::npos);

  size_t written = 0;
  EXPECT_EQ(ecs_export_filters(net, 1, (dir + "/f").c_str(), &written), ECS_OK);
  EXPECT_EQ(written, 20u);

  ecs_individual_free(back);
  ecs_individual_free(ind);
  ecs_network_free(loaded);
  ecs_network_free(compact);
  ecs_network_free(net);
}

TEST(CApi, DatasetTrainAndError) {
  ecs_dataset* ds = nullptr;
  ASSERT_EQ(ecs_dataset_synthetic_blobs(10, 5, 28, 28, 1, 3, &ds), ECS_OK);
  size_t n;
  int h, w, c;
  ASSERT_EQ(ecs_dataset_info(ds, &n, &h, &w, &c), ECS_OK);
  EXPECT_EQ(n, 50u);
  EXPECT_EQ(h, 28);
  ecs_network* net = nullptr;
  ASSERT_EQ(ecs_network_create_lenet(2, &net), ECS_OK);
  double before, after;
  ASSERT_EQ(ecs_network_error(net, ds, &before), ECS_OK);
  ASSERT_EQ(ecs_network_train(net, ds, 5, 10, 0.05, 1), ECS_OK);
  ASSERT_EQ(ecs_network_error(net, ds, &after), ECS_OK);
  EXPECT_LT(after, before);
  EXPECT_EQ(ecs_network_train(net, ds, 1, 0, 0.05, 1), ECS_ERR_CONFIG);
  ecs_network_free(net);
  ecs_dataset_free(ds);
}

TEST(CApi, RunSurrogateCompress) {
  ecs_config* cfg = nullptr;
  ASSERT_EQ(ecs_config_create(&cfg), ECS_OK);
  const std::string out = tmp("run");
  ecs_config_set(cfg, "run.out", out.c_str());
  ecs_config_set(cfg, "fitness.mode", "surrogate");
  ecs_config_set(cfg, "ga.population", "10");
  ecs_config_set(cfg, "ga.iterations", "3");
  int lines = 0;
  const ecs_status st = ecs_run(
      cfg, "compress", [](const char*, void* u) { ++*static_cast<int*>(u); },
      &lines);
  EXPECT_EQ(st, ECS_OK) << ecs_last_error();
  EXPECT_GT(lines, 0);
  EXPECT_TRUE(std::filesystem::exists(out + "/evolution.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(out + "/best.individual"));
  EXPECT_EQ(ecs_run(cfg, "dance", nullptr, nullptr), ECS_ERR_INVALID_ARGUMENT);
  ecs_config_free(cfg);
}
