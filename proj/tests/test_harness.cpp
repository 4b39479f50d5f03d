#include "lady/harness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace lady;
using namespace lady::harness;
using lady::testing::max_abs_diff;
using lady::testing::random_tokens;

TEST(SoftmaxAttention, SingleKeyReturnsItsValue)
{
  const auto p = SoftmaxParams<double>::random(4, 1);
  const Tokens<double> q = random_tokens<double>(5, 4, 2);
  const Tokens<double> kv = random_tokens<double>(1, 4, 3);
  const auto out = softmax_cross_attention(q, kv, p);
  const Mat<double> v = kv * p.W_v;
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_LE(max_abs_diff(out.row(i), v.row(0)), 1e-14);
}

TEST(SoftmaxAttention, IdenticalKeysIndependentOfCount)
{
  const auto p = SoftmaxParams<double>::random(4, 4);
  const Tokens<double> q = random_tokens<double>(3, 4, 5);
  const Tokens<double> row = random_tokens<double>(1, 4, 6);
  const auto one = softmax_cross_attention(q, row, p);
  const auto many = softmax_cross_attention<double>(q, row.replicate(9, 1), p);
  EXPECT_LE(max_abs_diff(one, many), 1e-14);
}

TEST(SoftmaxAttention, TwoDimensionalHandCase)
{
  SoftmaxParams<double> p;
  p.W_q = (Mat<double>(2, 2) << 1, 0.5, 0, 1).finished();
  p.W_k = (Mat<double>(2, 2) << 2, 0, 0, 1).finished();
  p.W_v = (Mat<double>(2, 2) << 1, 1, -1, 0).finished();
  const Tokens<double> q = (Tokens<double>(1, 2) << 1, -1).finished();
  const Tokens<double> kv = (Tokens<double>(2, 2) << 1, 0, 0, 1).finished();
  // q W_q = (1, -0.5); keys (2, 0) and (0, 1); scores 2/sqrt2 and -0.5/sqrt2.
  const double s0 = 2 / std::sqrt(2.0), s1 = -0.5 / std::sqrt(2.0);
  const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double a1 = 1 - a0;
  // Values (1, 1) and (-1, 0).
  const auto out = softmax_cross_attention(q, kv, p);
  EXPECT_NEAR(out(0, 0), a0 * 1 + a1 * -1, 1e-14);
  EXPECT_NEAR(out(0, 1), a0 * 1, 1e-14);
}

TEST(SoftmaxAttention, Errors)
{
  const auto p = SoftmaxParams<double>::identity(4);
  EXPECT_THROW(softmax_cross_attention(random_tokens<double>(2, 3, 1), random_tokens<double>(2, 4, 1), p), DimensionError);
  EXPECT_THROW(softmax_cross_attention(random_tokens<double>(2, 4, 1), Tokens<double>(0, 4), p), ContractViolation);
}

TEST(SyntheticFrames, DeterministicWithDrift)
{
  const fusion::FusionConfig cfg;
  const auto a = gen_synthetic_frames<float>(cfg, 12, 7, 0.2);
  const auto b = gen_synthetic_frames<float>(cfg, 12, 7, 0.2);
  for (std::size_t t = 0; t < 12; ++t) {
    EXPECT_EQ(a[t].camera, b[t].camera);
    EXPECT_EQ(a[t].lidar, b[t].lidar);
    EXPECT_EQ(a[t].t, static_cast<std::int64_t>(t));
  }
  // 32 x 64 standard normals per frame: the mean of a frame difference has sigma sqrt(2 / 2048).
  const auto n = static_cast<double>(cfg.frame_tokens() * cfg.d);
  const double shift = (a[11].camera.cast<double>().sum() + a[11].lidar.cast<double>().sum() -
                        a[0].camera.cast<double>().sum() - a[0].lidar.cast<double>().sum()) / n;
  EXPECT_NEAR(shift, 0.2 * 11, 3 * std::sqrt(2.0 / n));

  const auto flat = gen_synthetic_frames<double>(cfg, 2, 8, 0.0);
  const double m = (flat[1].camera.sum() - flat[0].camera.sum()) / static_cast<double>(flat[0].camera.size());
  EXPECT_NEAR(m, 0.0, 3 * std::sqrt(2.0 / static_cast<double>(flat[0].camera.size())));
  EXPECT_NE(flat[0].camera, flat[1].camera);
}

TEST(Generators, TrajectoriesAndScenes)
{
  const auto trajs = gen_trajectories(50, 8, 3);
  ASSERT_EQ(trajs.size(), 50u);
  for (const auto & t : trajs) {
    EXPECT_EQ(t.size(), 8u);
    EXPECT_NO_THROW(t.validate());
  }
  const auto c = gen_scene_case(4);
  EXPECT_NO_THROW(c.scene.validate());
  EXPECT_EQ(scene_to_json(gen_scene_case(4).scene), scene_to_json(c.scene));
}

TEST(Bench, LinearBytesConstantAndCsv)
{
  BenchConfig cfg;
  cfg.fusion.d = 16;
  cfg.fusion.camera_tokens = 4;
  cfg.fusion.lidar_tokens = 4;
  cfg.fusion.grid_h = 2;
  cfg.fusion.grid_w = 2;
  cfg.trials = 3;
  const auto recs = run_scaling_bench({1, 4, 16}, {BenchMode::linear, BenchMode::softmax}, cfg);
  ASSERT_EQ(recs.size(), 6u);
  std::size_t linear_bytes = 0;
  for (const auto & r : recs) {
    EXPECT_GT(r.latency_ms, 0.0);
    EXPECT_GT(r.wall_ms, 0.0);
    EXPECT_LE(r.min_ms, r.latency_ms);
    EXPECT_GE(r.max_ms, r.latency_ms);
    if (r.mode == BenchMode::linear) {
      if (linear_bytes == 0) linear_bytes = r.state_bytes;
      EXPECT_EQ(r.state_bytes, linear_bytes);
    }
  }
  EXPECT_GT(recs[5].state_bytes, recs[1].state_bytes);

  std::ostringstream os;
  write_bench_csv(os, recs);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "frames,mode,latency_ms,state_bytes,wall_ms");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
    ++rows;
  }
  EXPECT_EQ(rows, 6u);
}

TEST(Suites, PassAtSmallSize)
{
  for (const auto & r :
       {chunk_equivalence_suite(24, 1, true), chunk_equivalence_suite(24, 1, false), jacobian_suite(1),
        streaming_suite(1, 4), lica_causality_suite(10, 1), collision_oracle_suite(40, 1)}) {
    EXPECT_TRUE(r.passed()) << r.name << " max error " << r.max_error;
    EXPECT_GT(r.cases, 0u);
  }
}

TEST(Suites, TableIsDeterministic)
{
  const std::vector<SuiteResult> rs{lica_causality_suite(5, 2), collision_oracle_suite(10, 2)};
  std::ostringstream a, b;
  print_suites(a, rs);
  print_suites(b, {lica_causality_suite(5, 2), collision_oracle_suite(10, 2)});
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("PASS"), std::string::npos);
}
