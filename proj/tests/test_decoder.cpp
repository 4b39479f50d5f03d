#include "lady/decoder.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

using namespace lady;
using namespace lady::decoder;
using lady::testing::max_abs_diff;
using lady::testing::random_tokens;

namespace
{

constexpr double kPi = std::numbers::pi;

Trajectory make_traj(std::size_t n, double vx, double vy, double yaw_rate)
{
  Trajectory t;
  for (std::size_t i = 1; i <= n; ++i) {
    const double s = 0.5 * static_cast<double>(i);
    t.waypoints.push_back({vx * s, vy * s, wrap_angle(yaw_rate * s)});
  }
  return t;
}

std::vector<Trajectory> random_trajs(std::size_t count, std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> v(0.0, 12.0), lat(-2.0, 2.0), yaw(-0.3, 0.3);
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_traj(n, v(rng), lat(rng), yaw(rng)));
  return out;
}

fusion::BevBundle<double> random_bev(std::size_t d, std::uint64_t seed)
{
  const auto params = fusion::BevParams<double>::random(d, 2, 2, seed);
  return fusion::assemble_bev(random_tokens<double>(4, static_cast<Eigen::Index>(d), seed + 1), {5.0, 0.2, fusion::Command::follow}, params);
}

DecoderConfig small_config()
{
  DecoderConfig cfg;
  cfg.d = 8;
  cfg.n_heads = 2;
  cfg.n_agents = 3;
  return cfg;
}

}  // namespace

TEST(WrapAngle, Range)
{
  EXPECT_DOUBLE_EQ(wrap_angle(0.5), 0.5);
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(7.0), 7.0 - 2 * kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-7.0), -7.0 + 2 * kPi, 1e-12);
  EXPECT_THROW(wrap_angle(std::nan("")), NumericError);
}

TEST(Trajectory, FlattenRoundTripAndValidation)
{
  const auto t = make_traj(8, 4.0, 0.5, 0.1);
  EXPECT_EQ(Trajectory::from_flat(t.flatten()), t);
  EXPECT_THROW(Trajectory{}.validate(), ContractViolation);
  auto bad = t;
  bad.waypoints[2].theta = 4.0;
  EXPECT_THROW(bad.validate(), ContractViolation);
  bad.waypoints[2].theta = 0;
  bad.waypoints[3].x = INFINITY;
  EXPECT_THROW(bad.validate(), NumericError);
}

TEST(AnchorSet, Validation)
{
  AnchorSet set{{make_traj(8, 1, 0, 0), make_traj(8, 2, 0, 0)}};
  EXPECT_NO_THROW(set.validate());
  set.anchors.push_back(make_traj(8, 1, 0, 0));
  EXPECT_THROW(set.validate(), ContractViolation);
  set.anchors.back() = make_traj(6, 3, 0, 0);
  EXPECT_THROW(set.validate(), DimensionError);
  EXPECT_THROW(AnchorSet{}.validate(), ContractViolation);
}

TEST(NoiseSchedule, MonotoneAndTruncated)
{
  const NoiseSchedule s;
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  double prev_beta = 0, prev_ab = 1;
  double ab_ref = 1;
  for (std::size_t t = 1; t <= 50; ++t) {
    const double b = s.beta(t);
    EXPECT_GT(b, 0);
    EXPECT_LT(b, 1);
    EXPECT_GE(b, prev_beta);
    // Linear ramp 1e-4 -> 2e-2 across 1000 steps.
    EXPECT_NEAR(b, 1e-4 + (2e-2 - 1e-4) * static_cast<double>(t - 1) / 999.0, 1e-15);
    ab_ref *= 1 - b;
    EXPECT_LT(s.alpha_bar(t), prev_ab);
    EXPECT_NEAR(s.alpha_bar(t), ab_ref, 1e-14);
    prev_beta = b;
    prev_ab = s.alpha_bar(t);
  }
  EXPECT_GT(s.alpha_bar(50), 0.96);
  EXPECT_THROW(s.alpha_bar(51), ContractViolation);
  EXPECT_THROW(s.beta(51), ContractViolation);
  EXPECT_THROW(s.beta(0), ContractViolation);
  NoiseSchedule bad;
  bad.beta_end = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.truncate_at = 1001;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ClusterAnchors, DatasetEqualsK)
{
  const auto data = random_trajs(6, 8, 1);
  const auto set = cluster_anchors(data, 6, 3);
  ASSERT_EQ(set.size(), 6u);
  std::set<std::vector<double>> want, got;
  for (const auto & t : data) {
    const auto f = t.flatten();
    want.insert({f.data(), f.data() + f.size()});
  }
  for (const auto & t : set.anchors) {
    const auto f = t.flatten();
    got.insert({f.data(), f.data() + f.size()});
  }
  EXPECT_EQ(got, want);
}

TEST(ClusterAnchors, SingleClusterIsMean)
{
  const auto data = random_trajs(20, 8, 2);
  const auto set = cluster_anchors(data, 1, 4);
  Vec<double> mean = Vec<double>::Zero(24);
  for (const auto & t : data) mean += t.flatten();
  mean /= 20.0;
  EXPECT_LE(max_abs_diff(set.anchors[0].flatten(), mean), 1e-12);
}

TEST(ClusterAnchors, SeparatedBundles)
{
  // Symmetric +-jitter around two centres, so each bundle mean is exactly its centre.
  const auto a = make_traj(8, 10.0, 0.0, 0.0);
  const auto b = make_traj(8, 2.0, 3.0, 0.2);
  std::vector<Trajectory> data;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (const auto * centre : {&a, &b}) {
    for (int i = 0; i < 15; ++i) {
      Vec<double> e(24);
      for (auto & v : e) v = jitter(rng);
      data.push_back(Trajectory::from_flat(centre->flatten() + e));
      data.push_back(Trajectory::from_flat(centre->flatten() - e));
    }
  }
  const auto set = cluster_anchors(data, 2, 11);
  const bool a_first = set.anchors[0].waypoints[7].x > set.anchors[1].waypoints[7].x;
  EXPECT_LE(max_abs_diff(set.anchors[a_first ? 0 : 1].flatten(), a.flatten()), 1e-6);
  EXPECT_LE(max_abs_diff(set.anchors[a_first ? 1 : 0].flatten(), b.flatten()), 1e-6);
}

TEST(ClusterAnchors, ErrorsAndDeterminism)
{
  const auto data = random_trajs(30, 8, 6);
  EXPECT_THROW(cluster_anchors(std::span(data).first(3), 4, 1), InsufficientDataError);
  std::vector<Trajectory> dup(5, data[0]);
  EXPECT_THROW(cluster_anchors(dup, 2, 1), InsufficientDataError);
  EXPECT_THROW(cluster_anchors(data, 0, 1), ConfigError);
  const auto x = cluster_anchors(data, 5, 9);
  const auto y = cluster_anchors(data, 5, 9);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.anchors[i], y.anchors[i]);
  EXPECT_NO_THROW(x.validate());
}

TEST(CorruptAnchors, StepZeroIsIdentity)
{
  const auto data = random_trajs(4, 8, 7);
  const auto out = corrupt_anchors(data, NoiseSchedule{}, 0, 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], data[i]);
}

TEST(CorruptAnchors, TruncationBoundary)
{
  const auto data = random_trajs(2, 8, 8);
  EXPECT_NO_THROW(corrupt_anchors(data, NoiseSchedule{}, 50, 1));
  EXPECT_THROW(corrupt_anchors(data, NoiseSchedule{}, 51, 1), ContractViolation);
}

TEST(CorruptAnchors, MonteCarloVariance)
{
  const NoiseSchedule s;
  const auto anchor = make_traj(8, 6.0, 1.0, 0.05);
  const std::vector<Trajectory> one{anchor};
  for (std::size_t step : {10u, 50u}) {
    const double ab = s.alpha_bar(step);
    double sum = 0, sq = 0;
    const int n = 10000;
    for (int seed = 0; seed < n; ++seed) {
      const auto x = corrupt_anchors(one, s, step, static_cast<std::uint64_t>(seed));
      const double r = x[0].waypoints[3].x - std::sqrt(ab) * anchor.waypoints[3].x;
      sum += r;
      sq += r * r;
    }
    const double var = sq / n - (sum / n) * (sum / n);
    EXPECT_NEAR(var / (1 - ab), 1.0, 0.05) << step;
  }
}

TEST(DecoderLayer, ZeroProjectionKeepsTrajectories)
{
  auto params = DecoderParams::random(small_config(), 1);
  auto & layer = params.layers[0];
  layer.out.setZero();
  layer.out_bias.setZero();
  const auto bev = random_bev(8, 2);
  const auto q = agent_queries(bev, params);
  const auto noisy = random_trajs(3, 8, 3);
  const auto out = decoder_layer(noisy, bev, q, layer);
  ASSERT_EQ(out.trajectories.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.trajectories[i], noisy[i]);
  EXPECT_EQ(out.features.rows(), 3);
}

TEST(DecoderLayer, MatchesCompositionOracle)
{
  const auto params = DecoderParams::random(small_config(), 4);
  const auto & lp = params.layers[1];
  const auto bev = random_bev(8, 5);
  const auto q = agent_queries(bev, params);
  const auto noisy = random_trajs(2, 8, 6);
  const auto out = decoder_layer(noisy, bev, q, lp);

  // Step-by-step: embed, cross-attend BEV, cross-attend agents, FFN, deltas.
  Tokens<double> h(2, 8);
  for (int m = 0; m < 2; ++m) {
    const auto f = noisy[static_cast<std::size_t>(m)].flatten();
    for (int c = 0; c < 8; ++c) {
      double acc = lp.embed_bias[c];
      for (int r = 0; r < 24; ++r) acc += f[r] * lp.embed(r, c);
      h(m, c) = acc;
    }
  }
  const auto bev_enc = lica::encode_query(lica::QuerySet<double>{h}, lp.bev_lica.encoder);
  h += lica::cross_attend(bev.tokens(), bev_enc, lp.bev_lica.cross).tokens;
  const auto agent_enc = lica::encode_query(lica::QuerySet<double>{h}, lp.agent_lica.encoder);
  h += lica::cross_attend(q.tokens, agent_enc, lp.agent_lica.cross).tokens;
  const auto f = static_cast<int>(lp.ffn_in.cols());
  Tokens<double> h3 = h;
  for (int m = 0; m < 2; ++m) {
    std::vector<double> hidden(static_cast<std::size_t>(f));
    for (int j = 0; j < f; ++j) {
      double acc = lp.ffn_in_bias[j];
      for (int c = 0; c < 8; ++c) acc += h(m, c) * lp.ffn_in(c, j);
      hidden[static_cast<std::size_t>(j)] = std::max(acc, 0.0);
    }
    for (int c = 0; c < 8; ++c) {
      double acc = lp.ffn_out_bias[c];
      for (int j = 0; j < f; ++j) acc += hidden[static_cast<std::size_t>(j)] * lp.ffn_out(j, c);
      h3(m, c) += acc;
    }
  }
  EXPECT_LE(max_abs_diff(out.features, h3), 1e-12);
  for (int m = 0; m < 2; ++m) {
    const auto flat = noisy[static_cast<std::size_t>(m)].flatten();
    for (int k = 0; k < 24; ++k) {
      double delta = lp.out_bias[k];
      for (int c = 0; c < 8; ++c) delta += h3(m, c) * lp.out(c, k);
      const auto & w = out.trajectories[static_cast<std::size_t>(m)].waypoints[static_cast<std::size_t>(k / 3)];
      const double got = k % 3 == 0 ? w.x : k % 3 == 1 ? w.y : w.theta;
      const double want = k % 3 == 2 ? wrap_angle(flat[k] + delta) : flat[k] + delta;
      EXPECT_NEAR(got, want, 1e-12);
    }
  }
}

TEST(DecoderLayer, HorizonMismatch)
{
  const auto params = DecoderParams::random(small_config(), 7);
  const auto bev = random_bev(8, 8);
  const auto q = agent_queries(bev, params);
  EXPECT_THROW(decoder_layer(random_trajs(2, 6, 1), bev, q, params.layers[0]), DimensionError);
  EXPECT_THROW(decoder_layer({}, bev, q, params.layers[0]), ContractViolation);
}

TEST(Decode, Timesteps)
{
  EXPECT_EQ(denoise_timesteps(NoiseSchedule{}, 2), (std::vector<std::size_t>{50, 25, 0}));
  EXPECT_EQ(denoise_timesteps(NoiseSchedule{}, 1), (std::vector<std::size_t>{50, 0}));
  EXPECT_THROW(denoise_timesteps(NoiseSchedule{}, 0), ConfigError);
}

TEST(Decode, ShapesRangesDeterminism)
{
  const auto params = DecoderParams::random(small_config(), 9);
  const auto bev = random_bev(8, 10);
  const auto q = agent_queries(bev, params);
  const AnchorSet anchors{random_trajs(12, 8, 11)};
  const auto a = decode(anchors, bev, q, params, 2, 42);
  const auto b = decode(anchors, bev, q, params, 2, 42);
  ASSERT_EQ(a.trajectories.size(), 12u);
  ASSERT_EQ(a.confidence.size(), 12u);
  for (std::size_t m = 0; m < 12; ++m) {
    EXPECT_EQ(a.trajectories[m].size(), 8u);
    EXPECT_EQ(a.trajectories[m], b.trajectories[m]);
    EXPECT_GE(a.on_road[m], 0.0);
    EXPECT_LE(a.on_road[m], 1.0);
    EXPECT_GE(a.on_route[m], 0.0);
    EXPECT_LE(a.on_route[m], 1.0);
    EXPECT_TRUE(std::isfinite(a.confidence[m]));
    for (const auto & w : a.trajectories[m].waypoints) {
      EXPECT_GT(w.theta, -kPi);
      EXPECT_LE(w.theta, kPi);
    }
  }
  EXPECT_EQ(a.confidence, b.confidence);
  ASSERT_EQ(a.agent_futures.size(), 3u);
  EXPECT_EQ(a.agent_futures[0].rows(), 8);
  EXPECT_EQ(a.agent_futures[0].cols(), 2);
  EXPECT_THROW(decode(anchors, bev, q, params, 0, 42), ConfigError);
}

TEST(Decode, ModeSubsampleAndStochastic)
{
  auto cfg = small_config();
  cfg.modes = 5;
  auto params = DecoderParams::random(cfg, 12);
  const auto bev = random_bev(8, 13);
  const auto q = agent_queries(bev, params);
  const AnchorSet anchors{random_trajs(12, 8, 14)};
  const auto out = decode(anchors, bev, q, params, 2, 1);
  EXPECT_EQ(out.trajectories.size(), 5u);
  EXPECT_TRUE(std::is_sorted(out.anchor_index.begin(), out.anchor_index.end()));
  params.cfg.modes = 13;
  EXPECT_THROW(decode(anchors, bev, q, params, 2, 1), ConfigError);

  params.cfg.modes = 0;
  const auto det = decode(anchors, bev, q, params, 2, 3);
  params.cfg.stochastic = true;
  const auto s1 = decode(anchors, bev, q, params, 2, 3);
  const auto s2 = decode(anchors, bev, q, params, 2, 3);
  EXPECT_EQ(s1.trajectories, s2.trajectories);
  EXPECT_NE(s1.trajectories, det.trajectories);
}

TEST(SelectBest, Examples)
{
  DecoderOutput out;
  out.trajectories = random_trajs(3, 8, 15);
  out.confidence = {0.2, 0.9, 0.5};
  EXPECT_EQ(select_best(out).second, 1u);
  EXPECT_EQ(select_best(out).first, out.trajectories[1]);
  out.trajectories.resize(2);
  out.confidence = {0.5, 0.5};
  EXPECT_EQ(select_best(out).second, 0u);
  EXPECT_THROW(select_best(DecoderOutput{}), ContractViolation);
}

TEST(SelectBest, InvariantUnderMonotoneMaps)
{
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> len(1, 20);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> c(static_cast<std::size_t>(len(rng)));
    for (auto & v : c) v = 0.1 * level(rng);  // coarse levels force ties
    const auto i = argmax_first(c);
    std::size_t ref = 0;
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c[j] > c[ref]) ref = j;
    }
    ASSERT_EQ(i, ref);
    std::vector<double> e(c), cube(c), shifted(c);
    for (std::size_t j = 0; j < c.size(); ++j) {
      e[j] = std::exp(3 * c[j]);
      cube[j] = c[j] * c[j] * c[j] - 7;
      shifted[j] = 0.01 * c[j] + 100;
    }
    EXPECT_EQ(argmax_first(e), i);
    EXPECT_EQ(argmax_first(cube), i);
    EXPECT_EQ(argmax_first(shifted), i);
  }
}

TEST(DecoderIo, RoundTrip)
{
  const auto dir = std::filesystem::temp_directory_path();
  const auto t = make_traj(8, 3, 1, -0.2);
  save_trajectory(t, dir / "lady_traj.json");
  EXPECT_EQ(load_trajectory(dir / "lady_traj.json"), t);
  const AnchorSet set{random_trajs(4, 8, 17)};
  save_anchors(set, dir / "lady_anchors.json");
  const auto back = load_anchors(dir / "lady_anchors.json");
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.anchors[i], set.anchors[i]);
  std::filesystem::remove(dir / "lady_traj.json");
  std::filesystem::remove(dir / "lady_anchors.json");

  EXPECT_THROW(trajectory_from_json(nlohmann::json::parse(R"({"waypoints": [[1, 2]]})")), FormatError);
  EXPECT_THROW(trajectory_from_json(nlohmann::json::parse(R"({"dt": 0.5})")), FormatError);
  EXPECT_THROW(load_trajectory(dir / "lady_missing_file.json"), IoError);
}
