#pragma once

// Truncated-diffusion trajectory decoder. Anchors are corrupted at the
// truncation step and then denoised in a few deterministic steps; each step
// runs the cascaded decoder layers, which cross-attend the trajectory tokens
// to the BEV bundle and to the agent queries through LICA.

#include "lady/fusion.hpp"
#include "lady/lica.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace lady::decoder
{

/// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

struct Waypoint
{
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  bool operator==(const Waypoint &) const = default;
};

struct Trajectory
{
  double dt = 0.5;
  std::vector<Waypoint> waypoints;

  std::size_t size() const { return waypoints.size(); }
  void validate() const;

  /// [x_1, y_1, theta_1, x_2, ...]
  Vec<double> flatten() const;
  static Trajectory from_flat(const Vec<double> & flat, double dt = 0.5);

  bool operator==(const Trajectory &) const = default;
};

struct AnchorSet
{
  std::vector<Trajectory> anchors;

  std::size_t size() const { return anchors.size(); }
  std::size_t horizon() const { return anchors.empty() ? 0 : anchors.front().size(); }
  void validate() const;
};

struct NoiseSchedule
{
  std::size_t total_steps = 1000;
  std::size_t truncate_at = 50;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  void validate() const;
  /// beta_s for s in [1, truncate_at].
  double beta(std::size_t step) const;
  /// Cumulative product of (1 - beta) up to `step`; alpha_bar(0) = 1.
  double alpha_bar(std::size_t step) const;
};

/// k-means++ seeding followed by Lloyd iterations on flattened waypoints.
AnchorSet cluster_anchors(
  std::span<const Trajectory> dataset, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100);

/// x_step = sqrt(ab) x_0 + sqrt(1 - ab) eps with eps ~ N(0, 1) per coordinate; headings re-wrapped.
std::vector<Trajectory> corrupt_anchors(
  std::span<const Trajectory> anchors, const NoiseSchedule & sched, std::size_t step, std::uint64_t seed);

struct DecoderConfig
{
  std::size_t d = 64;
  std::size_t n_heads = 1;
  std::size_t horizon = 8;
  std::size_t n_layers = 2;
  std::size_t n_agents = 8;
  std::size_t ffn_dim = 0;  // 0 selects 2d
  std::size_t modes = 0;    // 0 keeps every anchor
  bool stochastic = false;
  NoiseSchedule schedule;

  std::size_t ffn() const { return ffn_dim == 0 ? 2 * d : ffn_dim; }
  void validate() const;
};

struct LayerParams
{
  Mat<double> embed;  // 3N x d
  Vec<double> embed_bias;
  lica::LicaParams<double> bev_lica;
  lica::LicaParams<double> agent_lica;
  Mat<double> ffn_in;  // d x f
  Vec<double> ffn_in_bias;
  Mat<double> ffn_out;  // f x d
  Vec<double> ffn_out_bias;
  Mat<double> out;  // d x 3N, maps features to waypoint deltas
  Vec<double> out_bias;
};

struct HeadParams
{
  Vec<double> confidence;
  double confidence_bias = 0.0;
  Vec<double> on_road;
  double on_road_bias = 0.0;
  Vec<double> on_route;
  double on_route_bias = 0.0;
  Mat<double> agent;  // d x 2N
  Vec<double> agent_bias;
};

struct DecoderParams
{
  DecoderConfig cfg;
  std::vector<LayerParams> layers;
  HeadParams heads;
  Tokens<double> agent_queries;  // n_agents x d learned tokens
  lica::LicaParams<double> agent_lica;

  static DecoderParams random(const DecoderConfig & cfg, std::uint64_t seed);
};

struct LayerOutput
{
  std::vector<Trajectory> trajectories;
  Tokens<double> features;  // one row per mode
};

/// One decoder layer: embed, LICA over BEV, LICA over agents, FFN, delta projection.
LayerOutput decoder_layer(
  std::span<const Trajectory> noisy, const fusion::BevBundle<double> & bev, const lica::QuerySet<double> & agent_q,
  const LayerParams & params);

/// The learned agent tokens after one LICA pass over the BEV bundle.
lica::QuerySet<double> agent_queries(const fusion::BevBundle<double> & bev, const DecoderParams & params);

struct DecoderOutput
{
  std::vector<Trajectory> trajectories;
  std::vector<double> confidence;
  std::vector<double> on_road;
  std::vector<double> on_route;
  std::vector<Mat<double>> agent_futures;  // one N x 2 block per agent query
  std::vector<std::size_t> anchor_index;   // source anchor of each mode
};

/// Timesteps visited by `steps` denoising iterations, from truncate_at down to 0.
std::vector<std::size_t> denoise_timesteps(const NoiseSchedule & sched, std::size_t steps);

DecoderOutput decode(
  const AnchorSet & anchors, const fusion::BevBundle<double> & bev, const lica::QuerySet<double> & agent_q,
  const DecoderParams & params, std::size_t steps = 2, std::uint64_t seed = 0);

/// Highest-confidence mode; ties go to the lowest index.
std::pair<Trajectory, std::size_t> select_best(const DecoderOutput & out);
std::size_t argmax_first(std::span<const double> values);

nlohmann::json trajectory_to_json(const Trajectory & traj);
Trajectory trajectory_from_json(const nlohmann::json & j);
nlohmann::json anchors_to_json(const AnchorSet & anchors);
AnchorSet anchors_from_json(const nlohmann::json & j);

void save_trajectory(const Trajectory & traj, const std::filesystem::path & path);
Trajectory load_trajectory(const std::filesystem::path & path);
void save_anchors(const AnchorSet & anchors, const std::filesystem::path & path);
AnchorSet load_anchors(const std::filesystem::path & path);
/// A JSON array of trajectories (the clustering input).
std::vector<Trajectory> load_trajectories(const std::filesystem::path & path);

}  // namespace lady::decoder
