#include "lady/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace lady::decoder
{

namespace
{

constexpr double kPi = std::numbers::pi;

std::size_t check_horizon(std::span<const Trajectory> trajs, const char * what)
{
  const std::size_t n = trajs.front().size();
  for (const auto & t : trajs) {
    t.validate();
    if (t.size() != n) throw DimensionError(std::string(what) + ": trajectories differ in horizon");
  }
  return n;
}

Mat<double> stack_flat(std::span<const Trajectory> trajs)
{
  const auto n = static_cast<Eigen::Index>(3 * trajs.front().size());
  Mat<double> x(static_cast<Eigen::Index>(trajs.size()), n);
  for (std::size_t i = 0; i < trajs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = trajs[i].flatten().transpose();
  return x;
}

std::vector<Trajectory> unstack_flat(const Mat<double> & x, double dt)
{
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(Trajectory::from_flat(x.row(i).transpose(), dt));
  return out;
}

void fill_normal(Mat<double> & m, std::mt19937_64 & rng, double scale)
{
  std::normal_distribution<double> normal(0.0, scale);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
}

Vec<double> normal_vec(Eigen::Index n, std::mt19937_64 & rng, double scale)
{
  Mat<double> m(n, 1);
  fill_normal(m, rng, scale);
  return m.col(0);
}

Mat<double> normal_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64 & rng, double scale)
{
  Mat<double> m(r, c);
  fill_normal(m, rng, scale);
  return m;
}

double sigmoid1(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double wrap_angle(double theta)
{
  if (!std::isfinite(theta)) throw NumericError("wrap_angle: non-finite heading");
  double r = std::remainder(theta, 2 * kPi);
  if (r <= -kPi) r += 2 * kPi;
  return r;
}

void Trajectory::validate() const
{
  if (waypoints.empty()) throw ContractViolation("trajectory: at least one waypoint required");
  if (!(dt > 0) || !std::isfinite(dt)) throw ConfigError("trajectory: dt must be positive");
  for (const auto & w : waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y) || !std::isfinite(w.theta)) {
      throw NumericError("trajectory: non-finite waypoint");
    }
    if (w.theta <= -kPi || w.theta > kPi) throw ContractViolation("trajectory: heading outside (-pi, pi]");
  }
}

Vec<double> Trajectory::flatten() const
{
  Vec<double> f(static_cast<Eigen::Index>(3 * waypoints.size()));
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(3 * i);
    f[k] = waypoints[i].x;
    f[k + 1] = waypoints[i].y;
    f[k + 2] = waypoints[i].theta;
  }
  return f;
}

Trajectory Trajectory::from_flat(const Vec<double> & flat, double dt)
{
  if (flat.size() == 0 || flat.size() % 3 != 0) throw DimensionError("trajectory: flat length must be a multiple of 3");
  Trajectory t;
  t.dt = dt;
  for (Eigen::Index k = 0; k < flat.size(); k += 3) t.waypoints.push_back({flat[k], flat[k + 1], wrap_angle(flat[k + 2])});
  return t;
}

void AnchorSet::validate() const
{
  if (anchors.empty()) throw ContractViolation("anchor set: at least one anchor required");
  check_horizon(anchors, "anchor set");
  std::set<std::vector<double>> seen;
  for (const auto & a : anchors) {
    const auto f = a.flatten();
    if (!seen.insert(std::vector<double>(f.data(), f.data() + f.size())).second) {
      throw ContractViolation("anchor set: anchors must be pairwise distinct");
    }
  }
}

void NoiseSchedule::validate() const
{
  if (total_steps == 0) throw ConfigError("noise schedule: total_steps must be positive");
  if (truncate_at == 0 || truncate_at > total_steps) throw ConfigError("noise schedule: truncate_at must lie in [1, total_steps]");
  if (!(beta_start > 0) || !(beta_end >= beta_start) || !(beta_end < 1)) {
    throw ConfigError("noise schedule: need 0 < beta_start <= beta_end < 1");
  }
}

double NoiseSchedule::beta(std::size_t step) const
{
  if (step == 0 || step > truncate_at) {
    throw ContractViolation("noise schedule: step " + std::to_string(step) + " outside [1, " + std::to_string(truncate_at) + "]");
  }
  if (total_steps == 1) return beta_start;
  const double frac = static_cast<double>(step - 1) / static_cast<double>(total_steps - 1);
  return beta_start + (beta_end - beta_start) * frac;
}

double NoiseSchedule::alpha_bar(std::size_t step) const
{
  if (step > truncate_at) {
    throw ContractViolation(
      "noise schedule: step " + std::to_string(step) + " exceeds the truncation at " + std::to_string(truncate_at));
  }
  double ab = 1.0;
  for (std::size_t s = 1; s <= step; ++s) ab *= 1.0 - beta(s);
  return ab;
}

AnchorSet cluster_anchors(std::span<const Trajectory> dataset, std::size_t k, std::uint64_t seed, std::size_t max_iters)
{
  if (k == 0) throw ConfigError("cluster_anchors: k must be positive");
  if (dataset.size() < k) {
    throw InsufficientDataError(
      "cluster_anchors: " + std::to_string(dataset.size()) + " trajectories for " + std::to_string(k) + " clusters");
  }
  check_horizon(dataset, "cluster_anchors");
  const Mat<double> x = stack_flat(dataset);
  {
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < x.rows(); ++i) distinct.insert(std::vector<double>(x.row(i).data(), x.row(i).data() + x.cols()));
    if (distinct.size() < k) throw InsufficientDataError("cluster_anchors: fewer distinct trajectories than clusters");
  }

  const auto n = x.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  std::mt19937_64 rng(seed);

  Mat<double> centers(kk, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  Vec<double> d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < kk; ++c) {
    std::discrete_distribution<Eigen::Index> weighted(d2.data(), d2.data() + d2.size());
    centers.row(c) = x.row(weighted(rng));
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    Vec<double> best_d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = (x.row(i) - centers.row(0)).squaredNorm();
      for (Eigen::Index c = 1; c < kk; ++c) {
        const double dc = (x.row(i) - centers.row(c)).squaredNorm();
        if (dc < bd) {
          bd = dc;
          best = c;
        }
      }
      best_d[i] = bd;
      if (assign[static_cast<std::size_t>(i)] != best) changed = true;
      assign[static_cast<std::size_t>(i)] = best;
    }
    if (!changed) break;

    std::vector<Eigen::Index> counts(static_cast<std::size_t>(kk), 0);
    for (auto a : assign) ++counts[static_cast<std::size_t>(a)];
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Empty cluster: steal the point worst served by its current centroid.
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] > 1 && (far < 0 || best_d[i] > best_d[far])) {
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
      assign[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      best_d[far] = 0;
    }
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
    for (Eigen::Index c = 0; c < kk; ++c) centers.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  return {unstack_flat(centers, dataset.front().dt)};
}

std::vector<Trajectory> corrupt_anchors(
  std::span<const Trajectory> anchors, const NoiseSchedule & sched, std::size_t step, std::uint64_t seed)
{
  sched.validate();
  const double ab = sched.alpha_bar(step);
  if (step == 0) return {anchors.begin(), anchors.end()};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double keep = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  std::vector<Trajectory> out;
  out.reserve(anchors.size());
  for (const auto & a : anchors) {
    a.validate();
    Trajectory t{a.dt, {}};
    for (const auto & w : a.waypoints) {
      const double ex = normal(rng);
      const double ey = normal(rng);
      const double et = normal(rng);
      t.waypoints.push_back({keep * w.x + noise * ex, keep * w.y + noise * ey, wrap_angle(keep * w.theta + noise * et)});
    }
    out.push_back(std::move(t));
  }
  return out;
}

void DecoderConfig::validate() const
{
  if (d == 0 || n_heads == 0 || d % n_heads != 0) throw ConfigError("decoder: d must be a positive multiple of n_heads");
  if (horizon == 0) throw ConfigError("decoder: horizon must be positive");
  if (n_layers == 0) throw ConfigError("decoder: at least one layer required");
  if (n_agents == 0) throw ConfigError("decoder: at least one agent query required");
  schedule.validate();
}

DecoderParams DecoderParams::random(const DecoderConfig & cfg, std::uint64_t seed)
{
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto f = static_cast<Eigen::Index>(cfg.ffn());
  const auto w = static_cast<Eigen::Index>(3 * cfg.horizon);
  const rwkv7::BlockShape shape{cfg.d, cfg.n_heads, 0, 0};
  std::mt19937_64 rng(seed);

  DecoderParams p;
  p.cfg = cfg;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    lp.embed = normal_mat(w, d, rng, 1.0 / std::sqrt(static_cast<double>(w)));
    lp.embed_bias = normal_vec(d, rng, 0.1);
    lp.bev_lica = lica::LicaParams<double>::random(shape, seed * 7919 + 4 * l + 1);
    lp.agent_lica = lica::LicaParams<double>::random(shape, seed * 7919 + 4 * l + 2);
    lp.ffn_in = normal_mat(d, f, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    lp.ffn_in_bias = normal_vec(f, rng, 0.1);
    lp.ffn_out = normal_mat(f, d, rng, 1.0 / std::sqrt(static_cast<double>(f)));
    lp.ffn_out_bias = normal_vec(d, rng, 0.1);
    lp.out = normal_mat(d, w, rng, 0.05 / std::sqrt(static_cast<double>(d)));
    lp.out_bias = normal_vec(w, rng, 0.01);
    p.layers.push_back(std::move(lp));
  }
  const double hs = 1.0 / std::sqrt(static_cast<double>(d));
  p.heads.confidence = normal_vec(d, rng, hs);
  p.heads.on_road = normal_vec(d, rng, hs);
  p.heads.on_route = normal_vec(d, rng, hs);
  p.heads.agent = normal_mat(d, static_cast<Eigen::Index>(2 * cfg.horizon), rng, hs);
  p.heads.agent_bias = normal_vec(static_cast<Eigen::Index>(2 * cfg.horizon), rng, 0.1);
  p.agent_queries = normal_mat(static_cast<Eigen::Index>(cfg.n_agents), d, rng, 1.0);
  p.agent_lica = lica::LicaParams<double>::random(shape, seed * 7919 + 997);
  return p;
}

LayerOutput decoder_layer(
  std::span<const Trajectory> noisy, const fusion::BevBundle<double> & bev, const lica::QuerySet<double> & agent_q,
  const LayerParams & params)
{
  if (noisy.empty()) throw ContractViolation("decoder_layer: at least one mode required");
  const std::size_t n = check_horizon(noisy, "decoder_layer");
  const auto w = static_cast<Eigen::Index>(3 * n);
  if (params.embed.rows() != w || params.out.cols() != w || params.out_bias.size() != w) {
    throw DimensionError("decoder_layer: trajectory horizon does not match the layer projections");
  }
  const Mat<double> x = stack_flat(noisy);

  Tokens<double> h = x * params.embed;
  h.rowwise() += params.embed_bias.transpose();
  h += lica::attend(bev.tokens(), lica::QuerySet<double>{h}, params.bev_lica).tokens;
  h += lica::attend(agent_q.tokens, lica::QuerySet<double>{h}, params.agent_lica).tokens;

  Mat<double> hidden = h * params.ffn_in;
  hidden.rowwise() += params.ffn_in_bias.transpose();
  hidden = hidden.cwiseMax(0.0);
  Mat<double> ffn = hidden * params.ffn_out;
  ffn.rowwise() += params.ffn_out_bias.transpose();
  h += ffn;

  Mat<double> delta = h * params.out;
  delta.rowwise() += params.out_bias.transpose();
  return {unstack_flat(x + delta, noisy.front().dt), h};
}

lica::QuerySet<double> agent_queries(const fusion::BevBundle<double> & bev, const DecoderParams & params)
{
  return lica::attend(bev.tokens(), lica::QuerySet<double>{params.agent_queries}, params.agent_lica);
}

std::vector<std::size_t> denoise_timesteps(const NoiseSchedule & sched, std::size_t steps)
{
  sched.validate();
  if (steps == 0) throw ConfigError("decode: at least one denoising step required");
  if (steps > sched.truncate_at) throw ConfigError("decode: more denoising steps than truncated timesteps");
  std::vector<std::size_t> ts;
  for (std::size_t i = 0; i <= steps; ++i) ts.push_back(sched.truncate_at * (steps - i) / steps);
  return ts;
}

DecoderOutput decode(
  const AnchorSet & anchors, const fusion::BevBundle<double> & bev, const lica::QuerySet<double> & agent_q,
  const DecoderParams & params, std::size_t steps, std::uint64_t seed)
{
  const auto & cfg = params.cfg;
  cfg.validate();
  const auto ts = denoise_timesteps(cfg.schedule, steps);
  anchors.validate();
  if (anchors.horizon() != cfg.horizon) throw DimensionError("decode: anchor horizon differs from the decoder horizon");
  if (params.layers.size() != cfg.n_layers) throw ConfigError("decode: layer count differs from the configuration");

  const std::size_t k = anchors.size();
  const std::size_t km = cfg.modes == 0 ? k : cfg.modes;
  if (km > k) throw ConfigError("decode: more modes requested than anchors");
  std::vector<std::size_t> index(k);
  std::iota(index.begin(), index.end(), 0);
  if (km < k) {
    std::mt19937_64 pick(seed ^ 0x5851f42d4c957f2dULL);
    std::shuffle(index.begin(), index.end(), pick);
    index.resize(km);
    std::sort(index.begin(), index.end());
  }
  std::vector<Trajectory> chosen;
  for (auto i : index) chosen.push_back(anchors.anchors[i]);

  const double dt = chosen.front().dt;
  const auto sched = cfg.schedule;
  std::vector<Trajectory> x = corrupt_anchors(chosen, sched, ts.front(), seed);
  Tokens<double> features;
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    std::vector<Trajectory> x0 = x;
    for (const auto & layer : params.layers) {
      auto lo = decoder_layer(x0, bev, agent_q, layer);
      x0 = std::move(lo.trajectories);
      features = std::move(lo.features);
    }
    const std::size_t next = ts[i + 1];
    if (next == 0) {
      x = std::move(x0);
      continue;
    }
    const double ab = sched.alpha_bar(ts[i]);
    const double ab_next = sched.alpha_bar(next);
    const Mat<double> xt = stack_flat(x);
    const Mat<double> x0f = stack_flat(x0);
    Mat<double> eps(xt.rows(), xt.cols());
    if (cfg.stochastic) {
      for (Eigen::Index j = 0; j < eps.size(); ++j) eps.data()[j] = normal(rng);
    } else {
      eps = (xt - std::sqrt(ab) * x0f) / std::sqrt(1.0 - ab);
    }
    x = unstack_flat(std::sqrt(ab_next) * x0f + std::sqrt(1.0 - ab_next) * eps, dt);
  }

  DecoderOutput out;
  out.trajectories = std::move(x);
  out.anchor_index = index;
  const auto & hp = params.heads;
  const Vec<double> conf = features * hp.confidence;
  const Vec<double> road = features * hp.on_road;
  const Vec<double> route = features * hp.on_route;
  for (Eigen::Index m = 0; m < features.rows(); ++m) {
    out.confidence.push_back(conf[m] + hp.confidence_bias);
    out.on_road.push_back(sigmoid1(road[m] + hp.on_road_bias));
    out.on_route.push_back(sigmoid1(route[m] + hp.on_route_bias));
    if (!std::isfinite(out.confidence.back())) throw NumericError("decode: non-finite confidence");
  }
  const auto n = static_cast<Eigen::Index>(cfg.horizon);
  for (Eigen::Index a = 0; a < agent_q.tokens.rows(); ++a) {
    const Vec<double> flat = row_times(Vec<double>(agent_q.tokens.row(a).transpose()), hp.agent) + hp.agent_bias;
    out.agent_futures.push_back(Eigen::Map<const Mat<double>>(flat.data(), n, 2));
  }
  return out;
}

std::size_t argmax_first(std::span<const double> values)
{
  if (values.empty()) throw ContractViolation("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) throw NumericError("argmax: NaN score");
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::pair<Trajectory, std::size_t> select_best(const DecoderOutput & out)
{
  if (out.trajectories.empty()) throw ContractViolation("select_best: no modes to choose from");
  if (out.confidence.size() != out.trajectories.size()) throw DimensionError("select_best: one confidence per mode required");
  const std::size_t i = argmax_first(out.confidence);
  return {out.trajectories[i], i};
}

nlohmann::json trajectory_to_json(const Trajectory & traj)
{
  nlohmann::json wps = nlohmann::json::array();
  for (const auto & w : traj.waypoints) wps.push_back({w.x, w.y, w.theta});
  return {{"dt", traj.dt}, {"waypoints", wps}};
}

Trajectory trajectory_from_json(const nlohmann::json & j)
{
  if (!j.is_object() || !j.contains("waypoints") || !j["waypoints"].is_array()) {
    throw FormatError("trajectory: expected an object with a waypoints array");
  }
  Trajectory t;
  try {
    t.dt = j.value("dt", 0.5);
    for (const auto & w : j["waypoints"]) {
      if (!w.is_array() || w.size() != 3) throw FormatError("trajectory: waypoint must be [x, y, theta]");
      t.waypoints.push_back({w[0].get<double>(), w[1].get<double>(), wrap_angle(w[2].get<double>())});
    }
  } catch (const nlohmann::json::exception & e) {
    throw FormatError(std::string("trajectory: ") + e.what());
  }
  t.validate();
  return t;
}

nlohmann::json anchors_to_json(const AnchorSet & anchors)
{
  nlohmann::json j = nlohmann::json::array();
  for (const auto & a : anchors.anchors) j.push_back(trajectory_to_json(a));
  return j;
}

AnchorSet anchors_from_json(const nlohmann::json & j)
{
  if (!j.is_array()) throw FormatError("anchor file: expected a JSON array of trajectories");
  AnchorSet set;
  for (const auto & t : j) set.anchors.push_back(trajectory_from_json(t));
  set.validate();
  return set;
}

namespace
{

void write_json(const nlohmann::json & j, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

nlohmann::json read_json(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception & e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace

void save_trajectory(const Trajectory & traj, const std::filesystem::path & path) { write_json(trajectory_to_json(traj), path); }

Trajectory load_trajectory(const std::filesystem::path & path) { return trajectory_from_json(read_json(path)); }

void save_anchors(const AnchorSet & anchors, const std::filesystem::path & path) { write_json(anchors_to_json(anchors), path); }

AnchorSet load_anchors(const std::filesystem::path & path) { return anchors_from_json(read_json(path)); }

std::vector<Trajectory> load_trajectories(const std::filesystem::path & path)
{
  const auto j = read_json(path);
  if (!j.is_array()) throw FormatError("'" + path.string() + "': expected a JSON array of trajectories");
  std::vector<Trajectory> out;
  for (const auto & t : j) out.push_back(trajectory_from_json(t));
  return out;
}

}  // namespace lady::decoder
