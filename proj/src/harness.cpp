#include "lady/harness.hpp"

#include "lady/lica.hpp"
#include "lady/rwkv7_io.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>

namespace lady::harness
{

namespace
{

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

double median(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
Tokens<T> normalize_rows(const Tokens<T> & x)
{
  Tokens<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    out.row(i) = (row.array() - mean) / std::sqrt(var + static_cast<T>(kNormEps));
  }
  return out;
}

decoder::Trajectory arc(double v, double omega, std::size_t horizon, double dt = 0.5)
{
  decoder::Trajectory t;
  t.dt = dt;
  for (std::size_t i = 1; i <= horizon; ++i) {
    const double s = dt * static_cast<double>(i);
    if (std::abs(omega) < 1e-9) {
      t.waypoints.push_back({v * s, 0.0, 0.0});
    } else {
      t.waypoints.push_back({v / omega * std::sin(omega * s), v / omega * (1 - std::cos(omega * s)), decoder::wrap_angle(omega * s)});
    }
  }
  return t;
}

// Independent geometry for the reference checks: corner projections rather
// than projected radii, and poses rebuilt from integer step counts.
struct RefPose
{
  double x, y, theta;
};

std::array<std::array<double, 2>, 4> ref_corners(double x, double y, double theta, double hl, double hw)
{
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  std::array<std::array<double, 2>, 4> out{};
  const double sx[4] = {1, -1, -1, 1};
  const double sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) out[i] = {x + sx[i] * hl * c - sy[i] * hw * s, y + sx[i] * hl * s + sy[i] * hw * c};
  return out;
}

bool ref_overlap(const std::array<std::array<double, 2>, 4> & a, double ta, const std::array<std::array<double, 2>, 4> & b, double tb)
{
  const double axes[4][2] = {
    {std::cos(ta), std::sin(ta)}, {-std::sin(ta), std::cos(ta)}, {std::cos(tb), std::sin(tb)}, {-std::sin(tb), std::cos(tb)}};
  for (const auto & n : axes) {
    double amin = INFINITY, amax = -INFINITY, bmin = INFINITY, bmax = -INFINITY;
    for (int i = 0; i < 4; ++i) {
      const double pa = a[i][0] * n[0] + a[i][1] * n[1];
      const double pb = b[i][0] * n[0] + b[i][1] * n[1];
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

RefPose ref_pose(const decoder::Trajectory & traj, std::size_t k)
{
  if (k == 0) return {0, 0, 0};
  const auto & w = traj.waypoints[k - 1];
  return {w.x, w.y, w.theta};
}

template <typename F>
void count_case(SuiteResult & r, double err, F && ok)
{
  ++r.cases;
  r.max_error = std::max(r.max_error, err);
  if (!ok(err)) ++r.failures;
}

}  // namespace

template <typename T>
SoftmaxParams<T> SoftmaxParams<T>::identity(std::size_t d)
{
  const auto n = static_cast<Eigen::Index>(d);
  return {Mat<T>::Identity(n, n), Mat<T>::Identity(n, n), Mat<T>::Identity(n, n)};
}

template <typename T>
SoftmaxParams<T> SoftmaxParams<T>::random(std::size_t d, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  auto p = identity(d);
  for (auto * m : {&p.W_q, &p.W_k, &p.W_v}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<T>(normal(rng));
  }
  return p;
}

template <typename T>
Tokens<T> softmax_cross_attention(const Tokens<T> & q, const Tokens<T> & kv, const SoftmaxParams<T> & params)
{
  const auto d = params.W_q.rows();
  if (q.cols() != d || kv.cols() != d || params.W_k.rows() != d || params.W_v.rows() != d ||
      params.W_q.cols() != params.W_k.cols()) {
    throw DimensionError("softmax_cross_attention: token and projection dims differ");
  }
  if (kv.rows() == 0) throw ContractViolation("softmax_cross_attention: at least one key required");
  const Mat<T> Q = q * params.W_q;
  const Mat<T> K = kv * params.W_k;
  const Mat<T> V = kv * params.W_v;
  Mat<T> scores = (Q * K.transpose()) / std::sqrt(static_cast<T>(params.W_q.cols()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return scores * V;
}

template <typename T>
Tokens<T> softmax_fuse(const Tokens<T> & seq, const std::vector<SoftmaxParams<T>> & layers)
{
  Tokens<T> x = seq;
  for (const auto & layer : layers) {
    const Tokens<T> n = normalize_rows(x);
    x += softmax_cross_attention(n, n, layer);
  }
  return x;
}

template <typename T>
std::vector<fusion::FrameTokens<T>> gen_synthetic_frames(
  const fusion::FusionConfig & cfg, std::size_t frames, std::uint64_t seed, double drift)
{
  cfg.validate();
  if (frames == 0) throw ContractViolation("gen_synthetic_frames: at least one frame required");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<fusion::FrameTokens<T>> out;
  const auto d = static_cast<Eigen::Index>(cfg.d);
  for (std::size_t t = 0; t < frames; ++t) {
    fusion::FrameTokens<T> f;
    f.t = static_cast<std::int64_t>(t);
    f.camera.resize(static_cast<Eigen::Index>(cfg.camera_tokens), d);
    f.lidar.resize(static_cast<Eigen::Index>(cfg.lidar_tokens), d);
    const double shift = drift * static_cast<double>(t);
    for (auto * m : {&f.camera, &f.lidar}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<T>(normal(rng) + shift);
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<decoder::Trajectory> gen_trajectories(std::size_t count, std::size_t horizon, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> speed(0.5, 15.0);
  std::uniform_real_distribution<double> yaw(-0.4, 0.4);
  std::vector<decoder::Trajectory> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double v = speed(rng);
    out.push_back(arc(v, yaw(rng), horizon));
  }
  return out;
}

SceneCase gen_scene_case(std::uint64_t seed, std::size_t horizon)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> offset(0.0, 3.0);

  SceneCase c;
  const double v = uniform(2.0, 12.0);
  const double omega = uniform(-0.25, 0.25);
  c.traj = arc(v, omega, horizon);
  const double span = 0.5 * static_cast<double>(horizon);

  const double half = unit(rng) < 0.8 ? 30.0 : uniform(2.0, 6.0);
  c.scene.drivable = {{-10, -half}, {150, -half}, {150, half}, {-10, half}};
  c.scene.centerline = {{-10, 0}, {150, 0}};
  c.scene.reference_progress = uniform(0.6, 1.2) * v * span;

  const auto n_agents = static_cast<std::size_t>(uniform(0.0, 5.0));
  for (std::size_t i = 0; i < n_agents; ++i) {
    const double tc = uniform(0.0, span + 1.0);
    const auto at = arc(v, omega, 1, tc).waypoints[0];
    const double heading = uniform(-std::numbers::pi, std::numbers::pi);
    const double speed = uniform(0.0, 10.0);
    pdms::Agent a;
    a.heading = heading;
    a.vx = speed * std::cos(heading);
    a.vy = speed * std::sin(heading);
    a.x = at.x + offset(rng) - a.vx * tc;
    a.y = at.y + offset(rng) - a.vy * tc;
    a.half_length = uniform(0.5, 2.5);
    a.half_width = uniform(0.4, 1.2);
    c.scene.agents.push_back(a);
  }
  return c;
}

bool brute_force_collides(
  const decoder::Trajectory & traj, const std::vector<pdms::Agent> & agents, const pdms::Config & cfg, double step)
{
  const auto per = static_cast<std::size_t>(std::llround(traj.dt / step));
  const std::size_t total = per * traj.size();
  const double hl = cfg.ego_length / 2;
  const double hw = cfg.ego_width / 2;
  for (std::size_t m = 0; m <= total; ++m) {
    const std::size_t k = std::min(m / per, traj.size() - 1);
    const double u = static_cast<double>(m - k * per) / static_cast<double>(per);
    const RefPose a = ref_pose(traj, k);
    const RefPose b = ref_pose(traj, k + 1);
    const double dth = std::atan2(std::sin(b.theta - a.theta), std::cos(b.theta - a.theta));
    const double x = a.x + u * (b.x - a.x);
    const double y = a.y + u * (b.y - a.y);
    const double th = a.theta + u * dth;
    const auto ego = ref_corners(x, y, th, hl, hw);
    const double t = static_cast<double>(m) * step;
    for (const auto & ag : agents) {
      const auto box = ref_corners(ag.x + ag.vx * t, ag.y + ag.vy * t, ag.heading, ag.half_length, ag.half_width);
      if (ref_overlap(ego, th, box, ag.heading)) return true;
    }
  }
  return false;
}

bool brute_force_ttc_below(
  const decoder::Trajectory & traj, const std::vector<pdms::Agent> & agents, const pdms::Config & cfg, double threshold,
  double step)
{
  const double hl = cfg.ego_length / 2;
  const double hw = cfg.ego_width / 2;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const RefPose p = ref_pose(traj, i);
    const RefPose q = ref_pose(traj, i + 1);
    const double vx = (q.x - p.x) / traj.dt;
    const double vy = (q.y - p.y) / traj.dt;
    const double tau = traj.dt * static_cast<double>(i);
    for (std::size_t m = 0; static_cast<double>(m) * step < threshold; ++m) {
      const double s = static_cast<double>(m) * step;
      const auto ego = ref_corners(p.x + vx * s, p.y + vy * s, p.theta, hl, hw);
      for (const auto & ag : agents) {
        const double t = tau + s;
        const auto box = ref_corners(ag.x + ag.vx * t, ag.y + ag.vy * t, ag.heading, ag.half_length, ag.half_width);
        if (ref_overlap(ego, p.theta, box, ag.heading)) return true;
      }
    }
  }
  return false;
}

const char * bench_mode_name(BenchMode m) { return m == BenchMode::linear ? "linear" : "softmax"; }

std::vector<BenchRecord> run_scaling_bench(
  const std::vector<std::size_t> & frames_grid, const std::vector<BenchMode> & modes, const BenchConfig & cfg)
{
  cfg.fusion.validate();
  if (cfg.trials == 0) throw ConfigError("bench: at least one trial required");
  using Frame = fusion::FrameTokens<float>;
  const auto params = fusion::FusionParams<float>::random(cfg.fusion, cfg.seed);
  std::vector<SoftmaxParams<float>> soft;
  for (std::size_t l = 0; l < cfg.fusion.n_layers; ++l) soft.push_back(SoftmaxParams<float>::random(cfg.fusion.d, cfg.seed + 101 + l));

  std::vector<BenchRecord> records;
  for (const auto t_frames : frames_grid) {
    if (t_frames == 0) throw ConfigError("bench: frame counts must be positive");
    const auto frames = gen_synthetic_frames<float>(cfg.fusion, t_frames, cfg.seed, cfg.drift);
    for (const auto mode : modes) {
      const auto start = Clock::now();
      BenchRecord rec;
      rec.frames = t_frames;
      rec.mode = mode;

      std::function<void()> work;
      fusion::StreamingSession<float> session(params, cfg.fusion);
      Tokens<float> history;
      rwkv7::RecurrentState<float> before;
      if (mode == BenchMode::linear) {
        for (std::size_t k = 0; k + 1 < t_frames; ++k) session.step(frames[k]);
        before = session.state();
        const Frame & last = frames.back();
        work = [&params, &before, &last] {
          auto state = before;
          fusion::fuse_step(last, params, state);
        };
        session.step(last);
        rec.state_bytes = session.persistent_bytes();
      } else {
        history = fusion::build_frame_sequence<float>(frames, params.pos_emb);
        work = [&history, &soft] { softmax_fuse(history, soft); };
        const auto n = static_cast<std::size_t>(history.rows());
        rec.state_bytes = (n * cfg.fusion.d + n * n) * sizeof(float);
      }

      std::size_t repeats = 1;
      bool warned = false;
      auto sample = [&] {
        for (;;) {
          const auto t0 = Clock::now();
          for (std::size_t r = 0; r < repeats; ++r) work();
          const double ms = ms_since(t0);
          if (ms >= cfg.min_sample_ms) return ms / static_cast<double>(repeats);
          repeats *= 2;
          if (!warned && cfg.log) {
            *cfg.log << "warning: " << bench_mode_name(mode) << " T=" << t_frames
                     << " is below timer resolution, repeating " << repeats << "x per sample\n";
          }
          warned = true;
        }
      };
      for (std::size_t w = 0; w < cfg.warmup; ++w) sample();
      std::vector<double> samples;
      for (std::size_t trial = 0; trial < cfg.trials; ++trial) samples.push_back(sample());
      rec.latency_ms = median(samples);
      rec.min_ms = *std::min_element(samples.begin(), samples.end());
      rec.max_ms = *std::max_element(samples.begin(), samples.end());
      rec.wall_ms = ms_since(start);
      records.push_back(rec);
    }
  }
  return records;
}

void write_bench_csv(std::ostream & out, const std::vector<BenchRecord> & records)
{
  out << "frames,mode,latency_ms,state_bytes,wall_ms\n";
  const auto old = out.precision(6);
  for (const auto & r : records) {
    out << r.frames << ',' << bench_mode_name(r.mode) << ',' << r.latency_ms << ',' << r.state_bytes << ',' << r.wall_ms << '\n';
  }
  out.precision(old);
}

namespace
{

template <typename T>
SuiteResult chunk_suite(std::size_t cases, std::uint64_t seed, double tol, const char * name)
{
  SuiteResult r{name, 0, 0, 0.0, tol};
  const std::size_t dims[] = {8, 16, 64};
  const std::size_t heads[] = {1, 4};
  const std::size_t lengths[] = {1, 4, 16, 64};
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t d = dims[c % 3];
    const std::size_t h = heads[(c / 3) % 2];
    const std::size_t b = lengths[(c / 6) % 4];
    const std::uint64_t s = seed * 1000 + c;
    const auto params = rwkv7::random_block<T>({d, h, 0, 0}, s);
    auto state = rwkv7::RecurrentState<T>::fresh(d, h, 1);
    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<rwkv7::ElementSet<T>> elements;
    for (std::size_t t = 0; t < b + 3; ++t) {
      Vec<T> x(static_cast<Eigen::Index>(d));
      for (auto & v : x) v = static_cast<T>(normal(rng));
      elements.push_back(rwkv7::project_elements<T>(x, params, state, 0));
    }
    // The first three tokens build a non-trivial incoming state.
    auto in = rwkv7::zero_heads<T>(h, d / h);
    for (std::size_t t = 0; t < 3; ++t) in = rwkv7::state_step(in, elements[t]);
    const std::span<const rwkv7::ElementSet<T>> chunk(elements.data() + 3, b);
    const auto res = rwkv7::chunk_forward(in, chunk);
    auto seq = in;
    double err = 0.0;
    for (std::size_t t = 0; t < b; ++t) {
      seq = rwkv7::state_step(seq, chunk[t]);
      for (std::size_t hh = 0; hh < h; ++hh) {
        err = std::max(err, static_cast<double>((seq[hh] - res.states[t][hh]).cwiseAbs().maxCoeff()));
      }
    }
    for (std::size_t hh = 0; hh < h; ++hh) err = std::max(err, static_cast<double>((seq[hh] - res.out[hh]).cwiseAbs().maxCoeff()));
    count_case(r, err, [tol](double e) { return e <= tol; });
  }
  return r;
}

}  // namespace

SuiteResult chunk_equivalence_suite(std::size_t cases, std::uint64_t seed, bool single_precision)
{
  return single_precision ? chunk_suite<float>(cases, seed, 1e-5, "chunk-vs-recurrence/f32")
                          : chunk_suite<double>(cases, seed, 1e-10, "chunk-vs-recurrence/f64");
}

SuiteResult jacobian_suite(std::uint64_t seed, std::size_t d, std::size_t tokens)
{
  SuiteResult r{"jacobian-seq-vs-chunk", 0, 0, 0.0, 1e-3};
  const auto params = rwkv7::random_block<double>({d, 2, 0, 0}, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tokens<double> x(static_cast<Eigen::Index>(tokens), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);

  auto run = [&](const Tokens<double> & in, const rwkv7::ExecConfig & exec) {
    auto state = rwkv7::RecurrentState<double>::fresh_for(rwkv7::Stack<double>{params});
    return rwkv7::block_forward(in, params, state, 0, exec).tokens;
  };
  const double h = 1e-4;
  const auto seq = rwkv7::ExecConfig::sequential();
  const auto chunked = rwkv7::ExecConfig::chunked(tokens);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Tokens<double> plus = x, minus = x;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const Mat<double> js = (run(plus, seq) - run(minus, seq)) / (2 * h);
    const Mat<double> jc = (run(plus, chunked) - run(minus, chunked)) / (2 * h);
    for (Eigen::Index k = 0; k < js.size(); ++k) {
      const double scale = std::max({std::abs(js.data()[k]), std::abs(jc.data()[k]), 1e-6});
      count_case(r, std::abs(js.data()[k] - jc.data()[k]) / scale, [](double e) { return e <= 1e-3; });
    }
  }
  return r;
}

SuiteResult streaming_suite(std::uint64_t seed, std::size_t n_frames)
{
  SuiteResult r{"stream-vs-parallel", 0, 0, 0.0, 1e-5};
  const fusion::FusionConfig cfg;
  const auto params = fusion::FusionParams<float>::random(cfg, seed);
  const auto frames = gen_synthetic_frames<float>(cfg, n_frames, seed + 1);
  const auto seq = fusion::build_frame_sequence<float>(frames, params.pos_emb);
  const auto par = fusion::fuse_parallel(seq, params.stack, cfg.chunk_size);

  fusion::StreamingSession<float> full(params, cfg);
  Tokens<float> last;
  for (const auto & f : frames) last = full.step(f);
  const auto ft = static_cast<Eigen::Index>(cfg.frame_tokens());
  count_case(r, static_cast<double>((last - par.bottomRows(ft)).cwiseAbs().maxCoeff()), [](double e) { return e <= 1e-5; });

  // Snapshot half-way, resume in a fresh session: must be bit-identical.
  fusion::StreamingSession<float> first(params, cfg);
  const std::size_t half = n_frames / 2;
  for (std::size_t k = 0; k < half; ++k) first.step(frames[k]);
  const auto path = std::filesystem::temp_directory_path() / ("lady_resume_" + std::to_string(seed) + ".bin");
  first.save(path);
  fusion::StreamingSession<float> resumed(params, cfg);
  resumed.restore(path);
  std::filesystem::remove(path);
  Tokens<float> got;
  for (std::size_t k = half; k < n_frames; ++k) got = resumed.step(frames[k]);
  const bool exact = got == last && resumed.state() == full.state() && resumed.frames() == full.frames();
  count_case(r, exact ? 0.0 : static_cast<double>((got - last).cwiseAbs().maxCoeff()), [exact](double) { return exact; });
  return r;
}

SuiteResult lica_causality_suite(std::size_t cases, std::uint64_t seed)
{
  SuiteResult r{"lica-causality", 0, 0, 0.0, 0.0};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_tokens = [&](Eigen::Index n, Eigen::Index d) {
    Tokens<double> t(n, d);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
    return t;
  };
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t d = c % 2 ? 16 : 8;
    const auto l = static_cast<Eigen::Index>(rng() % 24);
    const auto m = static_cast<Eigen::Index>(1 + rng() % 8);
    const auto params = lica::LicaParams<double>::random({d, 2, 0, 0}, seed + c);
    const auto exec = c % 3 == 0 ? rwkv7::ExecConfig::chunked(4) : rwkv7::ExecConfig::sequential();
    const auto features = random_tokens(l, static_cast<Eigen::Index>(d));
    const lica::QuerySet<double> q{random_tokens(m, static_cast<Eigen::Index>(d))};
    const auto base = lica::attend(features, q, params, exec);
    bool ok = base.tokens.rows() == m;
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m));
    auto perturbed = q;
    perturbed.tokens.row(j).array() += 0.5;
    const auto out = lica::attend(features, perturbed, params, exec);
    for (Eigen::Index i = 0; i < j; ++i) ok = ok && out.tokens.row(i) == base.tokens.row(i);
    ok = ok && out.tokens.row(j) != base.tokens.row(j);
    count_case(r, ok ? 0.0 : 1.0, [](double e) { return e == 0.0; });
  }
  return r;
}

SuiteResult collision_oracle_suite(std::size_t scenes, std::uint64_t seed)
{
  SuiteResult r{"nc-ttc-vs-1ms-oracle", 0, 0, 0.0, 0.0};
  const pdms::Config cfg;
  for (std::size_t i = 0; i < scenes; ++i) {
    const auto c = gen_scene_case(seed * 100003 + i);
    const bool nc_exact = std::isinf(pdms::first_collision(c.traj, c.scene.agents, cfg));
    const bool nc_ref = !brute_force_collides(c.traj, c.scene.agents, cfg);
    const bool ttc_exact = pdms::ttc_min(c.traj, c.scene.agents, cfg) >= cfg.ttc_min;
    const bool ttc_ref = !brute_force_ttc_below(c.traj, c.scene.agents, cfg, cfg.ttc_min);
    count_case(r, (nc_exact == nc_ref && ttc_exact == ttc_ref) ? 0.0 : 1.0, [](double e) { return e == 0.0; });
  }
  return r;
}

std::vector<SuiteResult> run_equivalence_suites(std::uint64_t seed)
{
  return {
    chunk_equivalence_suite(100, seed, true),
    chunk_equivalence_suite(100, seed, false),
    jacobian_suite(seed),
    streaming_suite(seed),
    lica_causality_suite(50, seed),
    collision_oracle_suite(200, seed)};
}

void print_suites(std::ostream & out, const std::vector<SuiteResult> & results)
{
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::left << std::setw(26) << "suite" << std::right << std::setw(7) << "cases" << std::setw(10) << "failures"
      << std::setw(13) << "max_error" << std::setw(11) << "tolerance" << "  result\n";
  out << std::scientific << std::setprecision(3);
  for (const auto & r : results) {
    out << std::left << std::setw(26) << r.name << std::right << std::setw(7) << r.cases << std::setw(10) << r.failures
        << std::setw(13) << r.max_error << std::setw(11) << r.tolerance << "  " << (r.passed() ? "PASS" : "FAIL") << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

#define LADY_HARNESS_INSTANTIATE(T)                                                                          \
  template struct SoftmaxParams<T>;                                                                          \
  template Tokens<T> softmax_cross_attention<T>(const Tokens<T> &, const Tokens<T> &, const SoftmaxParams<T> &); \
  template Tokens<T> softmax_fuse<T>(const Tokens<T> &, const std::vector<SoftmaxParams<T>> &);              \
  template std::vector<fusion::FrameTokens<T>> gen_synthetic_frames<T>(                                      \
    const fusion::FusionConfig &, std::size_t, std::uint64_t, double);

LADY_HARNESS_INSTANTIATE(float)
LADY_HARNESS_INSTANTIATE(double)

#undef LADY_HARNESS_INSTANTIATE

}  // namespace lady::harness
