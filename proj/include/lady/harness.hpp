#pragma once

// Softmax-attention baseline, synthetic workloads, the scaling benchmark and
// the equivalence suites behind `lady equiv`.

#include "lady/decoder.hpp"
#include "lady/fusion.hpp"
#include "lady/pdms.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lady::harness
{

template <typename T>
struct SoftmaxParams
{
  Mat<T> W_q;
  Mat<T> W_k;
  Mat<T> W_v;

  static SoftmaxParams identity(std::size_t d);
  static SoftmaxParams random(std::size_t d, std::uint64_t seed);
};

/// softmax((q W_q)(kv W_k)^T / sqrt(d)) (kv W_v); quadratic in the token counts.
template <typename T>
Tokens<T> softmax_cross_attention(const Tokens<T> & q, const Tokens<T> & kv, const SoftmaxParams<T> & params);

/// Pre-norm residual self-attention layers over the whole history; the baseline the benchmark compares against.
template <typename T>
Tokens<T> softmax_fuse(const Tokens<T> & seq, const std::vector<SoftmaxParams<T>> & layers);

/// Gaussian tokens plus `drift * t` on every entry of frame t.
template <typename T>
std::vector<fusion::FrameTokens<T>> gen_synthetic_frames(
  const fusion::FusionConfig & cfg, std::size_t frames, std::uint64_t seed, double drift = 0.05);

/// Constant-speed, constant-yaw-rate arcs from the origin.
std::vector<decoder::Trajectory> gen_trajectories(std::size_t count, std::size_t horizon, std::uint64_t seed);

struct SceneCase
{
  pdms::Scene scene;
  decoder::Trajectory traj;
};

/// A scored scene with agents placed near the ego path so collisions are common.
SceneCase gen_scene_case(std::uint64_t seed, std::size_t horizon = 8);

/// Reference collision check: steps both boxes in `step` increments over the horizon.
bool brute_force_collides(
  const decoder::Trajectory & traj, const std::vector<pdms::Agent> & agents, const pdms::Config & cfg,
  double step = 1e-3);

/// Reference TTC classification: true when some grid start overlaps within [0, threshold).
bool brute_force_ttc_below(
  const decoder::Trajectory & traj, const std::vector<pdms::Agent> & agents, const pdms::Config & cfg,
  double threshold, double step = 1e-3);

enum class BenchMode { linear, softmax };
const char * bench_mode_name(BenchMode m);

struct BenchRecord
{
  std::size_t frames = 0;
  BenchMode mode = BenchMode::linear;
  double latency_ms = 0.0;  // median per-frame latency over trials
  double min_ms = 0.0;
  double max_ms = 0.0;
  std::size_t state_bytes = 0;
  double wall_ms = 0.0;  // everything spent on this record, warm-up included
};

struct BenchConfig
{
  fusion::FusionConfig fusion;
  std::size_t trials = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 42;
  double drift = 0.05;
  double min_sample_ms = 0.2;  // below this a sample is repeated until it is long enough
  std::ostream * log = nullptr;
};

std::vector<BenchRecord> run_scaling_bench(
  const std::vector<std::size_t> & frames_grid, const std::vector<BenchMode> & modes, const BenchConfig & cfg);

/// Columns: frames,mode,latency_ms,state_bytes,wall_ms
void write_bench_csv(std::ostream & out, const std::vector<BenchRecord> & records);

struct SuiteResult
{
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return failures == 0; }
};

/// Sequential vs chunked states over random (d, heads, B) cases.
SuiteResult chunk_equivalence_suite(std::size_t cases, std::uint64_t seed, bool single_precision);

/// Central-difference derivatives of block outputs through both execution paths.
SuiteResult jacobian_suite(std::uint64_t seed, std::size_t d = 8, std::size_t tokens = 4);

/// fuse_parallel vs a T-step stream, plus mid-stream snapshot resume.
SuiteResult streaming_suite(std::uint64_t seed, std::size_t frames = 10);

SuiteResult lica_causality_suite(std::size_t cases, std::uint64_t seed);

SuiteResult collision_oracle_suite(std::size_t scenes, std::uint64_t seed);

std::vector<SuiteResult> run_equivalence_suites(std::uint64_t seed);
void print_suites(std::ostream & out, const std::vector<SuiteResult> & results);

}  // namespace lady::harness
