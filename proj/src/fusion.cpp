#include "lady/fusion.hpp"

#include "lady/rwkv7_io.hpp"

#include <cmath>
#include <random>
#include <string>

namespace lady::fusion
{

Command parse_command(std::string_view name)
{
  if (name == "turn-left") return Command::turn_left;
  if (name == "turn-right") return Command::turn_right;
  if (name == "lane-change") return Command::lane_change;
  if (name == "follow") return Command::follow;
  throw ConfigError("unknown driving command '" + std::string(name) + "'");
}

std::string_view command_name(Command c)
{
  switch (c) {
    case Command::turn_left:
      return "turn-left";
    case Command::turn_right:
      return "turn-right";
    case Command::lane_change:
      return "lane-change";
    case Command::follow:
      return "follow";
  }
  throw ConfigError("invalid driving command");
}

void EgoStatus::validate() const
{
  if (!std::isfinite(velocity) || !std::isfinite(acceleration)) {
    throw ConfigError("ego status: non-finite velocity or acceleration");
  }
  (void)command_name(command);
}

template <typename T>
Vec<T> ego_features(const EgoStatus & ego)
{
  ego.validate();
  Vec<T> f = Vec<T>::Zero(kEgoFeatures);
  f[0] = static_cast<T>(ego.velocity);
  f[1] = static_cast<T>(ego.acceleration);
  switch (ego.command) {
    case Command::turn_left:
      f[2] = T(1);
      break;
    case Command::turn_right:
      f[3] = T(1);
      break;
    case Command::lane_change:
      f[4] = T(1);
      break;
    case Command::follow:
      break;
  }
  return f;
}

void FusionConfig::validate() const
{
  if (d == 0 || n_heads == 0 || d % n_heads != 0) throw ConfigError("fusion: d must be a positive multiple of n_heads");
  if (n_layers == 0) throw ConfigError("fusion: at least one layer required");
  if (camera_tokens == 0 || lidar_tokens == 0) throw ConfigError("fusion: token counts must be positive");
  if (grid_h * grid_w != lidar_tokens) throw ConfigError("fusion: lidar tokens must fill the BEV grid");
  if (chunk_size == 0) throw ConfigError("fusion: chunk_size must be positive");
  if (!(p_bev >= 0 && p_bev <= 1) || !(p_ego >= 0 && p_ego <= 1)) {
    throw ConfigError("fusion: dropout probabilities must lie in [0,1]");
  }
}

template <typename T>
FusionParams<T> FusionParams<T>::random(const FusionConfig & cfg, std::uint64_t seed)
{
  cfg.validate();
  FusionParams p;
  p.stack = rwkv7::random_stack<T>({cfg.d, cfg.n_heads, 0, 0}, cfg.n_layers, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 0.1);
  p.pos_emb.resize(static_cast<Eigen::Index>(cfg.frame_tokens()), static_cast<Eigen::Index>(cfg.d));
  for (Eigen::Index i = 0; i < p.pos_emb.size(); ++i) p.pos_emb.data()[i] = static_cast<T>(normal(rng));
  return p;
}

template <typename T>
Tokens<T> build_frame_sequence(std::span<const FrameTokens<T>> frames, const Tokens<T> & pos_emb)
{
  if (frames.empty()) throw ContractViolation("build_frame_sequence: at least one frame required");
  const auto d = pos_emb.cols();
  const auto per_frame = pos_emb.rows();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto & f = frames[k];
    if (f.camera.rows() + f.lidar.rows() != per_frame) {
      throw DimensionError("build_frame_sequence: frame token count differs from the positional table");
    }
    if ((f.camera.rows() > 0 && f.camera.cols() != d) || (f.lidar.rows() > 0 && f.lidar.cols() != d)) {
      throw DimensionError("build_frame_sequence: token dim differs from the positional table");
    }
    if (k > 0 && f.t <= frames[k - 1].t) {
      throw OrderingError("build_frame_sequence: frame indices must strictly increase");
    }
  }
  Tokens<T> seq(per_frame * static_cast<Eigen::Index>(frames.size()), d);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto off = static_cast<Eigen::Index>(k) * per_frame;
    const auto & f = frames[k];
    seq.middleRows(off, f.camera.rows()) = f.camera;
    seq.middleRows(off + f.camera.rows(), f.lidar.rows()) = f.lidar;
    seq.middleRows(off, per_frame) += pos_emb;
  }
  return seq;
}

template <typename T>
std::vector<FrameTokens<T>> pad_history(
  std::vector<FrameTokens<T>> frames, std::size_t required, const FusionConfig & cfg)
{
  if (frames.size() > required) {
    throw ContractViolation(
      "pad_history: " + std::to_string(frames.size()) + " frames exceed the required " +
      std::to_string(required) + "; truncate explicitly");
  }
  const std::size_t missing = required - frames.size();
  if (missing == 0) return frames;
  const std::int64_t first = frames.empty() ? static_cast<std::int64_t>(missing) : frames.front().t;
  const auto d = static_cast<Eigen::Index>(cfg.d);
  std::vector<FrameTokens<T>> out;
  out.reserve(required);
  for (std::size_t k = 0; k < missing; ++k) {
    out.push_back(
      {Tokens<T>::Zero(static_cast<Eigen::Index>(cfg.camera_tokens), d),
       Tokens<T>::Zero(static_cast<Eigen::Index>(cfg.lidar_tokens), d),
       first - static_cast<std::int64_t>(missing - k)});
  }
  for (auto & f : frames) out.push_back(std::move(f));
  return out;
}

template <typename T>
Tokens<T> fuse_parallel(const Tokens<T> & seq, const rwkv7::Stack<T> & stack, std::size_t chunk_size)
{
  auto state = rwkv7::RecurrentState<T>::fresh_for(stack);
  return rwkv7::stack_forward(seq, stack, state, rwkv7::ExecConfig::chunked(chunk_size));
}

template <typename T>
Tokens<T> fuse_step(
  const FrameTokens<T> & frame, const FusionParams<T> & params, rwkv7::RecurrentState<T> & state,
  const rwkv7::ExecConfig & exec)
{
  state.check_compatible(params.stack);
  const std::span<const FrameTokens<T>> one(&frame, 1);
  return rwkv7::stack_forward(build_frame_sequence(one, params.pos_emb), params.stack, state, exec);
}

template <typename T>
Tokens<T> fused_lidar(const Tokens<T> & fused_frame, const FusionConfig & cfg)
{
  if (static_cast<std::size_t>(fused_frame.rows()) != cfg.frame_tokens()) {
    throw DimensionError("fused_lidar: fused frame has the wrong token count");
  }
  return fused_frame.bottomRows(static_cast<Eigen::Index>(cfg.lidar_tokens));
}

template <typename T>
BevParams<T> BevParams<T>::identity(std::size_t d, std::size_t grid_h, std::size_t grid_w)
{
  const auto di = static_cast<Eigen::Index>(d);
  BevParams p;
  p.grid_h = grid_h;
  p.grid_w = grid_w;
  p.kernel.assign(9, Mat<T>::Zero(di, di));
  p.kernel[4] = Mat<T>::Identity(di, di);
  p.bias = Vec<T>::Zero(di);
  p.ego_weight = Mat<T>::Zero(kEgoFeatures, di);
  p.ego_bias = Vec<T>::Zero(di);
  p.pos_emb = Tokens<T>::Zero(static_cast<Eigen::Index>(grid_h * grid_w + 1), di);
  return p;
}

template <typename T>
BevParams<T> BevParams<T>::random(std::size_t d, std::size_t grid_h, std::size_t grid_w, std::uint64_t seed)
{
  auto p = identity(d, grid_h, grid_w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double tap = 1.0 / std::sqrt(9.0 * static_cast<double>(d));
  auto fill = [&](auto & m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * normal(rng));
  };
  for (auto & k : p.kernel) fill(k, tap);
  fill(p.bias, 0.1);
  fill(p.ego_weight, 0.5);
  fill(p.ego_bias, 0.1);
  fill(p.pos_emb, 0.1);
  return p;
}

template <typename T>
Tokens<T> BevBundle<T>::tokens() const
{
  const auto n = bev_tokens.rows();
  if (pos_emb.rows() != n + 1 || pos_emb.cols() != bev_tokens.cols()) {
    throw DimensionError("bev bundle: positional table does not match the tokens");
  }
  Tokens<T> out(n + 1, bev_tokens.cols());
  out.topRows(n) = bev_tokens;
  out.row(n) = ego_token.transpose();
  out += pos_emb;
  return out;
}

template <typename T>
BevBundle<T> assemble_bev(const Tokens<T> & lidar, const EgoStatus & ego, const BevParams<T> & params)
{
  const auto h = static_cast<Eigen::Index>(params.grid_h);
  const auto w = static_cast<Eigen::Index>(params.grid_w);
  if (lidar.rows() != h * w) {
    throw DimensionError(
      "assemble_bev: " + std::to_string(lidar.rows()) + " lidar tokens do not fill a " +
      std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  const auto d = lidar.cols();
  if (params.kernel.size() != 9 || params.bias.size() != d || params.ego_bias.size() != d ||
      params.ego_weight.rows() != static_cast<Eigen::Index>(kEgoFeatures) || params.ego_weight.cols() != d) {
    throw DimensionError("assemble_bev: projection parameters do not match token dim");
  }
  for (const auto & k : params.kernel) {
    if (k.rows() != d || k.cols() != d) throw DimensionError("assemble_bev: kernel tap shape");
  }

  BevBundle<T> out;
  out.bev_tokens.resize(h * w, d);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      Vec<T> acc = params.bias;
      for (Eigen::Index di = -1; di <= 1; ++di) {
        for (Eigen::Index dj = -1; dj <= 1; ++dj) {
          const auto ni = i + di;
          const auto nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
          const auto & tap = params.kernel[static_cast<std::size_t>((di + 1) * 3 + (dj + 1))];
          acc.noalias() += (lidar.row(ni * w + nj) * tap).transpose();
        }
      }
      out.bev_tokens.row(i * w + j) = acc.transpose();
    }
  }
  out.ego_token = row_times(ego_features<T>(ego), params.ego_weight) + params.ego_bias;
  out.pos_emb = params.pos_emb;
  if (out.pos_emb.rows() != h * w + 1 || out.pos_emb.cols() != d) {
    throw DimensionError("assemble_bev: positional table must have grid + 1 rows");
  }
  return out;
}

template <typename T>
BevBundle<T> feature_state_dropout(const BevBundle<T> & bundle, double p_bev, double p_ego, std::uint64_t seed)
{
  if (!(p_bev >= 0 && p_bev <= 1) || !(p_ego >= 0 && p_ego <= 1)) {
    throw ConfigError("feature_state_dropout: probabilities must lie in [0,1]");
  }
  BevBundle<T> out = bundle;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop_bev(p_bev);
  std::bernoulli_distribution drop_ego(p_ego);
  for (Eigen::Index i = 0; i < out.bev_tokens.rows(); ++i) {
    if (drop_bev(rng)) out.bev_tokens.row(i).setZero();
  }
  if (drop_ego(rng)) out.ego_token.setZero();
  return out;
}

template <typename T>
StreamingSession<T>::StreamingSession(const FusionParams<T> & params, const FusionConfig & cfg)
: params_(&params), cfg_(cfg), state_(rwkv7::RecurrentState<T>::fresh_for(params.stack))
{
  cfg_.validate();
}

template <typename T>
Tokens<T> StreamingSession<T>::step(const FrameTokens<T> & frame)
{
  auto out = fuse_step(frame, *params_, state_);
  ++frames_;
  return out;
}

template <typename T>
void StreamingSession<T>::save(const std::filesystem::path & path) const
{
  rwkv7::save_state(state_, path, {frames_});
}

template <typename T>
void StreamingSession<T>::restore(const std::filesystem::path & path)
{
  rwkv7::SnapshotInfo info;
  auto state = rwkv7::load_state<T>(path, &info);
  state.check_compatible(params_->stack);
  state_ = std::move(state);
  frames_ = info.frames;
}

#define LADY_FUSION_INSTANTIATE(T)                                                                   \
  template Vec<T> ego_features<T>(const EgoStatus &);                                                \
  template struct FusionParams<T>;                                                                   \
  template struct BevParams<T>;                                                                      \
  template struct BevBundle<T>;                                                                      \
  template class StreamingSession<T>;                                                                \
  template Tokens<T> build_frame_sequence<T>(std::span<const FrameTokens<T>>, const Tokens<T> &);    \
  template std::vector<FrameTokens<T>> pad_history<T>(                                               \
    std::vector<FrameTokens<T>>, std::size_t, const FusionConfig &);                                 \
  template Tokens<T> fuse_parallel<T>(const Tokens<T> &, const rwkv7::Stack<T> &, std::size_t);      \
  template Tokens<T> fuse_step<T>(                                                                   \
    const FrameTokens<T> &, const FusionParams<T> &, rwkv7::RecurrentState<T> &,                     \
    const rwkv7::ExecConfig &);                                                                      \
  template Tokens<T> fused_lidar<T>(const Tokens<T> &, const FusionConfig &);                        \
  template BevBundle<T> assemble_bev<T>(const Tokens<T> &, const EgoStatus &, const BevParams<T> &); \
  template BevBundle<T> feature_state_dropout<T>(const BevBundle<T> &, double, double, std::uint64_t);

LADY_FUSION_INSTANTIATE(float)
LADY_FUSION_INSTANTIATE(double)

#undef LADY_FUSION_INSTANTIATE

}  // namespace lady::fusion
