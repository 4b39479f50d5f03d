#pragma once

// Multi-frame camera/LiDAR token fusion. Training-style fusion runs the whole
// frame-major sequence through the block stack in chunked mode; streaming
// inference feeds one frame at a time against a persistent RecurrentState.

#include "lady/rwkv7.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace lady::fusion
{

template <typename T>
struct FrameTokens
{
  Tokens<T> camera;  // L_c x d
  Tokens<T> lidar;   // L_l x d
  std::int64_t t = 0;
};

enum class Command { turn_left, turn_right, lane_change, follow };

Command parse_command(std::string_view name);
std::string_view command_name(Command c);

struct EgoStatus
{
  double velocity = 0.0;      // m/s
  double acceleration = 0.0;  // m/s^2
  Command command = Command::follow;

  void validate() const;
};

/// Width of the ego feature vector: velocity, acceleration and a one-hot
/// over the non-default commands (follow encodes as all zeros).
inline constexpr std::size_t kEgoFeatures = 5;

template <typename T>
Vec<T> ego_features(const EgoStatus & ego);

struct FusionConfig
{
  std::size_t d = 64;
  std::size_t n_heads = 1;
  std::size_t n_layers = 2;
  std::size_t camera_tokens = 16;
  std::size_t lidar_tokens = 16;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t chunk_size = 64;
  double p_bev = 0.1;
  double p_ego = 0.5;

  std::size_t frame_tokens() const { return camera_tokens + lidar_tokens; }
  void validate() const;
};

template <typename T>
struct FusionParams
{
  rwkv7::Stack<T> stack;
  Tokens<T> pos_emb;  // (L_c + L_l) x d, shared by every frame

  static FusionParams random(const FusionConfig & cfg, std::uint64_t seed);
};

/// Frame-major concatenation [cam_1 | lid_1, ..., cam_T | lid_T] plus the spatial table.
template <typename T>
Tokens<T> build_frame_sequence(std::span<const FrameTokens<T>> frames, const Tokens<T> & pos_emb);

/// Prepends all-zero frames so that exactly `required` frames remain.
template <typename T>
std::vector<FrameTokens<T>> pad_history(
  std::vector<FrameTokens<T>> frames, std::size_t required, const FusionConfig & cfg);

/// Chunked fusion of a whole multi-frame sequence from a fresh state.
template <typename T>
Tokens<T> fuse_parallel(const Tokens<T> & seq, const rwkv7::Stack<T> & stack, std::size_t chunk_size);

/// Streaming fusion of one frame; only the current frame's tokens are consumed.
template <typename T>
Tokens<T> fuse_step(
  const FrameTokens<T> & frame, const FusionParams<T> & params, rwkv7::RecurrentState<T> & state,
  const rwkv7::ExecConfig & exec = rwkv7::ExecConfig::sequential());

/// Lidar rows of a fused frame (the camera rows come first).
template <typename T>
Tokens<T> fused_lidar(const Tokens<T> & fused_frame, const FusionConfig & cfg);

template <typename T>
struct BevParams
{
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<Mat<T>> kernel;  // 9 taps (row-major over offsets -1..1), each d x d
  Vec<T> bias;
  Mat<T> ego_weight;  // kEgoFeatures x d
  Vec<T> ego_bias;
  Tokens<T> pos_emb;  // (grid_h * grid_w + 1) x d

  static BevParams identity(std::size_t d, std::size_t grid_h, std::size_t grid_w);
  static BevParams random(std::size_t d, std::size_t grid_h, std::size_t grid_w, std::uint64_t seed);
};

/// BEV tokens and ego token before positional embedding; tokens() adds the table once.
template <typename T>
struct BevBundle
{
  Tokens<T> bev_tokens;
  Vec<T> ego_token;
  Tokens<T> pos_emb;

  Tokens<T> tokens() const;
};

/// 3x3 local aggregation over the lidar grid plus an affine ego embedding.
template <typename T>
BevBundle<T> assemble_bev(const Tokens<T> & lidar, const EgoStatus & ego, const BevParams<T> & params);

/// Training-time dropout of whole BEV tokens and of the ego token.
template <typename T>
BevBundle<T> feature_state_dropout(const BevBundle<T> & bundle, double p_bev, double p_ego, std::uint64_t seed);

/// One streaming inference session: owns the only cross-frame memory.
template <typename T>
class StreamingSession
{
public:
  StreamingSession(const FusionParams<T> & params, const FusionConfig & cfg);

  /// Fused tokens of the current frame.
  Tokens<T> step(const FrameTokens<T> & frame);

  const rwkv7::RecurrentState<T> & state() const { return state_; }
  std::uint64_t frames() const { return frames_; }
  std::size_t persistent_bytes() const { return state_.byte_size() + sizeof(frames_); }

  void save(const std::filesystem::path & path) const;
  void restore(const std::filesystem::path & path);

private:
  const FusionParams<T> * params_;
  FusionConfig cfg_;
  rwkv7::RecurrentState<T> state_;
  std::uint64_t frames_ = 0;
};

}  // namespace lady::fusion
