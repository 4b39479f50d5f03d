#pragma once

// RWKV-7 block: element projections, generalized delta-rule state recurrence
// (sequential and chunked), time mixing and channel mixing.
//
// Vectors follow the row-vector convention of the model equations: a
// projection x W is evaluated as row_times(x, W). Per-head states are
// head_dim x head_dim matrices indexed [value][key], so a write is v^T k and
// the readout r S^T is S * r.

#include "lady/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace lady::rwkv7
{

enum class Activation { identity, tanh, sigmoid };

Activation parse_activation(std::string_view tag);

/// Low-rank MLP factors: f(x A) B + lambda.
template <typename T>
struct LoraParams
{
  Mat<T> A;
  Mat<T> B;
  Vec<T> lambda;
};

template <typename T>
struct NormParams
{
  Vec<T> gamma;
  Vec<T> beta;

  static NormParams identity(std::size_t d)
  {
    return {Vec<T>::Ones(static_cast<Eigen::Index>(d)), Vec<T>::Zero(static_cast<Eigen::Index>(d))};
  }
};

/// All learned tensors of one block.
template <typename T>
struct BlockParams
{
  std::size_t d = 0;
  std::size_t n_heads = 1;

  Vec<T> mu_r, mu_w, mu_k, mu_v, mu_a, mu_g;
  Vec<T> mu_k_cm;  // channel-mix token shift

  Mat<T> W_r, W_k, W_v, W_o;
  Mat<T> W_k_cm;  // d x ffn
  Mat<T> W_v_cm;  // ffn x d

  LoraParams<T> lora_w, lora_a, lora_v, lora_g;

  Vec<T> xi, alpha, rho;

  NormParams<T> ln_out;  // per-head norm of the time-mix readout
  NormParams<T> ln_tm;   // pre-norm of the time-mix sub-block
  NormParams<T> ln_cm;   // pre-norm of the channel-mix sub-block

  std::size_t head_dim() const { return d / n_heads; }
  std::size_t ffn_dim() const { return static_cast<std::size_t>(W_k_cm.cols()); }

  /// Throws DimensionError / ConfigError when an invariant does not hold.
  void validate() const;
};

template <typename T>
using Stack = std::vector<BlockParams<T>>;

struct BlockShape
{
  std::size_t d = 64;
  std::size_t n_heads = 1;
  std::size_t ffn_dim = 0;    // 0 -> 4 d
  std::size_t lora_rank = 0;  // 0 -> max(1, d / 4)
};

/// Seeded random parameters with scales that keep activations O(1).
template <typename T>
BlockParams<T> random_block(const BlockShape & shape, std::uint64_t seed);

template <typename T>
Stack<T> random_stack(const BlockShape & shape, std::size_t n_layers, std::uint64_t seed);

/// Per-token elements of the time-mixing sub-block.
template <typename T>
struct ElementSet
{
  Vec<T> r, w, k, kappa, k_tilde, v, a, g, nu;
  Vec<T> v_first;  // layer-0 value used for the value residual
};

/// One state matrix per head.
template <typename T>
using HeadStates = std::vector<Mat<T>>;

template <typename T>
HeadStates<T> zero_heads(std::size_t n_heads, std::size_t head_dim);

template <typename T>
struct LayerState
{
  HeadStates<T> heads;
  Vec<T> shift_tm;
  Vec<T> shift_cm;
};

/// The complete memory of a streaming session.
template <typename T>
struct RecurrentState
{
  std::vector<LayerState<T>> layers;
  std::uint64_t tokens_consumed = 0;

  static RecurrentState fresh(std::size_t d, std::size_t n_heads, std::size_t n_layers);
  static RecurrentState fresh_for(const Stack<T> & stack);

  std::size_t d() const;
  std::size_t n_heads() const;
  std::size_t n_layers() const { return layers.size(); }

  /// Bytes held by the state tensors plus the token counter.
  std::size_t byte_size() const;

  /// Throws ConfigError when the state cannot serve the given stack.
  void check_compatible(const Stack<T> & stack) const;

  bool operator==(const RecurrentState & other) const;
};

template <typename T>
Vec<T> lerp(const Vec<T> & a, const Vec<T> & b, const Vec<T> & mu);

template <typename T>
Vec<T> loramlp(Activation f, const Vec<T> & x, const LoraParams<T> & lora, bool bias);

/// Computes the elements for token x and advances state.layers[layer].shift_tm.
/// v_first must be given iff layer >= 1.
template <typename T>
ElementSet<T> project_elements(
  const Vec<T> & x, const BlockParams<T> & params, RecurrentState<T> & state, std::size_t layer,
  const Vec<T> * v_first = nullptr);

inline constexpr double kKappaEps = 1e-12;

/// S_t = S_{t-1} (diag(w) - kh^T (a * kh)) + v^T k_tilde, per head.
template <typename T>
HeadStates<T> state_step(const HeadStates<T> & prev, const ElementSet<T> & e);

/// Causal decay tensor: at(i, j) = prod_{m=j..i} w_m for j <= i, zero otherwise.
template <typename T>
class DecayMatrix
{
public:
  explicit DecayMatrix(std::span<const Vec<T>> w);

  std::size_t chunk_len() const { return len_; }
  std::size_t dim() const { return dim_; }
  const Vec<T> & at(std::size_t i, std::size_t j) const { return entries_[i * len_ + j]; }

private:
  std::size_t len_;
  std::size_t dim_;
  std::vector<Vec<T>> entries_;
};

template <typename T>
DecayMatrix<T> decay_matrix(std::span<const Vec<T>> w);

/// Stacked per-chunk quantities feeding the chunked recurrence.
template <typename T>
struct ChunkMatrices
{
  DecayMatrix<T> delta;
  Mat<T> U;          // a_t / |kappa_t| per head
  Mat<T> K_tilde;
  Mat<T> V;
  Mat<T> kappa_hat;  // kappa_t / |kappa_t| per head
  std::size_t len;
};

template <typename T>
ChunkMatrices<T> chunk_matrices(std::span<const ElementSet<T>> elements, std::size_t n_heads);

template <typename T>
struct ChunkResult
{
  std::vector<HeadStates<T>> states;  // one per token in the chunk
  HeadStates<T> out;
};

/// All intermediate states of a chunk, computed from the decay tensor and a
/// triangular solve for the removal terms rather than token-by-token.
template <typename T>
ChunkResult<T> chunk_forward(const HeadStates<T> & in, std::span<const ElementSet<T>> elements);

template <typename T>
struct ChunkReadout
{
  Tokens<T> readout;  // row i = r_i S_i^T, heads concatenated
  HeadStates<T> out;
};

/// Chunked readouts without materialising intermediate states.
template <typename T>
ChunkReadout<T> chunk_readout(const HeadStates<T> & in, std::span<const ElementSet<T>> elements);

/// r S^T per head, concatenated.
template <typename T>
Vec<T> state_readout(const ElementSet<T> & e, const HeadStates<T> & s);

template <typename T>
Vec<T> time_mix_from_readout(
  const ElementSet<T> & e, const Vec<T> & readout, const BlockParams<T> & params);

template <typename T>
Vec<T> time_mix_output(const ElementSet<T> & e, const HeadStates<T> & s, const BlockParams<T> & params);

template <typename T>
Vec<T> channel_mix(
  const Vec<T> & x, const BlockParams<T> & params, RecurrentState<T> & state, std::size_t layer);

enum class Mode { sequential, chunked };

struct ExecConfig
{
  Mode mode = Mode::sequential;
  std::size_t chunk_size = 0;

  void validate() const;

  static ExecConfig sequential() { return {Mode::sequential, 0}; }
  static ExecConfig chunked(std::size_t chunk) { return {Mode::chunked, chunk}; }
};

template <typename T>
struct BlockOutput
{
  Tokens<T> tokens;
  Tokens<T> v_first;  // filled for layer 0, empty otherwise
};

/// Pre-norm residual block. Mutates state so that a later call continues the stream.
template <typename T>
BlockOutput<T> block_forward(
  const Tokens<T> & tokens, const BlockParams<T> & params, RecurrentState<T> & state,
  std::size_t layer, const ExecConfig & exec, const Tokens<T> * v_first = nullptr);

/// Runs every layer of the stack over the tokens, threading layer-0 values.
template <typename T>
Tokens<T> stack_forward(
  const Tokens<T> & tokens, const Stack<T> & stack, RecurrentState<T> & state,
  const ExecConfig & exec);

}  // namespace lady::rwkv7
