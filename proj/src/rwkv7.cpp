#include "lady/rwkv7.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace lady::rwkv7
{

Activation parse_activation(std::string_view tag)
{
  if (tag == "identity") return Activation::identity;
  if (tag == "tanh") return Activation::tanh;
  if (tag == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation tag '" + std::string(tag) + "'");
}

namespace
{

template <typename T>
void check_vec(const Vec<T> & v, std::size_t n, const char * name)
{
  if (static_cast<std::size_t>(v.size()) != n) {
    throw DimensionError(
      std::string(name) + ": expected length " + std::to_string(n) + ", got " +
      std::to_string(v.size()));
  }
}

template <typename T>
void check_mat(const Mat<T> & m, std::size_t rows, std::size_t cols, const char * name)
{
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
    throw DimensionError(
      std::string(name) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
      ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

template <typename T>
void check_mix(const Vec<T> & mu, std::size_t d, const char * name)
{
  check_vec(mu, d, name);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (!(mu[i] >= T(0) && mu[i] <= T(1))) {
      throw ConfigError(std::string(name) + ": mix coefficient outside [0,1]");
    }
  }
}

template <typename T>
void check_lora(const LoraParams<T> & lora, std::size_t d, const char * name)
{
  const auto rank = static_cast<std::size_t>(lora.A.cols());
  if (rank < 1 || rank > d) {
    throw ConfigError(std::string(name) + ": lora rank must lie in [1, d]");
  }
  check_mat(lora.A, d, rank, name);
  check_mat(lora.B, rank, d, name);
  check_vec(lora.lambda, d, name);
}

template <typename T>
Vec<T> apply(Activation f, Vec<T> h)
{
  switch (f) {
    case Activation::identity:
      return h;
    case Activation::tanh:
      return h.array().tanh().matrix();
    case Activation::sigmoid:
      return sigmoid(h);
  }
  throw ConfigError("unknown activation");
}

template <typename T>
bool all_finite(const ElementSet<T> & e)
{
  return e.r.allFinite() && e.w.allFinite() && e.kappa.allFinite() && e.k_tilde.allFinite() &&
         e.v.allFinite() && e.a.allFinite();
}

}  // namespace

template <typename T>
void BlockParams<T>::validate() const
{
  if (d == 0 || n_heads == 0) throw ConfigError("block: d and n_heads must be positive");
  if (d % n_heads != 0) throw ConfigError("block: d must be divisible by n_heads");
  for (const auto * mu : {&mu_r, &mu_w, &mu_k, &mu_v, &mu_a, &mu_g, &mu_k_cm}) {
    check_mix(*mu, d, "mu");
  }
  check_mat(W_r, d, d, "W_r");
  check_mat(W_k, d, d, "W_k");
  check_mat(W_v, d, d, "W_v");
  check_mat(W_o, d, d, "W_o");
  if (W_k_cm.cols() < 1) throw DimensionError("W_k_cm: empty hidden dimension");
  check_mat(W_k_cm, d, ffn_dim(), "W_k_cm");
  check_mat(W_v_cm, ffn_dim(), d, "W_v_cm");
  check_lora(lora_w, d, "lora_w");
  check_lora(lora_a, d, "lora_a");
  check_lora(lora_v, d, "lora_v");
  check_lora(lora_g, d, "lora_g");
  check_vec(xi, d, "xi");
  check_vec(alpha, d, "alpha");
  check_vec(rho, d, "rho");
  for (const auto * n : {&ln_out, &ln_tm, &ln_cm}) {
    check_vec(n->gamma, d, "norm gamma");
    check_vec(n->beta, d, "norm beta");
  }
}

template <typename T>
BlockParams<T> random_block(const BlockShape & shape, std::uint64_t seed)
{
  const std::size_t d = shape.d;
  if (d == 0 || shape.n_heads == 0 || d % shape.n_heads != 0) {
    throw ConfigError("random_block: d must be a positive multiple of n_heads");
  }
  const std::size_t ffn = shape.ffn_dim ? shape.ffn_dim : 4 * d;
  const std::size_t rank = shape.lora_rank ? shape.lora_rank : std::max<std::size_t>(1, d / 4);
  const auto di = static_cast<Eigen::Index>(d);

  // Draws are made in double and cast so float and double blocks share values.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto gaussian = [&](std::size_t rows, std::size_t cols, double scale) {
    Mat<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * normal(rng));
    return m;
  };
  auto gaussian_vec = [&](double mean, double scale) {
    Vec<T> v(di);
    for (Eigen::Index i = 0; i < di; ++i) v[i] = static_cast<T>(mean + scale * normal(rng));
    return v;
  };
  auto uniform_vec = [&](double lo, double hi) {
    Vec<T> v(di);
    for (Eigen::Index i = 0; i < di; ++i) v[i] = static_cast<T>(lo + (hi - lo) * unit(rng));
    return v;
  };
  auto lora = [&](double bias_mean, double bias_scale) {
    LoraParams<T> p;
    p.A = gaussian(d, rank, 1.0 / std::sqrt(static_cast<double>(d)));
    p.B = gaussian(rank, d, 0.5 / std::sqrt(static_cast<double>(rank)));
    p.lambda = gaussian_vec(bias_mean, bias_scale);
    return p;
  };

  BlockParams<T> p;
  p.d = d;
  p.n_heads = shape.n_heads;
  p.mu_r = uniform_vec(0, 1);
  p.mu_w = uniform_vec(0, 1);
  p.mu_k = uniform_vec(0, 1);
  p.mu_v = uniform_vec(0, 1);
  p.mu_a = uniform_vec(0, 1);
  p.mu_g = uniform_vec(0, 1);
  p.mu_k_cm = uniform_vec(0, 1);

  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  p.W_r = gaussian(d, d, proj);
  p.W_k = gaussian(d, d, proj);
  p.W_v = gaussian(d, d, proj);
  p.W_o = gaussian(d, d, proj);
  p.W_k_cm = gaussian(d, ffn, proj);
  p.W_v_cm = gaussian(ffn, d, 1.0 / std::sqrt(static_cast<double>(ffn)));

  p.lora_w = lora(0.0, 1.0);
  p.lora_a = lora(0.0, 1.0);
  p.lora_v = lora(0.0, 1.0);
  p.lora_g = lora(0.0, 0.0);

  p.xi = uniform_vec(0.5, 1.5);
  p.alpha = uniform_vec(0.0, 1.0);
  p.rho = gaussian_vec(0.0, 0.5);

  p.ln_out = NormParams<T>::identity(d);
  p.ln_tm = NormParams<T>::identity(d);
  p.ln_cm = NormParams<T>::identity(d);
  return p;
}

template <typename T>
Stack<T> random_stack(const BlockShape & shape, std::size_t n_layers, std::uint64_t seed)
{
  Stack<T> stack;
  stack.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    stack.push_back(random_block<T>(shape, seed * 1000003ULL + l * 7919ULL + 1));
  }
  return stack;
}

template <typename T>
HeadStates<T> zero_heads(std::size_t n_heads, std::size_t head_dim)
{
  const auto hd = static_cast<Eigen::Index>(head_dim);
  return HeadStates<T>(n_heads, Mat<T>::Zero(hd, hd));
}

template <typename T>
RecurrentState<T> RecurrentState<T>::fresh(std::size_t d, std::size_t n_heads, std::size_t n_layers)
{
  if (d == 0 || n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("state: d must be a positive multiple of n_heads");
  }
  RecurrentState s;
  s.layers.resize(n_layers);
  for (auto & layer : s.layers) {
    layer.heads = zero_heads<T>(n_heads, d / n_heads);
    layer.shift_tm = Vec<T>::Zero(static_cast<Eigen::Index>(d));
    layer.shift_cm = Vec<T>::Zero(static_cast<Eigen::Index>(d));
  }
  return s;
}

template <typename T>
RecurrentState<T> RecurrentState<T>::fresh_for(const Stack<T> & stack)
{
  if (stack.empty()) throw ConfigError("state: empty block stack");
  return fresh(stack.front().d, stack.front().n_heads, stack.size());
}

template <typename T>
std::size_t RecurrentState<T>::d() const
{
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().shift_tm.size());
}

template <typename T>
std::size_t RecurrentState<T>::n_heads() const
{
  return layers.empty() ? 0 : layers.front().heads.size();
}

template <typename T>
std::size_t RecurrentState<T>::byte_size() const
{
  std::size_t elements = 0;
  for (const auto & layer : layers) {
    for (const auto & s : layer.heads) elements += static_cast<std::size_t>(s.size());
    elements += static_cast<std::size_t>(layer.shift_tm.size() + layer.shift_cm.size());
  }
  return elements * sizeof(T) + sizeof(tokens_consumed);
}

template <typename T>
void RecurrentState<T>::check_compatible(const Stack<T> & stack) const
{
  if (stack.size() != layers.size()) {
    throw ConfigError(
      "state has " + std::to_string(layers.size()) + " layers, stack has " +
      std::to_string(stack.size()));
  }
  for (std::size_t l = 0; l < stack.size(); ++l) {
    const auto & p = stack[l];
    const auto & ls = layers[l];
    if (ls.heads.size() != p.n_heads || static_cast<std::size_t>(ls.shift_tm.size()) != p.d ||
        static_cast<std::size_t>(ls.shift_cm.size()) != p.d) {
      throw ConfigError("state/params dimension mismatch at layer " + std::to_string(l));
    }
    for (const auto & s : ls.heads) {
      if (static_cast<std::size_t>(s.rows()) != p.head_dim() ||
          static_cast<std::size_t>(s.cols()) != p.head_dim()) {
        throw ConfigError("state head shape mismatch at layer " + std::to_string(l));
      }
    }
  }
}

template <typename T>
bool RecurrentState<T>::operator==(const RecurrentState & other) const
{
  if (tokens_consumed != other.tokens_consumed || layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto & a = layers[l];
    const auto & b = other.layers[l];
    if (a.heads.size() != b.heads.size()) return false;
    for (std::size_t h = 0; h < a.heads.size(); ++h) {
      if (a.heads[h].rows() != b.heads[h].rows() || a.heads[h] != b.heads[h]) return false;
    }
    if (a.shift_tm.size() != b.shift_tm.size() || a.shift_tm != b.shift_tm) return false;
    if (a.shift_cm.size() != b.shift_cm.size() || a.shift_cm != b.shift_cm) return false;
  }
  return true;
}

template <typename T>
Vec<T> lerp(const Vec<T> & a, const Vec<T> & b, const Vec<T> & mu)
{
  require_same_size(a.size(), b.size(), "lerp");
  require_same_size(a.size(), mu.size(), "lerp");
  return (a.array() + (b - a).array() * mu.array()).matrix();
}

template <typename T>
Vec<T> loramlp(Activation f, const Vec<T> & x, const LoraParams<T> & lora, bool bias)
{
  if (lora.A.cols() != lora.B.rows()) throw DimensionError("loramlp: A and B do not chain");
  Vec<T> out = row_times(apply(f, row_times(x, lora.A)), lora.B);
  if (bias) {
    require_same_size(out.size(), lora.lambda.size(), "loramlp bias");
    out += lora.lambda;
  }
  return out;
}

template <typename T>
ElementSet<T> project_elements(
  const Vec<T> & x, const BlockParams<T> & params, RecurrentState<T> & state, std::size_t layer,
  const Vec<T> * v_first)
{
  if (layer >= state.layers.size()) throw ConfigError("project_elements: layer out of range");
  if ((layer >= 1) != (v_first != nullptr)) {
    throw ContractViolation("project_elements: layer-0 value required iff layer >= 1");
  }
  require_same_size(x.size(), static_cast<Eigen::Index>(params.d), "project_elements");
  auto & ls = state.layers[layer];
  const Vec<T> & prev = ls.shift_tm;

  const Vec<T> xr = lerp(x, prev, params.mu_r);
  const Vec<T> xw = lerp(x, prev, params.mu_w);
  const Vec<T> xk = lerp(x, prev, params.mu_k);
  const Vec<T> xv = lerp(x, prev, params.mu_v);
  const Vec<T> xa = lerp(x, prev, params.mu_a);
  const Vec<T> xg = lerp(x, prev, params.mu_g);

  static const T decay_scale = static_cast<T>(std::exp(-0.5));

  ElementSet<T> e;
  e.r = row_times(xr, params.W_r);
  e.w = (-decay_scale * sigmoid(loramlp(Activation::tanh, xw, params.lora_w, true)).array())
          .exp()
          .matrix();
  e.k = row_times(xk, params.W_k);
  e.kappa = e.k.cwiseProduct(params.xi);
  e.a = sigmoid(loramlp(Activation::identity, xa, params.lora_a, true));
  const Vec<T> ones = Vec<T>::Ones(x.size());
  e.k_tilde = e.k.cwiseProduct(lerp(ones, e.a, params.alpha));
  e.nu = sigmoid(loramlp(Activation::identity, xv, params.lora_v, true));
  const Vec<T> v_layer = row_times(xv, params.W_v);
  if (layer == 0) {
    e.v = v_layer;
    e.v_first = v_layer;
  } else {
    require_same_size(v_first->size(), x.size(), "project_elements v_first");
    e.v = lerp(*v_first, v_layer, e.nu);
    e.v_first = *v_first;
  }
  e.g = loramlp(Activation::sigmoid, xg, params.lora_g, false);

  ls.shift_tm = x;
  return e;
}

template <typename T>
HeadStates<T> state_step(const HeadStates<T> & prev, const ElementSet<T> & e)
{
  if (prev.empty()) throw DimensionError("state_step: no heads");
  const auto hd = prev.front().rows();
  const auto d = hd * static_cast<Eigen::Index>(prev.size());
  for (const Vec<T> * v : {&e.w, &e.kappa, &e.a, &e.k_tilde, &e.v}) {
    require_same_size(v->size(), d, "state_step");
  }
  if (!all_finite(e)) throw NumericError("state_step: non-finite element");

  HeadStates<T> next(prev.size());
  for (std::size_t h = 0; h < prev.size(); ++h) {
    const Mat<T> & s = prev[h];
    if (s.rows() != hd || s.cols() != hd) throw DimensionError("state_step: ragged head states");
    const auto off = static_cast<Eigen::Index>(h) * hd;
    const auto kappa = e.kappa.segment(off, hd);
    const T norm = kappa.norm() + static_cast<T>(kKappaEps);
    const Vec<T> kh = kappa / norm;
    const Vec<T> removal = e.a.segment(off, hd).cwiseProduct(kh);
    const Vec<T> sk = s * kh;

    Mat<T> n = s * e.w.segment(off, hd).asDiagonal();
    n.noalias() -= sk * removal.transpose();
    n.noalias() += e.v.segment(off, hd) * e.k_tilde.segment(off, hd).transpose();
    next[h] = std::move(n);
  }
  return next;
}

template <typename T>
DecayMatrix<T>::DecayMatrix(std::span<const Vec<T>> w) : len_(w.size()), dim_(0)
{
  if (w.empty()) throw DimensionError("decay_matrix: empty chunk");
  dim_ = static_cast<std::size_t>(w.front().size());
  const auto di = static_cast<Eigen::Index>(dim_);
  entries_.assign(len_ * len_, Vec<T>::Zero(di));
  for (std::size_t i = 0; i < len_; ++i) {
    require_same_size(w[i].size(), di, "decay_matrix");
    entries_[i * len_ + i] = w[i];
    for (std::size_t j = 0; j < i; ++j) {
      entries_[i * len_ + j] = entries_[(i - 1) * len_ + j].cwiseProduct(w[i]);
    }
  }
}

template <typename T>
DecayMatrix<T> decay_matrix(std::span<const Vec<T>> w)
{
  return DecayMatrix<T>(w);
}

template <typename T>
ChunkMatrices<T> chunk_matrices(std::span<const ElementSet<T>> elements, std::size_t n_heads)
{
  if (elements.empty()) throw DimensionError("chunk_matrices: empty chunk");
  if (n_heads == 0) throw ConfigError("chunk_matrices: zero heads");
  const auto d = elements.front().w.size();
  if (d % static_cast<Eigen::Index>(n_heads) != 0) {
    throw DimensionError("chunk_matrices: d not divisible by head count");
  }
  const auto hd = d / static_cast<Eigen::Index>(n_heads);
  const auto len = static_cast<Eigen::Index>(elements.size());

  std::vector<Vec<T>> w;
  w.reserve(elements.size());
  for (const auto & e : elements) w.push_back(e.w);

  ChunkMatrices<T> cm{DecayMatrix<T>(w), Mat<T>(len, d), Mat<T>(len, d), Mat<T>(len, d),
                      Mat<T>(len, d), elements.size()};
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto & e = elements[static_cast<std::size_t>(t)];
    for (const Vec<T> * v : {&e.kappa, &e.a, &e.k_tilde, &e.v, &e.r}) {
      require_same_size(v->size(), d, "chunk_matrices");
    }
    if (!all_finite(e)) throw NumericError("chunk: non-finite element");
    cm.K_tilde.row(t) = e.k_tilde.transpose();
    cm.V.row(t) = e.v.transpose();
    for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(n_heads); ++h) {
      const auto off = h * hd;
      const T norm = e.kappa.segment(off, hd).norm() + static_cast<T>(kKappaEps);
      cm.U.row(t).segment(off, hd) = (e.a.segment(off, hd) / norm).transpose();
      cm.kappa_hat.row(t).segment(off, hd) = (e.kappa.segment(off, hd) / norm).transpose();
    }
  }
  return cm;
}

namespace
{

// Per-head view of a chunk in the diagonal-plus-rank-one form
//   S_t = S_{t-1} diag(w_t) + h_t b_t^T + v_t k_tilde_t^T,
// where h_t = -S_{t-1} kappa_hat_t is the removal readout and
// b_t = u_t * kappa_t = a_t * kappa_hat_t.
template <typename T>
struct HeadChunk
{
  const ChunkMatrices<T> & cm;
  Eigen::Index off;
  Eigen::Index hd;
  Mat<T> b;  // len x hd
  Mat<T> H;  // len x hd, row j = h_j

  // prod_{m=j+1..i} w_m, the decay a write at j has accumulated by step i.
  Vec<T> decay_after(std::size_t i, std::size_t j) const
  {
    if (j == i) return Vec<T>::Ones(hd);
    return cm.delta.at(i, j + 1).segment(off, hd);
  }

  Vec<T> decay_from_start(std::size_t i) const { return cm.delta.at(i, 0).segment(off, hd); }
};

// Forward substitution for the removal readouts (unit lower-triangular system).
template <typename T>
void forward_substitute(HeadChunk<T> & hc, const Mat<T> & s_in)
{
  const auto & cm = hc.cm;
  for (std::size_t j = 0; j < cm.len; ++j) {
    const auto ji = static_cast<Eigen::Index>(j);
    const Vec<T> z = -cm.kappa_hat.row(ji).segment(hc.off, hc.hd).transpose();
    const Vec<T> carried = j == 0 ? z : Vec<T>(hc.decay_from_start(j - 1).cwiseProduct(z));
    Vec<T> h = s_in * carried;
    for (std::size_t m = 0; m < j; ++m) {
      const auto mi = static_cast<Eigen::Index>(m);
      const Vec<T> ez = hc.decay_after(j - 1, m).cwiseProduct(z);
      const T rem = hc.b.row(mi).dot(ez.transpose());
      const T wr = cm.K_tilde.row(mi).segment(hc.off, hc.hd).dot(ez.transpose());
      h.noalias() += rem * hc.H.row(mi).transpose();
      h.noalias() += wr * cm.V.row(mi).segment(hc.off, hc.hd).transpose();
    }
    hc.H.row(ji) = h.transpose();
  }
}

template <typename T>
Mat<T> state_at(const HeadChunk<T> & hc, const Mat<T> & s_in, std::size_t i)
{
  const auto & cm = hc.cm;
  Mat<T> s = s_in * hc.decay_from_start(i).asDiagonal();
  for (std::size_t m = 0; m <= i; ++m) {
    const auto mi = static_cast<Eigen::Index>(m);
    const Vec<T> decay = hc.decay_after(i, m);
    const Vec<T> bd = hc.b.row(mi).transpose().cwiseProduct(decay);
    const Vec<T> kd = cm.K_tilde.row(mi).segment(hc.off, hc.hd).transpose().cwiseProduct(decay);
    s.noalias() += hc.H.row(mi).transpose() * bd.transpose();
    s.noalias() += cm.V.row(mi).segment(hc.off, hc.hd).transpose() * kd.transpose();
  }
  return s;
}

template <typename T>
HeadChunk<T> prepare_head(
  const ChunkMatrices<T> & cm, std::span<const ElementSet<T>> elements, const Mat<T> & s_in,
  Eigen::Index off, Eigen::Index hd)
{
  const auto len = static_cast<Eigen::Index>(cm.len);
  HeadChunk<T> hc{cm, off, hd, Mat<T>(len, hd), Mat<T>(len, hd)};
  for (std::size_t t = 0; t < cm.len; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    hc.b.row(ti) = cm.U.row(ti).segment(off, hd).cwiseProduct(
      elements[t].kappa.segment(off, hd).transpose());
  }
  forward_substitute(hc, s_in);
  return hc;
}

template <typename T>
void check_chunk_inputs(const HeadStates<T> & in, std::span<const ElementSet<T>> elements)
{
  if (elements.empty()) throw DimensionError("chunk: empty chunk");
  if (in.empty()) throw DimensionError("chunk: no heads");
  const auto hd = in.front().rows();
  for (const auto & s : in) {
    if (s.rows() != hd || s.cols() != hd) throw DimensionError("chunk: ragged head states");
  }
  require_same_size(
    elements.front().w.size(), hd * static_cast<Eigen::Index>(in.size()), "chunk state/elements");
}

}  // namespace

template <typename T>
ChunkResult<T> chunk_forward(const HeadStates<T> & in, std::span<const ElementSet<T>> elements)
{
  check_chunk_inputs(in, elements);
  const auto cm = chunk_matrices(elements, in.size());
  const auto hd = in.front().rows();

  ChunkResult<T> result;
  result.states.assign(elements.size(), HeadStates<T>(in.size()));
  for (std::size_t h = 0; h < in.size(); ++h) {
    const auto hc = prepare_head(cm, elements, in[h], static_cast<Eigen::Index>(h) * hd, hd);
    for (std::size_t i = 0; i < elements.size(); ++i) {
      result.states[i][h] = state_at(hc, in[h], i);
    }
  }
  result.out = result.states.back();
  return result;
}

template <typename T>
ChunkReadout<T> chunk_readout(const HeadStates<T> & in, std::span<const ElementSet<T>> elements)
{
  check_chunk_inputs(in, elements);
  const auto cm = chunk_matrices(elements, in.size());
  const auto hd = in.front().rows();
  const auto len = static_cast<Eigen::Index>(elements.size());

  ChunkReadout<T> result{Tokens<T>(len, hd * static_cast<Eigen::Index>(in.size())), HeadStates<T>(in.size())};
  for (std::size_t h = 0; h < in.size(); ++h) {
    const auto off = static_cast<Eigen::Index>(h) * hd;
    const auto hc = prepare_head(cm, elements, in[h], off, hd);
    for (std::size_t i = 0; i < elements.size(); ++i) {
      const Vec<T> r = elements[i].r.segment(off, hd);
      Vec<T> o = in[h] * hc.decay_from_start(i).cwiseProduct(r);
      for (std::size_t m = 0; m <= i; ++m) {
        const auto mi = static_cast<Eigen::Index>(m);
        const Vec<T> er = hc.decay_after(i, m).cwiseProduct(r);
        o.noalias() += hc.b.row(mi).dot(er.transpose()) * hc.H.row(mi).transpose();
        o.noalias() +=
          cm.K_tilde.row(mi).segment(off, hd).dot(er.transpose()) *
          cm.V.row(mi).segment(off, hd).transpose();
      }
      result.readout.row(static_cast<Eigen::Index>(i)).segment(off, hd) = o.transpose();
    }
    result.out[h] = state_at(hc, in[h], elements.size() - 1);
  }
  return result;
}

template <typename T>
Vec<T> state_readout(const ElementSet<T> & e, const HeadStates<T> & s)
{
  if (s.empty()) throw DimensionError("state_readout: no heads");
  const auto hd = s.front().rows();
  require_same_size(e.r.size(), hd * static_cast<Eigen::Index>(s.size()), "state_readout");
  Vec<T> out(e.r.size());
  for (std::size_t h = 0; h < s.size(); ++h) {
    const auto off = static_cast<Eigen::Index>(h) * hd;
    out.segment(off, hd).noalias() = s[h] * e.r.segment(off, hd);
  }
  return out;
}

template <typename T>
Vec<T> time_mix_from_readout(
  const ElementSet<T> & e, const Vec<T> & readout, const BlockParams<T> & params)
{
  const auto d = static_cast<Eigen::Index>(params.d);
  require_same_size(readout.size(), d, "time_mix readout");
  require_same_size(e.r.size(), d, "time_mix elements");
  const auto hd = static_cast<Eigen::Index>(params.head_dim());
  Vec<T> p(d);
  for (Eigen::Index off = 0; off < d; off += hd) {
    const T bonus = (e.r.segment(off, hd).array() * params.rho.segment(off, hd).array() *
                     e.k_tilde.segment(off, hd).array())
                      .sum();
    p.segment(off, hd) =
      layer_norm<T>(
        readout.segment(off, hd), params.ln_out.gamma.segment(off, hd),
        params.ln_out.beta.segment(off, hd)) +
      bonus * e.v.segment(off, hd);
  }
  if (!p.allFinite()) throw NumericError("time_mix: non-finite intermediate");
  return row_times(Vec<T>(e.g.cwiseProduct(p)), params.W_o);
}

template <typename T>
Vec<T> time_mix_output(const ElementSet<T> & e, const HeadStates<T> & s, const BlockParams<T> & params)
{
  if (s.size() != params.n_heads) throw DimensionError("time_mix: head count mismatch");
  return time_mix_from_readout(e, state_readout(e, s), params);
}

template <typename T>
Vec<T> channel_mix(
  const Vec<T> & x, const BlockParams<T> & params, RecurrentState<T> & state, std::size_t layer)
{
  if (layer >= state.layers.size()) throw ConfigError("channel_mix: layer out of range");
  auto & ls = state.layers[layer];
  const Vec<T> mixed = lerp(x, ls.shift_cm, params.mu_k_cm);
  const Vec<T> hidden = row_times(mixed, params.W_k_cm).cwiseMax(T(0)).array().square().matrix();
  ls.shift_cm = x;
  return row_times(hidden, params.W_v_cm);
}

void ExecConfig::validate() const
{
  if (mode == Mode::chunked && chunk_size == 0) {
    throw ConfigError("chunked mode requires chunk_size >= 1");
  }
  if (mode == Mode::sequential && chunk_size > 1) {
    throw ConfigError("sequential mode does not take a chunk size");
  }
}

template <typename T>
BlockOutput<T> block_forward(
  const Tokens<T> & tokens, const BlockParams<T> & params, RecurrentState<T> & state,
  std::size_t layer, const ExecConfig & exec, const Tokens<T> * v_first)
{
  exec.validate();
  if (layer >= state.layers.size()) throw ConfigError("block_forward: layer out of range");
  const auto & ls_check = state.layers[layer];
  if (ls_check.heads.size() != params.n_heads ||
      static_cast<std::size_t>(ls_check.shift_tm.size()) != params.d) {
    throw ConfigError("block_forward: state does not match block parameters");
  }
  const auto n = tokens.rows();
  if (n > 0) require_same_size(tokens.cols(), static_cast<Eigen::Index>(params.d), "block_forward");
  if ((layer >= 1) != (v_first != nullptr)) {
    throw ContractViolation("block_forward: layer-0 values required iff layer >= 1");
  }
  if (v_first && v_first->rows() != n) {
    throw DimensionError("block_forward: layer-0 values do not cover the tokens");
  }

  BlockOutput<T> out;
  out.tokens = tokens;
  if (n == 0) {
    if (layer == 0) out.v_first = Tokens<T>(0, tokens.cols());
    return out;
  }
  if (layer == 0) out.v_first.resize(n, tokens.cols());

  std::vector<ElementSet<T>> elements;
  elements.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const Vec<T> xn = layer_norm<T>(tokens.row(t).transpose(), params.ln_tm.gamma, params.ln_tm.beta);
    Vec<T> vf;
    if (v_first) vf = v_first->row(t).transpose();
    elements.push_back(project_elements(xn, params, state, layer, v_first ? &vf : nullptr));
    if (layer == 0) out.v_first.row(t) = elements.back().v.transpose();
  }

  auto & heads = state.layers[layer].heads;
  if (exec.mode == Mode::sequential) {
    for (Eigen::Index t = 0; t < n; ++t) {
      const auto & e = elements[static_cast<std::size_t>(t)];
      heads = state_step(heads, e);
      out.tokens.row(t) += time_mix_output(e, heads, params).transpose();
    }
  } else {
    const auto total = elements.size();
    for (std::size_t start = 0; start < total; start += exec.chunk_size) {
      const std::size_t len = std::min(exec.chunk_size, total - start);
      const std::span<const ElementSet<T>> chunk(elements.data() + start, len);
      auto cr = chunk_readout(heads, chunk);
      heads = std::move(cr.out);
      for (std::size_t i = 0; i < len; ++i) {
        const auto t = static_cast<Eigen::Index>(start + i);
        out.tokens.row(t) +=
          time_mix_from_readout(chunk[i], Vec<T>(cr.readout.row(static_cast<Eigen::Index>(i)).transpose()), params)
            .transpose();
      }
    }
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    const Vec<T> xn = layer_norm<T>(out.tokens.row(t).transpose(), params.ln_cm.gamma, params.ln_cm.beta);
    out.tokens.row(t) += channel_mix(xn, params, state, layer).transpose();
  }
  if (layer == 0) state.tokens_consumed += static_cast<std::uint64_t>(n);
  return out;
}

template <typename T>
Tokens<T> stack_forward(
  const Tokens<T> & tokens, const Stack<T> & stack, RecurrentState<T> & state,
  const ExecConfig & exec)
{
  state.check_compatible(stack);
  Tokens<T> x = tokens;
  Tokens<T> v_first;
  for (std::size_t l = 0; l < stack.size(); ++l) {
    auto res = block_forward(x, stack[l], state, l, exec, l == 0 ? nullptr : &v_first);
    if (l == 0) v_first = std::move(res.v_first);
    x = std::move(res.tokens);
  }
  return x;
}

#define LADY_RWKV7_INSTANTIATE(T)                                                                  \
  template struct BlockParams<T>;                                                                  \
  template struct RecurrentState<T>;                                                               \
  template class DecayMatrix<T>;                                                                   \
  template BlockParams<T> random_block<T>(const BlockShape &, std::uint64_t);                      \
  template Stack<T> random_stack<T>(const BlockShape &, std::size_t, std::uint64_t);               \
  template HeadStates<T> zero_heads<T>(std::size_t, std::size_t);                                  \
  template Vec<T> lerp<T>(const Vec<T> &, const Vec<T> &, const Vec<T> &);                         \
  template Vec<T> loramlp<T>(Activation, const Vec<T> &, const LoraParams<T> &, bool);             \
  template ElementSet<T> project_elements<T>(                                                      \
    const Vec<T> &, const BlockParams<T> &, RecurrentState<T> &, std::size_t, const Vec<T> *);     \
  template HeadStates<T> state_step<T>(const HeadStates<T> &, const ElementSet<T> &);              \
  template DecayMatrix<T> decay_matrix<T>(std::span<const Vec<T>>);                                \
  template ChunkMatrices<T> chunk_matrices<T>(std::span<const ElementSet<T>>, std::size_t);        \
  template ChunkResult<T> chunk_forward<T>(const HeadStates<T> &, std::span<const ElementSet<T>>); \
  template ChunkReadout<T> chunk_readout<T>(const HeadStates<T> &, std::span<const ElementSet<T>>); \
  template Vec<T> state_readout<T>(const ElementSet<T> &, const HeadStates<T> &);                  \
  template Vec<T> time_mix_from_readout<T>(                                                        \
    const ElementSet<T> &, const Vec<T> &, const BlockParams<T> &);                                \
  template Vec<T> time_mix_output<T>(                                                              \
    const ElementSet<T> &, const HeadStates<T> &, const BlockParams<T> &);                         \
  template Vec<T> channel_mix<T>(                                                                  \
    const Vec<T> &, const BlockParams<T> &, RecurrentState<T> &, std::size_t);                     \
  template BlockOutput<T> block_forward<T>(                                                        \
    const Tokens<T> &, const BlockParams<T> &, RecurrentState<T> &, std::size_t,                   \
    const ExecConfig &, const Tokens<T> *);                                                        \
  template Tokens<T> stack_forward<T>(                                                             \
    const Tokens<T> &, const Stack<T> &, RecurrentState<T> &, const ExecConfig &);

LADY_RWKV7_INSTANTIATE(float)
LADY_RWKV7_INSTANTIATE(double)

#undef LADY_RWKV7_INSTANTIATE

}  // namespace lady::rwkv7
