#include "lady/rwkv7_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace lady::rwkv7
{

namespace
{

using nlohmann::json;

template <typename Derived>
json tensor_json(const Eigen::MatrixBase<Derived> & m, bool is_vector)
{
  json shape = is_vector ? json::array({m.size()}) : json::array({m.rows(), m.cols()});
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(static_cast<double>(m(i, j)));
  }
  return {{"shape", shape}, {"data", data}};
}

const json & entry(const json & tensors, const std::string & name)
{
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("parameter snapshot: missing tensor '" + name + "'");
  if (!it->contains("shape") || !it->contains("data")) {
    throw FormatError("parameter snapshot: tensor '" + name + "' lacks shape or data");
  }
  return *it;
}

template <typename T>
Mat<T> read_mat(const json & tensors, const std::string & name, std::size_t rows, std::size_t cols)
{
  const auto & e = entry(tensors, name);
  const auto shape = e.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2 || shape[0] != rows || (cols != 0 && shape[1] != cols)) {
    throw DimensionError("parameter snapshot: tensor '" + name + "' has unexpected shape");
  }
  const auto & data = e.at("data");
  if (data.size() != shape[0] * shape[1]) {
    throw DimensionError("parameter snapshot: tensor '" + name + "' data length disagrees with shape");
  }
  Mat<T> m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
  for (std::size_t i = 0; i < data.size(); ++i) m.data()[i] = static_cast<T>(data[i].get<double>());
  return m;
}

template <typename T>
Vec<T> read_vec(const json & tensors, const std::string & name, std::size_t n)
{
  const auto & e = entry(tensors, name);
  const auto shape = e.at("shape").get<std::vector<std::size_t>>();
  const auto & data = e.at("data");
  if (shape.size() != 1 || shape[0] != n || data.size() != n) {
    throw DimensionError("parameter snapshot: tensor '" + name + "' has unexpected shape");
  }
  Vec<T> v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = static_cast<T>(data[i].get<double>());
  return v;
}

constexpr std::array<char, 8> kStateMagic{'L', 'A', 'D', 'Y', 'S', 'T', 'A', 'T'};
constexpr std::uint32_t kStateVersion = 1;

static_assert(std::endian::native == std::endian::little, "state snapshots assume little-endian hosts");

template <typename V>
void put(std::ostream & out, const V & v)
{
  out.write(reinterpret_cast<const char *>(&v), sizeof(V));
}

template <typename V>
V get(std::istream & in)
{
  V v{};
  in.read(reinterpret_cast<char *>(&v), sizeof(V));
  if (!in) throw FormatError("state snapshot: truncated record");
  return v;
}

template <typename T, typename Derived>
void put_block(std::ostream & out, const Eigen::PlainObjectBase<Derived> & m)
{
  out.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
}

template <typename T, typename Derived>
void get_block(std::istream & in, Eigen::PlainObjectBase<Derived> & m)
{
  in.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
  if (!in) throw FormatError("state snapshot: truncated tensor data");
}

}  // namespace

template <typename T>
json block_to_json(const BlockParams<T> & p)
{
  json tensors;
  tensors["mu_r"] = tensor_json(p.mu_r, true);
  tensors["mu_w"] = tensor_json(p.mu_w, true);
  tensors["mu_k"] = tensor_json(p.mu_k, true);
  tensors["mu_v"] = tensor_json(p.mu_v, true);
  tensors["mu_a"] = tensor_json(p.mu_a, true);
  tensors["mu_g"] = tensor_json(p.mu_g, true);
  tensors["mu_k_cm"] = tensor_json(p.mu_k_cm, true);
  tensors["W_r"] = tensor_json(p.W_r, false);
  tensors["W_k"] = tensor_json(p.W_k, false);
  tensors["W_v"] = tensor_json(p.W_v, false);
  tensors["W_o"] = tensor_json(p.W_o, false);
  tensors["W_k_cm"] = tensor_json(p.W_k_cm, false);
  tensors["W_v_cm"] = tensor_json(p.W_v_cm, false);
  const std::pair<const char *, const LoraParams<T> *> loras[] = {
    {"lora_w", &p.lora_w}, {"lora_a", &p.lora_a}, {"lora_v", &p.lora_v}, {"lora_g", &p.lora_g}};
  for (const auto & [name, l] : loras) {
    tensors[std::string(name) + ".A"] = tensor_json(l->A, false);
    tensors[std::string(name) + ".B"] = tensor_json(l->B, false);
    tensors[std::string(name) + ".lambda"] = tensor_json(l->lambda, true);
  }
  tensors["xi"] = tensor_json(p.xi, true);
  tensors["alpha"] = tensor_json(p.alpha, true);
  tensors["rho"] = tensor_json(p.rho, true);
  const std::pair<const char *, const NormParams<T> *> norms[] = {
    {"ln_out", &p.ln_out}, {"ln_tm", &p.ln_tm}, {"ln_cm", &p.ln_cm}};
  for (const auto & [name, n] : norms) {
    tensors[std::string(name) + ".gamma"] = tensor_json(n->gamma, true);
    tensors[std::string(name) + ".beta"] = tensor_json(n->beta, true);
  }
  return {{"format", "lady-rwkv7-block"}, {"d", p.d}, {"n_heads", p.n_heads}, {"tensors", tensors}};
}

template <typename T>
BlockParams<T> block_from_json(const json & j)
{
  if (!j.is_object() || !j.contains("d") || !j.contains("n_heads") || !j.contains("tensors")) {
    throw FormatError("parameter snapshot: expected object with d, n_heads and tensors");
  }
  BlockParams<T> p;
  p.d = j.at("d").get<std::size_t>();
  p.n_heads = j.at("n_heads").get<std::size_t>();
  if (p.d == 0 || p.n_heads == 0 || p.d % p.n_heads != 0) {
    throw ConfigError("parameter snapshot: d must be a positive multiple of n_heads");
  }
  const auto & t = j.at("tensors");
  const std::size_t d = p.d;
  p.mu_r = read_vec<T>(t, "mu_r", d);
  p.mu_w = read_vec<T>(t, "mu_w", d);
  p.mu_k = read_vec<T>(t, "mu_k", d);
  p.mu_v = read_vec<T>(t, "mu_v", d);
  p.mu_a = read_vec<T>(t, "mu_a", d);
  p.mu_g = read_vec<T>(t, "mu_g", d);
  p.mu_k_cm = read_vec<T>(t, "mu_k_cm", d);
  p.W_r = read_mat<T>(t, "W_r", d, d);
  p.W_k = read_mat<T>(t, "W_k", d, d);
  p.W_v = read_mat<T>(t, "W_v", d, d);
  p.W_o = read_mat<T>(t, "W_o", d, d);
  p.W_k_cm = read_mat<T>(t, "W_k_cm", d, 0);
  p.W_v_cm = read_mat<T>(t, "W_v_cm", static_cast<std::size_t>(p.W_k_cm.cols()), d);
  const std::pair<const char *, LoraParams<T> *> loras[] = {
    {"lora_w", &p.lora_w}, {"lora_a", &p.lora_a}, {"lora_v", &p.lora_v}, {"lora_g", &p.lora_g}};
  for (const auto & [name, l] : loras) {
    const std::string base(name);
    l->A = read_mat<T>(t, base + ".A", d, 0);
    l->B = read_mat<T>(t, base + ".B", static_cast<std::size_t>(l->A.cols()), d);
    l->lambda = read_vec<T>(t, base + ".lambda", d);
  }
  p.xi = read_vec<T>(t, "xi", d);
  p.alpha = read_vec<T>(t, "alpha", d);
  p.rho = read_vec<T>(t, "rho", d);
  const std::pair<const char *, NormParams<T> *> norms[] = {
    {"ln_out", &p.ln_out}, {"ln_tm", &p.ln_tm}, {"ln_cm", &p.ln_cm}};
  for (const auto & [name, n] : norms) {
    n->gamma = read_vec<T>(t, std::string(name) + ".gamma", d);
    n->beta = read_vec<T>(t, std::string(name) + ".beta", d);
  }
  p.validate();
  return p;
}

template <typename T>
json stack_to_json(const Stack<T> & stack)
{
  json layers = json::array();
  for (const auto & b : stack) layers.push_back(block_to_json(b));
  return {{"format", "lady-rwkv7-stack"}, {"layers", layers}};
}

template <typename T>
Stack<T> stack_from_json(const json & j)
{
  if (!j.is_object() || !j.contains("layers") || !j.at("layers").is_array()) {
    throw FormatError("parameter snapshot: expected object with a layers array");
  }
  Stack<T> stack;
  for (const auto & layer : j.at("layers")) stack.push_back(block_from_json<T>(layer));
  for (const auto & b : stack) {
    if (b.d != stack.front().d || b.n_heads != stack.front().n_heads) {
      throw DimensionError("parameter snapshot: layers disagree on d or n_heads");
    }
  }
  return stack;
}

template <typename T>
void save_stack(const Stack<T> & stack, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << stack_to_json(stack).dump();
}

template <typename T>
Stack<T> load_stack(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return stack_from_json<T>(json::parse(in));
  } catch (const json::exception & e) {
    throw FormatError(std::string("parameter snapshot: ") + e.what());
  }
}

template <typename T>
void write_state(std::ostream & out, const RecurrentState<T> & state, const SnapshotInfo & info)
{
  out.write(kStateMagic.data(), kStateMagic.size());
  put<std::uint32_t>(out, kStateVersion);
  put<std::uint32_t>(out, sizeof(T));
  put<std::uint64_t>(out, state.n_layers());
  put<std::uint64_t>(out, state.d());
  put<std::uint64_t>(out, state.n_heads());
  put<std::uint64_t>(out, state.tokens_consumed);
  put<std::uint64_t>(out, info.frames);
  for (const auto & layer : state.layers) {
    for (const auto & s : layer.heads) put_block<T>(out, s);
    put_block<T>(out, layer.shift_tm);
    put_block<T>(out, layer.shift_cm);
  }
  if (!out) throw FormatError("state snapshot: write failed");
}

template <typename T>
RecurrentState<T> read_state(std::istream & in, SnapshotInfo * info)
{
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kStateMagic) throw FormatError("state snapshot: bad magic");
  if (get<std::uint32_t>(in) != kStateVersion) throw FormatError("state snapshot: unsupported version");
  if (get<std::uint32_t>(in) != sizeof(T)) throw FormatError("state snapshot: scalar precision mismatch");
  const auto n_layers = get<std::uint64_t>(in);
  const auto d = get<std::uint64_t>(in);
  const auto n_heads = get<std::uint64_t>(in);
  const auto tokens = get<std::uint64_t>(in);
  const auto frames = get<std::uint64_t>(in);
  if (n_layers > 4096 || d > (1u << 20) || n_heads == 0 || d % n_heads != 0) {
    throw FormatError("state snapshot: implausible dimensions");
  }
  auto state = RecurrentState<T>::fresh(d, n_heads, n_layers);
  state.tokens_consumed = tokens;
  for (auto & layer : state.layers) {
    for (auto & s : layer.heads) get_block<T>(in, s);
    get_block<T>(in, layer.shift_tm);
    get_block<T>(in, layer.shift_cm);
  }
  if (info) info->frames = frames;
  return state;
}

template <typename T>
void save_state(const RecurrentState<T> & state, const std::filesystem::path & path, const SnapshotInfo & info)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_state(out, state, info);
}

template <typename T>
RecurrentState<T> load_state(const std::filesystem::path & path, SnapshotInfo * info)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_state<T>(in, info);
}

#define LADY_RWKV7_IO_INSTANTIATE(T)                                                         \
  template json block_to_json<T>(const BlockParams<T> &);                                    \
  template BlockParams<T> block_from_json<T>(const json &);                                  \
  template json stack_to_json<T>(const Stack<T> &);                                          \
  template Stack<T> stack_from_json<T>(const json &);                                        \
  template void save_stack<T>(const Stack<T> &, const std::filesystem::path &);              \
  template Stack<T> load_stack<T>(const std::filesystem::path &);                            \
  template void write_state<T>(std::ostream &, const RecurrentState<T> &, const SnapshotInfo &); \
  template RecurrentState<T> read_state<T>(std::istream &, SnapshotInfo *);                  \
  template void save_state<T>(                                                               \
    const RecurrentState<T> &, const std::filesystem::path &, const SnapshotInfo &);         \
  template RecurrentState<T> load_state<T>(const std::filesystem::path &, SnapshotInfo *);

LADY_RWKV7_IO_INSTANTIATE(float)
LADY_RWKV7_IO_INSTANTIATE(double)

#undef LADY_RWKV7_IO_INSTANTIATE

}  // namespace lady::rwkv7
