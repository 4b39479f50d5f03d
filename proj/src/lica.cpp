#include "lady/lica.hpp"

namespace lady::lica
{

namespace
{

template <typename T>
void check_queries(const QuerySet<T> & q, const rwkv7::Stack<T> & stack, const char * what)
{
  if (q.size() == 0) throw ContractViolation(std::string(what) + ": at least one query required");
  if (stack.empty()) throw ConfigError(std::string(what) + ": empty block stack");
  if (q.dim() != stack.front().d) {
    throw DimensionError(
      std::string(what) + ": query dim " + std::to_string(q.dim()) + " vs block dim " +
      std::to_string(stack.front().d));
  }
}

}  // namespace

template <typename T>
LicaParams<T> LicaParams<T>::random(const rwkv7::BlockShape & shape, std::uint64_t seed, std::size_t depth)
{
  return {rwkv7::random_stack<T>(shape, depth, seed * 2 + 1), rwkv7::random_stack<T>(shape, depth, seed * 2 + 2)};
}

template <typename T>
QuerySet<T> encode_query(const QuerySet<T> & q, const rwkv7::Stack<T> & encoder, const rwkv7::ExecConfig & exec)
{
  check_queries(q, encoder, "encode_query");
  auto state = rwkv7::RecurrentState<T>::fresh_for(encoder);
  return {rwkv7::stack_forward(q.tokens, encoder, state, exec)};
}

template <typename T>
QuerySet<T> cross_attend(
  const Tokens<T> & features, const QuerySet<T> & q_enc, const rwkv7::Stack<T> & cross,
  const rwkv7::ExecConfig & exec)
{
  check_queries(q_enc, cross, "cross_attend");
  const auto m = q_enc.tokens.rows();
  const auto l = features.rows();
  if (l > 0 && features.cols() != q_enc.tokens.cols()) {
    throw DimensionError("cross_attend: feature and query dims differ");
  }
  Tokens<T> seq(l + m, q_enc.tokens.cols());
  if (l > 0) seq.topRows(l) = features;
  seq.bottomRows(m) = q_enc.tokens;

  auto state = rwkv7::RecurrentState<T>::fresh_for(cross);
  const auto out = rwkv7::stack_forward(seq, cross, state, exec);
  return {out.bottomRows(m)};
}

template <typename T>
QuerySet<T> attend(
  const Tokens<T> & features, const QuerySet<T> & q, const LicaParams<T> & params,
  const rwkv7::ExecConfig & exec)
{
  return cross_attend(features, encode_query(q, params.encoder, exec), params.cross, exec);
}

#define LADY_LICA_INSTANTIATE(T)                                                           \
  template struct LicaParams<T>;                                                           \
  template QuerySet<T> encode_query<T>(                                                    \
    const QuerySet<T> &, const rwkv7::Stack<T> &, const rwkv7::ExecConfig &);              \
  template QuerySet<T> cross_attend<T>(                                                    \
    const Tokens<T> &, const QuerySet<T> &, const rwkv7::Stack<T> &, const rwkv7::ExecConfig &); \
  template QuerySet<T> attend<T>(                                                          \
    const Tokens<T> &, const QuerySet<T> &, const LicaParams<T> &, const rwkv7::ExecConfig &);

LADY_LICA_INSTANTIATE(float)
LADY_LICA_INSTANTIATE(double)

#undef LADY_LICA_INSTANTIATE

}  // namespace lady::lica
