#pragma once

// Linear cross-attention: M query tokens attend to L feature tokens by
// running the concatenation [features; encoded queries] through an RWKV-7
// block and reading back the last M outputs. Cost is linear in L + M.

#include "lady/rwkv7.hpp"

#include <cstdint>

namespace lady::lica
{

template <typename T>
struct QuerySet
{
  Tokens<T> tokens;  // M x d

  std::size_t size() const { return static_cast<std::size_t>(tokens.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(tokens.cols()); }
};

/// One encoder stack for the queries and one cross stack for the concatenated sequence.
template <typename T>
struct LicaParams
{
  rwkv7::Stack<T> encoder;
  rwkv7::Stack<T> cross;

  std::size_t d() const { return encoder.empty() ? 0 : encoder.front().d; }

  static LicaParams random(const rwkv7::BlockShape & shape, std::uint64_t seed, std::size_t depth = 1);
};

/// Self-encodes the queries from a fresh state.
template <typename T>
QuerySet<T> encode_query(
  const QuerySet<T> & q, const rwkv7::Stack<T> & encoder,
  const rwkv7::ExecConfig & exec = rwkv7::ExecConfig::sequential());

/// Returns the last M outputs of the cross stack over [features; q_enc], from a fresh state.
template <typename T>
QuerySet<T> cross_attend(
  const Tokens<T> & features, const QuerySet<T> & q_enc, const rwkv7::Stack<T> & cross,
  const rwkv7::ExecConfig & exec = rwkv7::ExecConfig::sequential());

/// encode_query followed by cross_attend.
template <typename T>
QuerySet<T> attend(
  const Tokens<T> & features, const QuerySet<T> & q, const LicaParams<T> & params,
  const rwkv7::ExecConfig & exec = rwkv7::ExecConfig::sequential());

}  // namespace lady::lica
