#pragma once

// Parameter snapshots are JSON tensor containers with named, shaped entries
// ("W_r", "mu_w", "lora_w.A", ...). State snapshots are a flat little-endian
// binary record so that a resumed stream is bit-identical.

#include "lady/rwkv7.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace lady::rwkv7
{

template <typename T>
nlohmann::json block_to_json(const BlockParams<T> & params);

/// Throws FormatError on missing entries and DimensionError on shape mismatch.
template <typename T>
BlockParams<T> block_from_json(const nlohmann::json & j);

template <typename T>
nlohmann::json stack_to_json(const Stack<T> & stack);

template <typename T>
Stack<T> stack_from_json(const nlohmann::json & j);

template <typename T>
void save_stack(const Stack<T> & stack, const std::filesystem::path & path);

template <typename T>
Stack<T> load_stack(const std::filesystem::path & path);

/// Extra counters carried by a snapshot alongside the recurrent tensors.
struct SnapshotInfo
{
  std::uint64_t frames = 0;
};

template <typename T>
void write_state(std::ostream & out, const RecurrentState<T> & state, const SnapshotInfo & info = {});

template <typename T>
RecurrentState<T> read_state(std::istream & in, SnapshotInfo * info = nullptr);

template <typename T>
void save_state(
  const RecurrentState<T> & state, const std::filesystem::path & path, const SnapshotInfo & info = {});

template <typename T>
RecurrentState<T> load_state(const std::filesystem::path & path, SnapshotInfo * info = nullptr);

}  // namespace lady::rwkv7
