#pragma once

// Frame files are JSON lines, one `{t, camera: [[...]], lidar: [[...]]}` record
// per frame. Ego status is a single `{v, a, cmd}` object.

#include "lady/fusion.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace lady::fusion
{

template <typename T>
nlohmann::json frame_to_json(const FrameTokens<T> & frame);

template <typename T>
FrameTokens<T> frame_from_json(const nlohmann::json & j);

template <typename T>
void write_frames_jsonl(std::ostream & out, const std::vector<FrameTokens<T>> & frames);

/// Blank lines are skipped; any malformed record raises FormatError naming its line.
template <typename T>
std::vector<FrameTokens<T>> read_frames_jsonl(std::istream & in);

template <typename T>
void save_frames(const std::vector<FrameTokens<T>> & frames, const std::filesystem::path & path);

template <typename T>
std::vector<FrameTokens<T>> load_frames(const std::filesystem::path & path);

nlohmann::json ego_to_json(const EgoStatus & ego);
EgoStatus ego_from_json(const nlohmann::json & j);
EgoStatus load_ego(const std::filesystem::path & path);

}  // namespace lady::fusion
