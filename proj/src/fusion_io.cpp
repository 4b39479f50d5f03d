#include "lady/fusion_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace lady::fusion
{

namespace
{

template <typename T>
nlohmann::json rows_to_json(const Tokens<T> & m)
{
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
Tokens<T> rows_from_json(const nlohmann::json & j, const char * what)
{
  if (!j.is_array()) throw FormatError(std::string("frame: ") + what + " must be an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  const auto d = n > 0 && j[0].is_array() ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Tokens<T> m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto & row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d) {
      throw DimensionError(std::string("frame: ragged ") + what + " rows");
    }
    for (Eigen::Index k = 0; k < d; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<T>();
  }
  return m;
}

}  // namespace

template <typename T>
nlohmann::json frame_to_json(const FrameTokens<T> & frame)
{
  return {{"t", frame.t}, {"camera", rows_to_json(frame.camera)}, {"lidar", rows_to_json(frame.lidar)}};
}

template <typename T>
FrameTokens<T> frame_from_json(const nlohmann::json & j)
{
  if (!j.is_object() || !j.contains("t") || !j.contains("camera") || !j.contains("lidar")) {
    throw FormatError("frame: expected {t, camera, lidar}");
  }
  try {
    return {rows_from_json<T>(j["camera"], "camera"), rows_from_json<T>(j["lidar"], "lidar"), j["t"].get<std::int64_t>()};
  } catch (const nlohmann::json::exception & e) {
    throw FormatError(std::string("frame: ") + e.what());
  }
}

template <typename T>
void write_frames_jsonl(std::ostream & out, const std::vector<FrameTokens<T>> & frames)
{
  for (const auto & f : frames) out << frame_to_json(f).dump() << '\n';
}

template <typename T>
std::vector<FrameTokens<T>> read_frames_jsonl(std::istream & in)
{
  std::vector<FrameTokens<T>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(frame_from_json<T>(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception & e) {
      throw FormatError("frames line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError & e) {
      throw FormatError("frames line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void save_frames(const std::vector<FrameTokens<T>> & frames, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_frames_jsonl(out, frames);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

template <typename T>
std::vector<FrameTokens<T>> load_frames(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_frames_jsonl<T>(in);
}

nlohmann::json ego_to_json(const EgoStatus & ego)
{
  return {{"v", ego.velocity}, {"a", ego.acceleration}, {"cmd", std::string(command_name(ego.command))}};
}

EgoStatus ego_from_json(const nlohmann::json & j)
{
  if (!j.is_object()) throw FormatError("ego: expected {v, a, cmd}");
  EgoStatus ego;
  try {
    ego.velocity = j.at("v").get<double>();
    ego.acceleration = j.at("a").get<double>();
    ego.command = parse_command(j.at("cmd").get<std::string>());
  } catch (const nlohmann::json::exception & e) {
    throw FormatError(std::string("ego: ") + e.what());
  }
  ego.validate();
  return ego;
}

EgoStatus load_ego(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return ego_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception & e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

#define LADY_FUSION_IO_INSTANTIATE(T)                                                          \
  template nlohmann::json frame_to_json<T>(const FrameTokens<T> &);                            \
  template FrameTokens<T> frame_from_json<T>(const nlohmann::json &);                          \
  template void write_frames_jsonl<T>(std::ostream &, const std::vector<FrameTokens<T>> &);    \
  template std::vector<FrameTokens<T>> read_frames_jsonl<T>(std::istream &);                   \
  template void save_frames<T>(const std::vector<FrameTokens<T>> &, const std::filesystem::path &); \
  template std::vector<FrameTokens<T>> load_frames<T>(const std::filesystem::path &);

LADY_FUSION_IO_INSTANTIATE(float)
LADY_FUSION_IO_INSTANTIATE(double)

#undef LADY_FUSION_IO_INSTANTIATE

}  // namespace lady::fusion
