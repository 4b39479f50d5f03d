#pragma once

// Predictive Driver Model Score over synthetic scenes. The sub-scores are
// simplified stand-ins for the benchmark's evaluators: boxes are oriented
// rectangles centred on the waypoint, agents move at constant velocity with
// fixed heading, and the ego starts from the origin pose at t = 0.

#include "lady/decoder.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace lady::pdms
{

struct Point
{
  double x = 0.0;
  double y = 0.0;
};

/// Oriented rectangle: centre, heading and half-extents along / across the heading.
struct Box
{
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;
};

/// Closed-set overlap (touching counts).
bool boxes_overlap(const Box & a, const Box & b);
/// Euclidean distance between the two rectangles; 0 when they overlap.
double box_distance(const Box & a, const Box & b);

struct Agent
{
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  Box box_at(double t) const { return {x + vx * t, y + vy * t, heading, half_length, half_width}; }
};

struct Scene
{
  std::vector<Agent> agents;
  std::vector<Point> drivable;    // simple polygon, either orientation
  std::vector<Point> centerline;  // route polyline
  double reference_progress = 0.0;

  /// Throws SceneError for a degenerate polygon or centerline, or non-positive reference.
  void validate() const;
};

struct Weights
{
  double ep = 5.0;
  double ttc = 5.0;
  double comfort = 2.0;
};

struct Config
{
  double ttc_min = 1.0;  // s
  double a_max = 2.4;    // m/s^2
  double j_max = 8.0;    // m/s^3
  double ego_length = 4.6;
  double ego_width = 1.8;
  Weights weights;

  void validate() const;
};

struct SubScores
{
  double nc = 1.0;
  double dac = 1.0;
  double ttc = 1.0;
  double comfort = 1.0;
  double ep = 1.0;

  void validate() const;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Ego box at time t along the piecewise-linear path origin -> waypoints.
Box ego_box_at(const decoder::Trajectory & traj, double t, const Config & cfg);

/// Earliest time in [0, N dt] at which the ego box touches an agent box, or +inf.
double first_collision(const decoder::Trajectory & traj, const std::vector<Agent> & agents, const Config & cfg);

/// Minimum over segment starts of the constant-velocity time to first overlap; +inf if never.
double ttc_min(const decoder::Trajectory & traj, const std::vector<Agent> & agents, const Config & cfg);

bool inside_polygon(const Point & p, const std::vector<Point> & polygon);
bool drivable_compliant(const decoder::Trajectory & traj, const std::vector<Point> & polygon);

/// Largest acceleration and jerk magnitudes from finite differences over the waypoints.
struct Kinematics
{
  double max_accel = 0.0;
  double max_jerk = 0.0;
};
Kinematics kinematics(const decoder::Trajectory & traj);

/// Arc-length of the closest centerline point.
double arc_length_at(const Point & p, const std::vector<Point> & centerline);
double ego_progress(const decoder::Trajectory & traj, const Scene & scene);

SubScores eval_subscores(const decoder::Trajectory & traj, const Scene & scene, const Config & cfg = {});

/// (nc * dac) * weighted mean of (ep, ttc, comfort).
double pdms(const SubScores & s, const Weights & w = {});

nlohmann::json scene_to_json(const Scene & scene);
Scene scene_from_json(const nlohmann::json & j);
void save_scene(const Scene & scene, const std::filesystem::path & path);
Scene load_scene(const std::filesystem::path & path);

struct ReportRow
{
  std::string scene;
  std::string trajectory;
  SubScores scores;
  double pdms = 0.0;
};

/// CSV with a leading comment line marking the sub-scores as simplified stand-ins.
void write_report(std::ostream & out, const std::vector<ReportRow> & rows);

}  // namespace lady::pdms
