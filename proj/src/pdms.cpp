#include "lady/pdms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace lady::pdms
{

namespace
{

constexpr double kContact = 1e-9;
constexpr double kOnEdge = 1e-9;
constexpr std::size_t kMaxAdvance = 1000000;

Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
double norm(Point a) { return std::hypot(a.x, a.y); }

Point forward(double heading) { return {std::cos(heading), std::sin(heading)}; }
Point left(double heading) { return {-std::sin(heading), std::cos(heading)}; }

/// Half-width of the box's projection onto unit axis n.
double radius(const Box & b, Point n)
{
  return b.half_length * std::abs(dot(n, forward(b.heading))) + b.half_width * std::abs(dot(n, left(b.heading)));
}

std::array<Point, 4> corners(const Box & b)
{
  const Point c{b.x, b.y};
  const Point f = b.half_length * forward(b.heading);
  const Point l = b.half_width * left(b.heading);
  return {c + f + l, c - f + l, c - f - l, c + f - l};
}

double point_segment_distance(Point p, Point a, Point b)
{
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  double u = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return norm(p - (a + u * ab));
}

double corners_to_edges(const Box & a, const Box & b)
{
  const auto ca = corners(a);
  const auto cb = corners(b);
  double best = kInfinity;
  for (const auto & p : ca) {
    for (std::size_t e = 0; e < 4; ++e) best = std::min(best, point_segment_distance(p, cb[e], cb[(e + 1) % 4]));
  }
  return best;
}

struct Pose
{
  double x;
  double y;
  double theta;
};

Pose pose_at_index(const decoder::Trajectory & traj, std::size_t k)
{
  if (k == 0) return {0.0, 0.0, 0.0};
  const auto & w = traj.waypoints[k - 1];
  return {w.x, w.y, w.theta};
}

Box ego_box(const Pose & p, const Config & cfg) { return {p.x, p.y, p.theta, cfg.ego_length / 2, cfg.ego_width / 2}; }

Box ego_in_segment(const decoder::Trajectory & traj, std::size_t k, double u, const Config & cfg)
{
  const Pose a = pose_at_index(traj, k);
  const Pose b = pose_at_index(traj, k + 1);
  const double dtheta = decoder::wrap_angle(b.theta - a.theta);
  return ego_box({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), decoder::wrap_angle(a.theta + u * dtheta)}, cfg);
}

std::vector<Point> ring(const std::vector<Point> & poly)
{
  std::vector<Point> r = poly;
  if (r.size() > 1 && r.front().x == r.back().x && r.front().y == r.back().y) r.pop_back();
  return r;
}

int orientation(Point a, Point b, Point c)
{
  const double v = cross(b - a, c - a);
  return (v > 0) - (v < 0);
}

bool on_segment(Point p, Point a, Point b)
{
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point p1, Point p2, Point q1, Point q2)
{
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  return (o1 == 0 && on_segment(q1, p1, p2)) || (o2 == 0 && on_segment(q2, p1, p2)) ||
         (o3 == 0 && on_segment(p1, q1, q2)) || (o4 == 0 && on_segment(p2, q1, q2));
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

bool boxes_overlap(const Box & a, const Box & b)
{
  const Point d{b.x - a.x, b.y - a.y};
  for (const Point n : {forward(a.heading), left(a.heading), forward(b.heading), left(b.heading)}) {
    if (std::abs(dot(n, d)) > radius(a, n) + radius(b, n)) return false;
  }
  return true;
}

double box_distance(const Box & a, const Box & b)
{
  if (boxes_overlap(a, b)) return 0.0;
  return std::min(corners_to_edges(a, b), corners_to_edges(b, a));
}

void Scene::validate() const
{
  for (const auto & a : agents) {
    if (!finite(a.x) || !finite(a.y) || !finite(a.heading) || !finite(a.vx) || !finite(a.vy) ||
        !finite(a.half_length) || !finite(a.half_width)) {
      throw SceneError("scene: non-finite agent field");
    }
    if (a.half_length < 0 || a.half_width < 0) throw SceneError("scene: negative agent extent");
  }

  const auto poly = ring(drivable);
  if (poly.size() < 3) throw SceneError("scene: drivable polygon needs at least 3 vertices");
  double area2 = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (!finite(poly[i].x) || !finite(poly[i].y)) throw SceneError("scene: non-finite polygon vertex");
    area2 += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  if (std::abs(area2) <= 0) throw SceneError("scene: drivable polygon has zero area");
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        throw SceneError("scene: drivable polygon is not simple");
      }
    }
  }

  if (centerline.size() < 2) throw SceneError("scene: centerline needs at least 2 points");
  double length = 0;
  for (std::size_t i = 1; i < centerline.size(); ++i) length += norm(centerline[i] - centerline[i - 1]);
  if (!(length > 0) || !finite(length)) throw SceneError("scene: zero-length centerline");
  if (!(reference_progress > 0) || !finite(reference_progress)) throw SceneError("scene: reference progress must be positive");
}

void Config::validate() const
{
  if (!(ttc_min >= 0) || !(a_max > 0) || !(j_max > 0)) throw ConfigError("pdms: thresholds must be positive");
  if (!(ego_length >= 0) || !(ego_width >= 0)) throw ConfigError("pdms: ego extents must be non-negative");
  if (!(weights.ep > 0) || !(weights.ttc > 0) || !(weights.comfort > 0)) throw ConfigError("pdms: weights must be positive");
}

void SubScores::validate() const
{
  for (double v : {nc, dac, ttc, comfort}) {
    if (v != 0.0 && v != 1.0) throw ContractViolation("sub-scores: nc, dac, ttc and comfort must be 0 or 1");
  }
  if (!(ep >= 0 && ep <= 1)) throw ContractViolation("sub-scores: ep must lie in [0,1]");
}

Box ego_box_at(const decoder::Trajectory & traj, double t, const Config & cfg)
{
  traj.validate();
  const double horizon = traj.dt * static_cast<double>(traj.size());
  t = std::clamp(t, 0.0, horizon);
  const auto k = std::min(static_cast<std::size_t>(t / traj.dt), traj.size() - 1);
  return ego_in_segment(traj, k, (t - traj.dt * static_cast<double>(k)) / traj.dt, cfg);
}

double first_collision(const decoder::Trajectory & traj, const std::vector<Agent> & agents, const Config & cfg)
{
  traj.validate();
  const double rho = std::hypot(cfg.ego_length / 2, cfg.ego_width / 2);
  const double dt = traj.dt;
  double first = kInfinity;
  for (const auto & agent : agents) {
    for (std::size_t k = 0; k < traj.size() && dt * static_cast<double>(k) < first; ++k) {
      const Pose a = pose_at_index(traj, k);
      const Pose b = pose_at_index(traj, k + 1);
      const double t0 = dt * static_cast<double>(k);
      const Point rel_v{(b.x - a.x) / dt - agent.vx, (b.y - a.y) / dt - agent.vy};
      const double omega = std::abs(decoder::wrap_angle(b.theta - a.theta)) / dt;
      const double bound = norm(rel_v) + omega * rho;
      const bool last = k + 1 == traj.size();

      // Conservative advancement: the box distance cannot shrink faster than `bound`.
      double u = 0;
      bool hit = false;
      for (std::size_t it = 0; it < kMaxAdvance; ++it) {
        const double t = t0 + u * dt;
        const double d = box_distance(ego_in_segment(traj, k, u, cfg), agent.box_at(t));
        if (d <= kContact) {
          first = std::min(first, t);
          hit = true;
          break;
        }
        if (bound <= 0) break;
        const double next = u + d / (bound * dt);
        if (next >= 1.0) {
          if (last && u < 1.0) {
            u = 1.0;
            continue;
          }
          break;
        }
        u = next;
      }
      if (hit) break;
    }
  }
  return first;
}

double ttc_min(const decoder::Trajectory & traj, const std::vector<Agent> & agents, const Config & cfg)
{
  traj.validate();
  double best = kInfinity;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double tau = traj.dt * static_cast<double>(i);
    const Pose p = pose_at_index(traj, i);
    const Pose q = pose_at_index(traj, i + 1);
    const Point ego_v{(q.x - p.x) / traj.dt, (q.y - p.y) / traj.dt};
    const Box ego = ego_box(p, cfg);
    for (const auto & agent : agents) {
      const Box other = agent.box_at(tau);
      const Point r0{other.x - ego.x, other.y - ego.y};
      const Point w = Point{agent.vx, agent.vy} - ego_v;
      // Swept separating axes: the boxes overlap on an axis during one interval of s.
      double lo = 0.0;
      double hi = kInfinity;
      for (const Point n : {forward(ego.heading), left(ego.heading), forward(other.heading), left(other.heading)}) {
        const double r = radius(ego, n) + radius(other, n);
        const double d0 = dot(n, r0);
        const double dv = dot(n, w);
        if (dv == 0.0) {
          if (std::abs(d0) > r) hi = -1.0;
          continue;
        }
        double s1 = (-r - d0) / dv;
        double s2 = (r - d0) / dv;
        if (s1 > s2) std::swap(s1, s2);
        lo = std::max(lo, s1);
        hi = std::min(hi, s2);
      }
      if (lo <= hi) best = std::min(best, lo);
    }
  }
  return best;
}

bool inside_polygon(const Point & p, const std::vector<Point> & polygon)
{
  const auto poly = ring(polygon);
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if (point_segment_distance(p, poly[j], poly[i]) <= kOnEdge) return true;
    if ((poly[i].y > p.y) != (poly[j].y > p.y)) {
      const double x = poly[j].x + (p.y - poly[j].y) * (poly[i].x - poly[j].x) / (poly[i].y - poly[j].y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

bool drivable_compliant(const decoder::Trajectory & traj, const std::vector<Point> & polygon)
{
  return std::all_of(traj.waypoints.begin(), traj.waypoints.end(), [&](const auto & w) {
    return inside_polygon({w.x, w.y}, polygon);
  });
}

Kinematics kinematics(const decoder::Trajectory & traj)
{
  traj.validate();
  std::vector<Point> v, a, j;
  const auto & wp = traj.waypoints;
  for (std::size_t i = 1; i < wp.size(); ++i) v.push_back((1.0 / traj.dt) * Point{wp[i].x - wp[i - 1].x, wp[i].y - wp[i - 1].y});
  for (std::size_t i = 1; i < v.size(); ++i) a.push_back((1.0 / traj.dt) * (v[i] - v[i - 1]));
  for (std::size_t i = 1; i < a.size(); ++i) j.push_back((1.0 / traj.dt) * (a[i] - a[i - 1]));
  Kinematics k;
  for (const auto & x : a) k.max_accel = std::max(k.max_accel, norm(x));
  for (const auto & x : j) k.max_jerk = std::max(k.max_jerk, norm(x));
  return k;
}

double arc_length_at(const Point & p, const std::vector<Point> & centerline)
{
  if (centerline.size() < 2) throw SceneError("centerline needs at least 2 points");
  double best_d = kInfinity;
  double best_s = 0;
  double s = 0;
  for (std::size_t i = 1; i < centerline.size(); ++i) {
    const Point a = centerline[i - 1];
    const Point ab = centerline[i] - a;
    const double len = norm(ab);
    const double u = len > 0 ? std::clamp(dot(p - a, ab) / (len * len), 0.0, 1.0) : 0.0;
    const double d = norm(p - (a + u * ab));
    if (d < best_d) {
      best_d = d;
      best_s = s + u * len;
    }
    s += len;
  }
  return best_s;
}

double ego_progress(const decoder::Trajectory & traj, const Scene & scene)
{
  scene.validate();
  traj.validate();
  const auto & last = traj.waypoints.back();
  const double progress = arc_length_at({last.x, last.y}, scene.centerline) - arc_length_at({0, 0}, scene.centerline);
  return std::clamp(progress / scene.reference_progress, 0.0, 1.0);
}

SubScores eval_subscores(const decoder::Trajectory & traj, const Scene & scene, const Config & cfg)
{
  cfg.validate();
  scene.validate();
  traj.validate();
  SubScores s;
  s.nc = std::isinf(first_collision(traj, scene.agents, cfg)) ? 1.0 : 0.0;
  s.dac = drivable_compliant(traj, scene.drivable) ? 1.0 : 0.0;
  s.ttc = ttc_min(traj, scene.agents, cfg) >= cfg.ttc_min ? 1.0 : 0.0;
  const auto k = kinematics(traj);
  s.comfort = (k.max_accel <= cfg.a_max && k.max_jerk <= cfg.j_max) ? 1.0 : 0.0;
  s.ep = ego_progress(traj, scene);
  return s;
}

double pdms(const SubScores & s, const Weights & w)
{
  if (!(w.ep > 0) || !(w.ttc > 0) || !(w.comfort > 0)) throw ContractViolation("pdms: weights must be positive");
  s.validate();
  const double weighted = (w.ep * s.ep + w.ttc * s.ttc + w.comfort * s.comfort) / (w.ep + w.ttc + w.comfort);
  return s.nc * s.dac * weighted;
}

namespace
{

nlohmann::json points_to_json(const std::vector<Point> & pts)
{
  nlohmann::json j = nlohmann::json::array();
  for (const auto & p : pts) j.push_back({p.x, p.y});
  return j;
}

std::vector<Point> points_from_json(const nlohmann::json & j, const char * what)
{
  if (!j.is_array()) throw FormatError(std::string("scene: ") + what + " must be an array of [x, y]");
  std::vector<Point> out;
  for (const auto & p : j) {
    if (!p.is_array() || p.size() != 2) throw FormatError(std::string("scene: ") + what + " point must be [x, y]");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace

nlohmann::json scene_to_json(const Scene & scene)
{
  nlohmann::json agents = nlohmann::json::array();
  for (const auto & a : scene.agents) {
    agents.push_back(
      {{"x", a.x}, {"y", a.y}, {"heading", a.heading}, {"vx", a.vx}, {"vy", a.vy},
       {"half_length", a.half_length}, {"half_width", a.half_width}});
  }
  return {
    {"agents", agents},
    {"drivable", points_to_json(scene.drivable)},
    {"centerline", points_to_json(scene.centerline)},
    {"reference_progress", scene.reference_progress}};
}

Scene scene_from_json(const nlohmann::json & j)
{
  if (!j.is_object()) throw FormatError("scene: expected a JSON object");
  Scene s;
  try {
    for (const char * key : {"drivable", "centerline", "reference_progress"}) {
      if (!j.contains(key)) throw FormatError(std::string("scene: missing '") + key + "'");
    }
    if (j.contains("agents")) {
      if (!j["agents"].is_array()) throw FormatError("scene: agents must be an array");
      for (const auto & a : j["agents"]) {
        s.agents.push_back(
          {a.at("x").get<double>(), a.at("y").get<double>(), a.value("heading", 0.0), a.value("vx", 0.0),
           a.value("vy", 0.0), a.value("half_length", 0.0), a.value("half_width", 0.0)});
      }
    }
    s.drivable = points_from_json(j["drivable"], "drivable");
    s.centerline = points_from_json(j["centerline"], "centerline");
    s.reference_progress = j["reference_progress"].get<double>();
  } catch (const nlohmann::json::exception & e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

void save_scene(const Scene & scene, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << scene_to_json(scene).dump(2) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Scene load_scene(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception & e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  return scene_from_json(j);
}

void write_report(std::ostream & out, const std::vector<ReportRow> & rows)
{
  out << "# simplified stand-in sub-scores, not the benchmark evaluators\n";
  out << "scene,trajectory,nc,dac,ttc,comfort,ep,pdms\n";
  const auto old = out.precision(10);
  for (const auto & r : rows) {
    out << r.scene << ',' << r.trajectory << ',' << r.scores.nc << ',' << r.scores.dac << ',' << r.scores.ttc << ','
        << r.scores.comfort << ',' << r.scores.ep << ',' << r.pdms << '\n';
  }
  out.precision(old);
}

}  // namespace lady::pdms
