#include "cali/navsim/navsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"

namespace cali::navsim {

namespace {

constexpr std::size_t kChords = 16;

constexpr int kGround = 0, kObstacle = 1, kOutside = 2, kSky = 3;

int classify_ray(const World& world, const Pose& pose, const planner::CameraModel& cam, std::size_t row,
                 std::size_t col) {
  const double s = std::sin(cam.pitch), c = std::cos(cam.pitch);
  const double xc = (static_cast<double>(col) + 0.5 - cam.cx) / cam.fx;
  const double yc = (static_cast<double>(row) + 0.5 - cam.cy) / cam.fy;
  const double dx = c - yc * s, dy = -xc, dz = -s - yc * c;
  if (dz > -1e-12) return kSky;
  const double t = cam.height / -dz;
  const Pose g = planner::compose(pose, {t * dx, t * dy, 0.0});
  if (!world.in_bounds(g.x, g.y)) return kOutside;
  for (const Disk& d : world.obstacles)
    if (std::hypot(g.x - d.x, g.y - d.y) < d.r) return kObstacle;
  return kGround;
}

double distance(const Pose& a, const Pose& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

double World::clearance(double x, double y) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Disk& d : obstacles) best = std::min(best, std::hypot(x - d.x, y - d.y) - d.r);
  return best;
}

void World::validate(double robot_radius) const {
  if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("world bounds are empty", "sim.world");
  for (const Pose* p : {&start, &goal}) {
    if (!in_bounds(p->x, p->y)) throw ConfigError("start and goal must lie inside the bounds", "sim.world");
    if (clearance(p->x, p->y) <= robot_radius) throw ConfigError("start or goal is blocked", "sim.world");
  }
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("must be positive", "sim.dt");
  if (!(goal_tolerance > 0.0)) throw ConfigError("must be positive", "sim.goal_tolerance");
  if (!(robot_radius >= 0.0)) throw ConfigError("must be non-negative", "sim.robot_radius");
  if (max_steps < 1) throw ConfigError("must be at least 1", "sim.max_steps");
  if (suite_size < 1) throw ConfigError("must be at least 1", "sim.suite_size");
}

Pose relative(const Pose& base, const Pose& p) {
  const double c = std::cos(base.psi), s = std::sin(base.psi);
  const double dx = p.x - base.x, dy = p.y - base.y;
  return Pose{c * dx + s * dy, -s * dx + c * dy, planner::wrap_angle(p.psi - base.psi)};
}

planner::Grid render_classes(const World& world, const Pose& pose, const planner::CameraModel& cam) {
  planner::Grid g(cam.image_h, cam.image_w);
  for (std::size_t r = 0; r < cam.image_h; ++r)
    for (std::size_t c = 0; c < cam.image_w; ++c) g.at(r, c) = classify_ray(world, pose, cam, r, c);
  return g;
}

planner::Grid render_segmentation(const World& world, const Pose& pose, const planner::CameraModel& cam) {
  planner::Grid g = render_classes(world, pose, cam);
  for (double& v : g.values) v = v == kGround ? 1.0 : 0.0;
  return g;
}

bool segment_hits_circle(double ax, double ay, double bx, double by, double cx, double cy, double r) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((cx - ax) * vx + (cy - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(ax + t * vx - cx, ay + t * vy - cy) < r;
}

StepResult step_world(const World& world, const Pose& pose, const planner::Primitive& prim, double dt,
                      double robot_radius) {
  if (!(dt > 0.0)) throw ContractError("step duration must be positive");
  StepResult out{pose, false};
  Pose prev = pose;
  for (std::size_t k = 1; k <= kChords; ++k) {
    const Pose next = planner::integrate_unicycle(pose, prim.v, prim.omega, dt * static_cast<double>(k) / kChords);
    for (const Disk& d : world.obstacles)
      if (segment_hits_circle(prev.x, prev.y, next.x, next.y, d.x, d.y, d.r + robot_radius)) out.collided = true;
    if (next.x - robot_radius < world.x_min || next.x + robot_radius > world.x_max ||
        next.y - robot_radius < world.y_min || next.y + robot_radius > world.y_max)
      out.collided = true;
    prev = next;
  }
  out.pose = prev;
  return out;
}

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Reached: return "reached";
    case Outcome::Collided: return "collided";
    case Outcome::Timeout: return "timeout";
  }
  return "timeout";
}

nlohmann::ordered_json to_json(const EpisodeLog& log) {
  nlohmann::ordered_json poses = nlohmann::ordered_json::array();
  for (const Pose& p : log.poses) poses.push_back({p.x, p.y, p.psi});
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const StepRecord& s : log.steps) {
    nlohmann::ordered_json costs = nlohmann::ordered_json::array();
    for (const auto& c : s.costs) costs.push_back({c.collision, c.target, c.total});
    steps.push_back({{"selected", s.selected}, {"costs", costs}});
  }
  return {{"outcome", outcome_name(log.outcome)},
          {"path_length", log.path_length},
          {"num_steps", log.steps.size()},
          {"poses", poses},
          {"steps", steps}};
}

SegmentationSource model_segmentation(const models::ModelBundle& bundle, const synthdata::DomainSpec& spec,
                                      std::uint64_t seed) {
  auto counter = std::make_shared<std::uint64_t>(0);
  return [&bundle, spec, seed, counter](const World& world, const Pose& pose, const planner::CameraModel& cam) {
    const planner::Grid cls = render_classes(world, pose, cam);
    const std::size_t ch = spec.channels, hw = cam.image_h * cam.image_w;
    nk::Tensor x({ch, cam.image_h, cam.image_w});
    nk::Rng rng(nk::derive_seed(seed, (*counter)++));
    for (std::size_t i = 0; i < hw; ++i) {
      const auto k = std::min(static_cast<std::size_t>(cls.values[i]), spec.num_classes - 1);
      const auto app = spec.appearance(k, Domain::Target);
      for (std::size_t c = 0; c < ch; ++c) x.values()[c * hw + i] = app.mean[c] + app.sigma * rng.normal();
    }
    const nk::Tensor labels = models::predict_labels(models::forward_seg(bundle, x).p1);
    planner::Grid mask(cam.image_h, cam.image_w);
    for (std::size_t i = 0; i < hw; ++i) mask.values[i] = labels.values()[i] == kGround ? 1.0 : 0.0;
    return mask;
  };
}

EpisodeLog run_episode(const World& world, const planner::PlannerConfig& pc, const SimConfig& sc,
                       const SegmentationSource& source, const std::optional<DumpOptions>& dump) {
  pc.validate();
  sc.validate();
  world.validate(sc.robot_radius);
  const auto lib = planner::build_library(pc);
  EpisodeLog log;
  Pose pose = world.start;
  log.poses.push_back(pose);
  bool done = false;
  for (std::size_t step = 0; step < sc.max_steps && !done; ++step) {
    if (distance(pose, world.goal) <= sc.goal_tolerance) {
      log.outcome = Outcome::Reached;
      done = true;
      break;
    }
    const planner::Grid mask = source ? source(world, pose, pc.camera) : render_segmentation(world, pose, pc.camera);
    const auto plan = planner::plan_frame(mask, lib, relative(pose, world.goal), pc);
    if (dump) {
      char name[32];
      std::snprintf(name, sizeof name, "mask_%04zu.pgm", step);
      planner::write_mask_pgm(dump->dir / name, mask);
      std::snprintf(name, sizeof name, "field_%04zu.pgm", step);
      planner::write_field_pgm(dump->dir / name, plan.field);
    }
    const StepResult res = step_world(world, pose, lib[plan.selection.index], sc.dt, sc.robot_radius);
    log.steps.push_back({plan.selection.index, plan.selection.costs});
    log.path_length += distance(pose, res.pose);
    pose = res.pose;
    log.poses.push_back(pose);
    if (res.collided) {
      log.outcome = Outcome::Collided;
      done = true;
    }
  }
  if (!done) log.outcome = distance(pose, world.goal) <= sc.goal_tolerance ? Outcome::Reached : Outcome::Timeout;
  return log;
}

World empty_world() { return World{}; }

World benchmark_world(std::uint64_t seed) {
  World w;
  w.seed = seed;
  nk::Rng rng(seed);
  while (w.obstacles.size() < 8) {
    const Disk d{rng.uniform(2.0, 8.5), rng.uniform(-3.0, 3.0), rng.uniform(0.2, 0.5)};
    const double to_start = std::hypot(d.x - w.start.x, d.y - w.start.y);
    const double to_goal = std::hypot(d.x - w.goal.x, d.y - w.goal.y);
    if (to_start < d.r + 1.0 || to_goal < d.r + 1.0) continue;
    w.obstacles.push_back(d);
  }
  return w;
}

World wall_with_gap_world(std::uint64_t seed) {
  World w;
  w.seed = seed;
  nk::Rng rng(seed);
  const double gap = rng.uniform(-2.0, 2.0);
  for (double y = w.y_min; y <= w.y_max + 1e-9; y += 0.4)
    if (std::fabs(y - gap) >= 1.0) w.obstacles.push_back({5.0, y, 0.3});
  return w;
}

World sealed_box_world() {
  World w;
  w.goal = {8.0, 0.0, 0.0};
  const std::size_t n = 20;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
    w.obstacles.push_back({w.goal.x + 1.2 * std::cos(a), w.goal.y + 1.2 * std::sin(a), 0.3});
  }
  return w;
}

SuiteSummary run_suite(const planner::PlannerConfig& pc, const SimConfig& sc) {
  SuiteSummary out;
  for (std::size_t i = 0; i < sc.suite_size; ++i) {
    out.episodes.push_back(run_episode(benchmark_world(nk::derive_seed(sc.seed, i)), pc, sc));
    switch (out.episodes.back().outcome) {
      case Outcome::Reached: ++out.reached; break;
      case Outcome::Collided: ++out.collided; break;
      case Outcome::Timeout: ++out.timeout; break;
    }
  }
  return out;
}

}  // namespace cali::navsim
