#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cali/models/models.hpp"
#include "cali/planner/planner.hpp"
#include "cali/synthdata/synthdata.hpp"
#include "json.hpp"

namespace cali::navsim {

using planner::Pose;

struct Disk {
  double x = 0.0;
  double y = 0.0;
  double r = 0.0;
  friend bool operator==(const Disk&, const Disk&) = default;
};

struct World {
  double x_min = 0.0, x_max = 12.0;
  double y_min = -4.0, y_max = 4.0;
  std::vector<Disk> obstacles;
  Pose start{0.5, 0.0, 0.0};
  Pose goal{10.0, 0.0, 0.0};
  std::uint64_t seed = 0;

  bool in_bounds(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  // Distance from (x, y) to the nearest obstacle edge; +inf without obstacles.
  double clearance(double x, double y) const;
  // Throws ConfigError ("sim.world") when start or goal is blocked or out of bounds.
  void validate(double robot_radius) const;
  friend bool operator==(const World&, const World&) = default;
};

struct SimConfig {
  double dt = 0.5;              // executed time per planning cycle (s)
  double goal_tolerance = 0.3;  // m
  double robot_radius = 0.2;    // obstacle inflation for collision checks (m)
  std::size_t max_steps = 300;
  std::size_t suite_size = 10;
  std::uint64_t seed = 0;       // base seed of the benchmark suite

  // Throws ConfigError ("sim.*").
  void validate() const;
  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

// Pose of `p` expressed in the frame of `base`.
Pose relative(const Pose& base, const Pose& p);

// Per-pixel navigability seen from `pose`: the ray through each pixel centre
// is intersected with the ground; pixels whose ground point is outside the
// bounds or inside an obstacle disk (or that never hit the ground) are 0.
planner::Grid render_segmentation(const World& world, const Pose& pose, const planner::CameraModel& cam);

// Ground-truth class ids for the same rays: 0 ground, 1 obstacle, 2 out of
// bounds, 3 above the horizon.
planner::Grid render_classes(const World& world, const Pose& pose, const planner::CameraModel& cam);

// True when the segment a-b passes within `r` of the point c.
bool segment_hits_circle(double ax, double ay, double bx, double by, double cx, double cy, double r);

struct StepResult {
  Pose pose;
  bool collided = false;
};

// Executes the primitive's controls for dt with exact unicycle motion. The
// swept path is checked chord by chord against the obstacles inflated by
// `robot_radius` and against the world bounds.
StepResult step_world(const World& world, const Pose& pose, const planner::Primitive& prim, double dt,
                      double robot_radius);

enum class Outcome { Reached, Collided, Timeout };
std::string outcome_name(Outcome o);

struct StepRecord {
  std::size_t selected = 0;
  std::vector<planner::PrimitiveCost> costs;
};

struct EpisodeLog {
  std::vector<Pose> poses;  // start pose followed by one pose per executed step
  std::vector<StepRecord> steps;
  Outcome outcome = Outcome::Timeout;
  double path_length = 0.0;
};

nlohmann::ordered_json to_json(const EpisodeLog& log);

// Produces the navigability mask handed to the planner.
using SegmentationSource = std::function<planner::Grid(const World&, const Pose&, const planner::CameraModel&)>;

// Renders a textured image from the ground-truth classes with the target-domain
// appearance of `spec`, segments it with head C1 and marks class 0 as navigable.
SegmentationSource model_segmentation(const models::ModelBundle& bundle, const synthdata::DomainSpec& spec,
                                      std::uint64_t seed);

// Per-step mask and field dumps.
struct DumpOptions {
  std::filesystem::path dir;
};

// Render, plan, execute dt; stops when the goal is within tolerance, on
// collision or after max_steps cycles. The default source is the renderer.
EpisodeLog run_episode(const World& world, const planner::PlannerConfig& pc, const SimConfig& sc,
                       const SegmentationSource& source = {}, const std::optional<DumpOptions>& dump = std::nullopt);

World empty_world();
// Cluttered field of disks between start and goal, drawn from `seed`.
World benchmark_world(std::uint64_t seed);
// A wall across the corridor with one gap at a seeded position.
World wall_with_gap_world(std::uint64_t seed);
// The goal enclosed by a closed ring of disks.
World sealed_box_world();

struct SuiteSummary {
  std::vector<EpisodeLog> episodes;
  std::size_t reached = 0;
  std::size_t collided = 0;
  std::size_t timeout = 0;
};

// Runs benchmark_world(derive_seed(sc.seed, i)) for i < sc.suite_size.
SuiteSummary run_suite(const planner::PlannerConfig& pc, const SimConfig& sc);

}  // namespace cali::navsim
