#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

namespace cali::planner {

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;

  // psi wrapped into (-pi, pi].
  Pose normalized() const { return {x, y, wrap_angle(psi)}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

// `local` expressed in the frame of `base`.
Pose compose(const Pose& base, const Pose& local);

// Closed-form unicycle motion for time t from `start`.
Pose integrate_unicycle(const Pose& start, double v, double omega, double t);

// Image coordinates: u is the column, v the row (growing downward).
struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

struct Primitive {
  double v = 0.0;
  double omega = 0.0;
  double horizon = 0.0;
  std::vector<Pose> poses;  // robot frame, first pose at the origin
  std::vector<std::optional<Pixel>> image_points;
};

// n primitives with omega evenly spaced over [-omega_max, omega_max] (a single
// primitive gets omega = 0) and m poses at t = j T / (m - 1).
// Throws ContractError unless n >= 1, m >= 2, T > 0 and omega_max >= 0.
std::vector<Primitive> generate_primitives(std::size_t n, double v, double omega_max, double horizon, std::size_t m);

// Pinhole camera mounted `height` metres above the ground and pitched down by
// `pitch` radians; the robot's x axis is forward, y left, z up.
struct CameraModel {
  double fx = 50.0;
  double fy = 50.0;
  double cx = 40.0;
  double cy = 30.0;
  double height = 0.5;
  double pitch = 0.5;
  std::size_t image_h = 60;
  std::size_t image_w = 80;

  // Throws ConfigError ("planner.camera.*").
  void validate() const;
  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

// Ground point (robot frame, z = 0) to pixel; nullopt when behind the camera
// or outside [0, W) x [0, H).
std::optional<Pixel> project_to_image(const Pose& p, const CameraModel& cam);

// Fills `image_points` for poses given in the robot frame.
void project_primitive(Primitive& prim, const CameraModel& cam);

// Row-major grid of doubles, rows = image height.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

struct BoundaryPoint {
  std::size_t u = 0;  // column
  std::size_t v = 0;  // row
  friend bool operator==(const BoundaryPoint&, const BoundaryPoint&) = default;
};

// Navigable pixels (value 1) that are 4-adjacent to a non-navigable pixel and
// lie strictly below row v_thres. Throws ContractError for non-binary masks.
std::vector<BoundaryPoint> extract_boundary(const Grid& mask, std::size_t v_thres);

struct DistanceField {
  Grid field;
  double alpha = 1.0;
  double d_max = 0.0;  // maximum of the unscaled field
};

// Exact Euclidean distance to the nearest boundary point (two-pass separable
// transform). An empty boundary yields the image diagonal everywhere.
DistanceField edf(std::span<const BoundaryPoint> omega, std::size_t rows, std::size_t cols);

// min(E, alpha * d_max); throws ContractError unless alpha is in [0, 1].
DistanceField sedf(const DistanceField& e, double alpha);

// Sum over poses of the normalized risk (alpha d_max - E') / (alpha d_max).
// Out-of-view poses, and poses on non-navigable pixels when `mask` is given,
// count as risk 1. With `literal_clearance` the raw clearance E' is summed instead
// and out-of-view poses count as alpha d_max. Throws ContractError for an
// empty field or a primitive that has not been projected.
double collision_cost(const Primitive& prim, const DistanceField& e, bool literal_clearance = false,
                      const Grid* mask = nullptr);

// [a |yaw1 - yaw2|^2 + b |t1 - t2|^2]^(1/2) with the yaw difference wrapped to
// [0, pi]. Throws ContractError unless a, b > 0.
double se3_distance(const Pose& t1, const Pose& t2, double a, double b);

struct CostWeights {
  double w1 = 1.0;
  double w2 = 0.05;
  double a = 0.1;
  double b = 1.0;
  friend bool operator==(const CostWeights&, const CostWeights&) = default;
};

struct PrimitiveCost {
  double collision = 0.0;
  double target = 0.0;
  double total = 0.0;
};

struct Selection {
  std::size_t index = 0;
  std::vector<PrimitiveCost> costs;
};

// argmin of w1 C_c + w2 C_t over the library; the goal is given in the robot
// frame and ties go to the lowest index. Primitives must be projected.
Selection select_primitive(std::span<const Primitive> lib, const DistanceField& e, const Pose& goal,
                           const CostWeights& w, bool literal_clearance = false, const Grid* mask = nullptr);

struct PlannerConfig {
  std::size_t n_primitives = 11;
  double speed = 0.3;
  double omega_max = 0.6;
  double horizon = 4.0;
  std::size_t samples = 9;
  double alpha = 0.4;
  double v_thres_fraction = 0.4;  // v_thres = fraction * image height
  CostWeights weights;
  bool literal_clearance = false;
  CameraModel camera;

  // Throws ConfigError ("planner.*").
  void validate() const;
  std::size_t v_thres() const;
  friend bool operator==(const PlannerConfig&, const PlannerConfig&) = default;
};

// Projected primitive library for a configuration.
std::vector<Primitive> build_library(const PlannerConfig& config);

struct PlanResult {
  Selection selection;
  std::vector<BoundaryPoint> boundary;
  DistanceField field;  // after scaling
};

// One planning frame: boundary, scaled field, primitive selection.
PlanResult plan_frame(const Grid& mask, std::span<const Primitive> lib, const Pose& goal_in_robot,
                      const PlannerConfig& config);

// 16-bit binary PGM (P5, big-endian samples), value = round(65535 E' / (alpha d_max)).
void write_field_pgm(const std::filesystem::path& path, const DistanceField& e);
// 16-bit PGM of a binary mask (navigable = 65535).
void write_mask_pgm(const std::filesystem::path& path, const Grid& mask);

nlohmann::ordered_json plan_trace(std::span<const Primitive> lib, const Selection& s);

}  // namespace cali::planner
