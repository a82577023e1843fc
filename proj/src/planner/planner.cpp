#include "cali/planner/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "cali/errors.hpp"

namespace cali::planner {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFar = 1e20;

// Squared distance transform of a sampled function along one line (lower
// envelope of parabolas rooted at each sample).
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const double fq = f[q] + static_cast<double>(q) * static_cast<double>(q);
    auto meet = [&] {
      const double p = static_cast<double>(v[k]);
      return (fq - (f[v[k]] + p * p)) / (2.0 * static_cast<double>(q) - 2.0 * p);
    };
    double s = meet();
    while (s <= z[k]) {  // z[0] is -inf, so this stops at k == 0
      --k;
      s = meet();
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

void write_pgm16(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                 const std::vector<std::uint16_t>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << cols << ' ' << rows << "\n65535\n";
  for (std::uint16_t p : px) {
    out.put(static_cast<char>(p >> 8));
    out.put(static_cast<char>(p & 0xFF));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

Pose compose(const Pose& base, const Pose& local) {
  const double c = std::cos(base.psi), s = std::sin(base.psi);
  return Pose{base.x + c * local.x - s * local.y, base.y + s * local.x + c * local.y, wrap_angle(base.psi + local.psi)};
}

Pose integrate_unicycle(const Pose& start, double v, double omega, double t) {
  if (std::fabs(omega) < 1e-12)
    return Pose{start.x + v * t * std::cos(start.psi), start.y + v * t * std::sin(start.psi), start.psi};
  const double r = v / omega, psi = start.psi + omega * t;
  return Pose{start.x + r * (std::sin(psi) - std::sin(start.psi)), start.y - r * (std::cos(psi) - std::cos(start.psi)),
              wrap_angle(psi)};
}

std::vector<Primitive> generate_primitives(std::size_t n, double v, double omega_max, double horizon, std::size_t m) {
  if (n < 1) throw ContractError("need at least one primitive");
  if (m < 2) throw ContractError("a primitive needs at least two poses");
  if (!(horizon > 0.0)) throw ContractError("primitive horizon must be positive");
  if (!(omega_max >= 0.0)) throw ContractError("omega_max must be non-negative");
  std::vector<Primitive> lib;
  lib.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double omega = n == 1 ? 0.0 : -omega_max + 2.0 * omega_max * static_cast<double>(i) / (n - 1);
    Primitive p{v, omega, horizon, {}, {}};
    for (std::size_t j = 0; j < m; ++j)
      p.poses.push_back(integrate_unicycle({}, v, omega, horizon * static_cast<double>(j) / (m - 1)));
    lib.push_back(std::move(p));
  }
  return lib;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("focal lengths must be positive", "planner.camera.fx");
  if (!(height > 0.0)) throw ConfigError("mount height must be positive", "planner.camera.height");
  if (!(pitch > 0.0 && pitch < kPi / 2)) throw ConfigError("pitch must lie in (0, pi/2)", "planner.camera.pitch");
  if (image_h == 0 || image_w == 0) throw ConfigError("image size must be positive", "planner.camera.image_h");
}

std::optional<Pixel> project_to_image(const Pose& p, const CameraModel& cam) {
  const double s = std::sin(cam.pitch), c = std::cos(cam.pitch);
  // ground point relative to the camera centre
  const double X = p.x, Y = p.y, Z = -cam.height;
  const double xc = -Y;
  const double yc = -X * s - Z * c;
  const double zc = X * c - Z * s;
  if (zc <= 1e-9) return std::nullopt;
  const Pixel px{cam.cx + cam.fx * xc / zc, cam.cy + cam.fy * yc / zc};
  if (px.u < 0.0 || px.v < 0.0 || px.u >= static_cast<double>(cam.image_w) ||
      px.v >= static_cast<double>(cam.image_h))
    return std::nullopt;
  return px;
}

void project_primitive(Primitive& prim, const CameraModel& cam) {
  prim.image_points.clear();
  for (const Pose& p : prim.poses) prim.image_points.push_back(project_to_image(p, cam));
}

std::vector<BoundaryPoint> extract_boundary(const Grid& mask, std::size_t v_thres) {
  for (double m : mask.values)
    if (m != 0.0 && m != 1.0) throw ContractError("navigability mask must be binary");
  std::vector<BoundaryPoint> out;
  for (std::size_t r = v_thres + 1; r < mask.rows; ++r)
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (mask.at(r, c) != 1.0) continue;
      const bool edge = (r > 0 && mask.at(r - 1, c) == 0.0) || (r + 1 < mask.rows && mask.at(r + 1, c) == 0.0) ||
                        (c > 0 && mask.at(r, c - 1) == 0.0) || (c + 1 < mask.cols && mask.at(r, c + 1) == 0.0);
      if (edge) out.push_back({c, r});
    }
  return out;
}

DistanceField edf(std::span<const BoundaryPoint> omega, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ContractError("distance field needs a non-empty image");
  DistanceField out{Grid(rows, cols), 1.0, 0.0};
  if (omega.empty()) {
    const double diag = std::sqrt(static_cast<double>(rows * rows + cols * cols));
    std::fill(out.field.values.begin(), out.field.values.end(), diag);
    out.d_max = diag;
    return out;
  }
  Grid sq(rows, cols, kFar);
  for (const auto& p : omega) {
    if (p.v >= rows || p.u >= cols) throw ContractError("boundary point outside the image");
    sq.at(p.v, p.u) = 0.0;
  }
  const std::size_t n = std::max(rows, cols);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  f.resize(rows);
  d.resize(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) f[r] = sq.at(r, c);
    dt_1d(f, d, v, z);
    for (std::size_t r = 0; r < rows; ++r) sq.at(r, c) = d[r];
  }
  f.resize(cols);
  d.resize(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) f[c] = sq.at(r, c);
    dt_1d(f, d, v, z);
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::sqrt(d[c]);
      out.field.at(r, c) = e;
      out.d_max = std::max(out.d_max, e);
    }
  }
  return out;
}

DistanceField sedf(const DistanceField& e, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in [0, 1]");
  DistanceField out{e.field, alpha, e.d_max};
  const double cap = alpha * e.d_max;
  for (double& x : out.field.values) x = std::min(x, cap);
  return out;
}

double collision_cost(const Primitive& prim, const DistanceField& e, bool literal_clearance, const Grid* mask) {
  if (e.field.values.empty()) throw ContractError("collision cost needs a non-empty distance field");
  if (prim.image_points.size() != prim.poses.size()) throw ContractError("primitive has not been projected");
  if (mask && (mask->rows != e.field.rows || mask->cols != e.field.cols))
    throw ContractError("mask and distance field sizes differ");
  const double cap = e.alpha * e.d_max;
  double total = 0.0;
  for (const auto& px : prim.image_points) {
    std::optional<double> clearance;
    if (px) {
      const auto r = static_cast<std::size_t>(px->v), c = static_cast<std::size_t>(px->u);
      if (r < e.field.rows && c < e.field.cols && (!mask || mask->at(r, c) == 1.0)) clearance = e.field.at(r, c);
    }
    if (literal_clearance)
      total += clearance ? *clearance : cap;
    else if (!clearance || cap <= 0.0)
      total += 1.0;
    else
      total += std::clamp((cap - *clearance) / cap, 0.0, 1.0);
  }
  return total;
}

double se3_distance(const Pose& t1, const Pose& t2, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("se3_distance weights must be positive");
  const double rot = std::fabs(wrap_angle(t2.psi - t1.psi));
  const double dx = t1.x - t2.x, dy = t1.y - t2.y;
  return std::sqrt(a * rot * rot + b * (dx * dx + dy * dy));
}

Selection select_primitive(std::span<const Primitive> lib, const DistanceField& e, const Pose& goal,
                           const CostWeights& w, bool literal_clearance, const Grid* mask) {
  if (lib.empty()) throw ContractError("primitive library is empty");
  Selection s;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lib.size(); ++i) {
    PrimitiveCost c;
    c.collision = collision_cost(lib[i], e, literal_clearance, mask);
    for (const Pose& p : lib[i].poses) c.target += se3_distance(p, goal, w.a, w.b);
    c.total = w.w1 * c.collision + w.w2 * c.target;
    if (c.total < best) {
      best = c.total;
      s.index = i;
    }
    s.costs.push_back(c);
  }
  return s;
}

void PlannerConfig::validate() const {
  if (n_primitives < 1) throw ConfigError("must be at least 1", "planner.n_primitives");
  if (samples < 2) throw ConfigError("must be at least 2", "planner.samples");
  if (!(speed >= 0.0)) throw ConfigError("must be non-negative", "planner.speed");
  if (!(omega_max >= 0.0)) throw ConfigError("must be non-negative", "planner.omega_max");
  if (!(horizon > 0.0)) throw ConfigError("must be positive", "planner.horizon");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("must lie in [0, 1]", "planner.alpha");
  if (!(v_thres_fraction >= 0.0 && v_thres_fraction <= 1.0))
    throw ConfigError("must lie in [0, 1]", "planner.v_thres_fraction");
  if (!(weights.w1 >= 0.0) || !(weights.w2 >= 0.0)) throw ConfigError("must be non-negative", "planner.w1");
  if (!(weights.a > 0.0)) throw ConfigError("must be positive", "planner.a");
  if (!(weights.b > 0.0)) throw ConfigError("must be positive", "planner.b");
  camera.validate();
}

std::size_t PlannerConfig::v_thres() const {
  return static_cast<std::size_t>(std::floor(v_thres_fraction * static_cast<double>(camera.image_h)));
}

std::vector<Primitive> build_library(const PlannerConfig& config) {
  auto lib = generate_primitives(config.n_primitives, config.speed, config.omega_max, config.horizon, config.samples);
  for (auto& p : lib) project_primitive(p, config.camera);
  return lib;
}

PlanResult plan_frame(const Grid& mask, std::span<const Primitive> lib, const Pose& goal_in_robot,
                      const PlannerConfig& config) {
  PlanResult r;
  r.boundary = extract_boundary(mask, config.v_thres());
  r.field = sedf(edf(r.boundary, mask.rows, mask.cols), config.alpha);
  r.selection = select_primitive(lib, r.field, goal_in_robot, config.weights, config.literal_clearance, &mask);
  return r;
}

void write_field_pgm(const std::filesystem::path& path, const DistanceField& e) {
  const double cap = e.alpha * e.d_max;
  std::vector<std::uint16_t> px;
  px.reserve(e.field.values.size());
  for (double v : e.field.values)
    px.push_back(cap > 0.0 ? static_cast<std::uint16_t>(std::lround(65535.0 * std::clamp(v / cap, 0.0, 1.0))) : 0);
  write_pgm16(path, e.field.rows, e.field.cols, px);
}

void write_mask_pgm(const std::filesystem::path& path, const Grid& mask) {
  std::vector<std::uint16_t> px;
  for (double v : mask.values) px.push_back(v == 1.0 ? 65535 : 0);
  write_pgm16(path, mask.rows, mask.cols, px);
}

nlohmann::ordered_json plan_trace(std::span<const Primitive> lib, const Selection& s) {
  nlohmann::ordered_json costs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.costs.size(); ++i)
    costs.push_back({{"index", i},
                     {"omega", lib[i].omega},
                     {"collision", s.costs[i].collision},
                     {"target", s.costs[i].target},
                     {"total", s.costs[i].total}});
  return {{"selected", s.index}, {"costs", costs}};
}

}  // namespace cali::planner
