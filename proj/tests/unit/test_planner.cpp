#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"
#include "cali/planner/planner.hpp"
#include "doctest.h"

using namespace cali;
using namespace cali::planner;

namespace {

constexpr double kPi = std::numbers::pi;

double brute_edf(const std::vector<BoundaryPoint>& pts, std::size_t r, std::size_t c) {
  double best = 1e300;
  for (const auto& p : pts) {
    const double du = static_cast<double>(p.u) - static_cast<double>(c);
    const double dv = static_cast<double>(p.v) - static_cast<double>(r);
    best = std::min(best, std::sqrt(du * du + dv * dv));
  }
  return best;
}

// Camera-frame coordinates from an explicit rotation matrix whose rows are the
// camera axes written in the robot frame.
std::array<double, 3> camera_frame(const Pose& p, const CameraModel& cam) {
  const double s = std::sin(cam.pitch), c = std::cos(cam.pitch);
  const double R[3][3] = {{0, -1, 0}, {-s, 0, -c}, {c, 0, -s}};
  const double d[3] = {p.x, p.y, -cam.height};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i] += R[i][j] * d[j];
  return out;
}

Primitive with_points(std::vector<std::optional<Pixel>> pts) {
  Primitive p;
  p.poses.resize(pts.size());
  p.image_points = std::move(pts);
  return p;
}

}  // namespace

TEST_CASE("angle wrapping and pose composition") {
  CHECK(wrap_angle(0.0) == doctest::Approx(0.0));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(7.0) == doctest::Approx(7.0 - 2 * kPi));

  const Pose base{1.0, 2.0, kPi / 2};
  const Pose g = compose(base, {1.0, 0.0, 0.0});
  CHECK(g.x == doctest::Approx(1.0));
  CHECK(g.y == doctest::Approx(3.0));
  CHECK(g.psi == doctest::Approx(kPi / 2));
}

TEST_CASE("primitive generation") {
  SUBCASE("straight line") {
    const auto lib = generate_primitives(1, 0.3, 0.6, 4.0, 5);
    REQUIRE(lib.size() == 1);
    CHECK(lib[0].omega == 0.0);
    REQUIRE(lib[0].poses.size() == 5);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(lib[0].poses[j].x == doctest::Approx(0.3 * static_cast<double>(j)));
      CHECK(lib[0].poses[j].y == doctest::Approx(0.0));
      CHECK(lib[0].poses[j].psi == doctest::Approx(0.0));
    }
  }
  SUBCASE("quarter turn endpoint") {
    const auto lib = generate_primitives(3, 1.0, kPi / 2, 1.0, 3);
    CHECK(lib[2].omega == doctest::Approx(kPi / 2));
    const Pose end = lib[2].poses.back();
    CHECK(end.x == doctest::Approx(2.0 / kPi).epsilon(1e-9));
    CHECK(end.y == doctest::Approx(2.0 / kPi).epsilon(1e-9));
    CHECK(end.psi == doctest::Approx(kPi / 2));
    CHECK(std::hypot(end.x, end.y) == doctest::Approx(0.9003).epsilon(1e-3));
  }
  SUBCASE("mirror symmetry") {
    const auto lib = generate_primitives(7, 0.3, 0.8, 4.0, 9);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(lib[i].omega == doctest::Approx(-lib[6 - i].omega));
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(lib[i].poses[j].x == doctest::Approx(lib[6 - i].poses[j].x));
        CHECK(lib[i].poses[j].y == doctest::Approx(-lib[6 - i].poses[j].y));
        CHECK(lib[i].poses[j].psi == doctest::Approx(-lib[6 - i].poses[j].psi));
      }
    }
  }
  SUBCASE("small omega agrees with the straight limit") {
    const Pose a = integrate_unicycle({}, 0.3, 1e-7, 4.0);
    CHECK(a.x == doctest::Approx(1.2));
    CHECK(a.y == doctest::Approx(0.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(generate_primitives(0, 0.3, 0.6, 4.0, 5), ContractError);
  CHECK_THROWS_AS(generate_primitives(3, 0.3, 0.6, 4.0, 1), ContractError);
  CHECK_THROWS_AS(generate_primitives(3, 0.3, 0.6, 0.0, 5), ContractError);
}

TEST_CASE("camera projection") {
  CameraModel cam;
  SUBCASE("optical axis hits the principal point") {
    const Pose p{cam.height / std::tan(cam.pitch), 0.0, 0.0};
    const auto px = project_to_image(p, cam);
    REQUIRE(px);
    CHECK(px->u == doctest::Approx(cam.cx));
    CHECK(px->v == doctest::Approx(cam.cy));
  }
  SUBCASE("behind the camera") { CHECK_FALSE(project_to_image({-1.0, 0.0, 0.0}, cam)); }
  SUBCASE("left of the robot maps to smaller columns") {
    const auto l = project_to_image({2.0, 0.3, 0.0}, cam);
    const auto r = project_to_image({2.0, -0.3, 0.0}, cam);
    REQUIRE(l);
    REQUIRE(r);
    CHECK(l->u < cam.cx);
    CHECK(r->u > cam.cx);
    CHECK(l->u + r->u == doctest::Approx(2 * cam.cx));
  }
  SUBCASE("nearer points sit lower in the image") {
    const auto near = project_to_image({0.6, 0.0, 0.0}, cam);
    const auto far = project_to_image({3.0, 0.0, 0.0}, cam);
    REQUIRE(near);
    REQUIRE(far);
    CHECK(near->v > far->v);
  }
  SUBCASE("rotation-matrix oracle") {
    CameraModel c2;
    c2.height = 1.0;
    c2.pitch = 0.3;
    const Pose p{3.0, 0.5, 0.0};
    const auto pc = camera_frame(p, c2);
    const auto px = project_to_image(p, c2);
    REQUIRE(px);
    CHECK(px->u == doctest::Approx(c2.cx + c2.fx * pc[0] / pc[2]).epsilon(1e-12));
    CHECK(px->v == doctest::Approx(c2.cy + c2.fy * pc[1] / pc[2]).epsilon(1e-12));
  }
  SUBCASE("library projection") {
    PlannerConfig cfg;
    const auto lib = build_library(cfg);
    REQUIRE(lib.size() == cfg.n_primitives);
    for (const auto& p : lib) {
      REQUIRE(p.image_points.size() == p.poses.size());
      // the first pose sits under the camera, below the bottom row
      CHECK_FALSE(p.image_points.front());
    }
    CHECK(lib[cfg.n_primitives / 2].image_points.back());
  }
  cam.pitch = 0.0;
  CHECK_THROWS_AS(cam.validate(), ConfigError);
}

TEST_CASE("boundary extraction") {
  Grid mask(4, 4, 1.0);
  for (std::size_t c = 0; c < 4; ++c) mask.at(0, c) = mask.at(1, c) = 0.0;
  const auto b = extract_boundary(mask, 0);
  REQUIRE(b.size() == 4);
  for (std::size_t c = 0; c < 4; ++c) CHECK(b[c] == BoundaryPoint{c, 2});
  CHECK(extract_boundary(mask, 2).empty());

  Grid hole(5, 5, 1.0);
  hole.at(3, 2) = 0.0;
  const auto h = extract_boundary(hole, 0);
  CHECK(h.size() == 4);
  CHECK(extract_boundary(hole, 3).size() == 1);  // only the pixel beneath the hole

  Grid all(3, 3, 1.0);
  CHECK(extract_boundary(all, 0).empty());

  mask.at(3, 3) = 0.5;
  CHECK_THROWS_AS(extract_boundary(mask, 0), ContractError);
}

TEST_CASE("Euclidean distance field") {
  SUBCASE("corner example") {
    const std::vector<BoundaryPoint> pts{{0, 0}};
    const auto e = edf(pts, 3, 3);
    CHECK(e.field.at(0, 0) == 0.0);
    CHECK(e.field.at(2, 2) == doctest::Approx(std::sqrt(8.0)));
    CHECK(e.field.at(1, 2) == doctest::Approx(std::sqrt(5.0)));
    CHECK(e.d_max == doctest::Approx(std::sqrt(8.0)));
  }
  SUBCASE("matches brute force on random sets") {
    nk::Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t rows = 1 + rng.below(20), cols = 1 + rng.below(20);
      std::vector<BoundaryPoint> pts;
      const std::size_t n = 1 + rng.below(6);
      for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.below(cols), rng.below(rows)});
      const auto e = edf(pts, rows, cols);
      double dmax = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double want = brute_edf(pts, r, c);
          CHECK(std::fabs(e.field.at(r, c) - want) <= 1e-9);
          dmax = std::max(dmax, want);
        }
      CHECK(e.d_max == doctest::Approx(dmax));
    }
  }
  SUBCASE("empty boundary") {
    const auto e = edf({}, 3, 4);
    for (double v : e.field.values) CHECK(v == doctest::Approx(5.0));
  }
  const std::vector<BoundaryPoint> outside{{5, 0}};
  CHECK_THROWS_AS(edf(outside, 3, 3), ContractError);
}

TEST_CASE("scaled distance field") {
  const std::vector<BoundaryPoint> pts{{0, 0}};
  const auto e = edf(pts, 5, 5);
  const auto s = sedf(e, 0.5);
  const double cap = 0.5 * e.d_max;
  for (std::size_t i = 0; i < e.field.values.size(); ++i)
    CHECK(s.field.values[i] == doctest::Approx(std::min(e.field.values[i], cap)));
  CHECK(s.field.at(0, 1) == doctest::Approx(1.0));
  CHECK(s.field.at(4, 4) == doctest::Approx(cap));

  const auto twice = sedf(s, 0.5);
  CHECK(twice.field == s.field);
  const auto one = sedf(e, 1.0);
  CHECK(one.field == e.field);
  for (double v : sedf(e, 0.0).field.values) CHECK(v == 0.0);

  CHECK_THROWS_AS(sedf(e, -0.1), ContractError);
  CHECK_THROWS_AS(sedf(e, 1.5), ContractError);
}

TEST_CASE("collision cost") {
  // 8x8 field with a single boundary point at row 4, column 4.
  const std::vector<BoundaryPoint> pts{{4, 4}};
  const auto e = sedf(edf(pts, 8, 8), 0.5);
  const double cap = 0.5 * std::sqrt(32.0);
  CHECK(e.d_max == doctest::Approx(std::sqrt(32.0)));

  const auto prim = with_points({Pixel{4.5, 4.5}, Pixel{4.2, 6.9}, Pixel{0.1, 0.1}, std::nullopt});
  // clearances: 0, 2, min(sqrt 32, cap) = cap, out of view
  const double want = 1.0 + (cap - 2.0) / cap + 0.0 + 1.0;
  CHECK(collision_cost(prim, e) == doctest::Approx(want));
  CHECK(collision_cost(prim, e, true) == doctest::Approx(0.0 + 2.0 + cap + cap));

  Grid mask(8, 8, 1.0);
  mask.at(0, 0) = 0.0;
  CHECK(collision_cost(prim, e, false, &mask) == doctest::Approx(want + 1.0));

  // risk never leaves [0, 1] per pose
  nk::Rng rng(3);
  std::vector<std::optional<Pixel>> many;
  for (int i = 0; i < 50; ++i) many.push_back(Pixel{rng.uniform(0, 8), rng.uniform(0, 8)});
  const double c = collision_cost(with_points(many), e);
  CHECK(c >= 0.0);
  CHECK(c <= 50.0);

  Primitive unprojected;
  unprojected.poses.resize(2);
  CHECK_THROWS_AS(collision_cost(unprojected, e), ContractError);
  CHECK_THROWS_AS(collision_cost(prim, DistanceField{}), ContractError);
  Grid wrong(4, 4, 1.0);
  CHECK_THROWS_AS(collision_cost(prim, e, false, &wrong), ContractError);
}

TEST_CASE("pose distance") {
  CHECK(se3_distance({1, 2, 0.3}, {1, 2, 0.3}, 0.5, 1.0) == 0.0);
  CHECK(se3_distance({0, 0, 0}, {3, 4, 0}, 0.5, 1.0) == doctest::Approx(5.0));
  CHECK(se3_distance({0, 0, 0}, {0, 0, kPi / 2}, 0.5, 1.0) == doctest::Approx(std::sqrt(0.5) * kPi / 2));
  CHECK(se3_distance({0, 0, kPi}, {0, 0, -kPi}, 0.5, 1.0) == doctest::Approx(0.0));
  CHECK(se3_distance({0, 0, 3.0}, {0, 0, -3.0}, 1.0, 1.0) == doctest::Approx(2 * kPi - 6.0));
  CHECK(se3_distance({0, 0, 0}, {1, 0, 0}, 0.5, 4.0) == doctest::Approx(2.0));

  nk::Rng rng(11);
  auto rand_pose = [&] { return Pose{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi)}; };
  for (int i = 0; i < 500; ++i) {
    const Pose p = rand_pose(), q = rand_pose(), r = rand_pose();
    const double a = rng.uniform(0.1, 2.0), b = rng.uniform(0.1, 2.0);
    CHECK(se3_distance(p, r, a, b) <= se3_distance(p, q, a, b) + se3_distance(q, r, a, b) + 1e-12);
    CHECK(se3_distance(p, q, a, b) == doctest::Approx(se3_distance(q, p, a, b)));
  }
  CHECK_THROWS_AS(se3_distance({}, {}, 0.0, 1.0), ContractError);
  CHECK_THROWS_AS(se3_distance({}, {}, 1.0, -1.0), ContractError);
}

TEST_CASE("primitive selection") {
  PlannerConfig cfg;
  const auto lib = build_library(cfg);
  const Grid open(cfg.camera.image_h, cfg.camera.image_w, 1.0);
  const std::size_t mid = cfg.n_primitives / 2;

  SUBCASE("open ground, goal ahead") {
    const auto r = plan_frame(open, lib, {5.0, 0.0, 0.0}, cfg);
    CHECK(r.boundary.empty());
    CHECK(r.selection.index == mid);
    REQUIRE(r.selection.costs.size() == lib.size());
    for (const auto& c : r.selection.costs)
      CHECK(c.total == doctest::Approx(cfg.weights.w1 * c.collision + cfg.weights.w2 * c.target));
  }
  SUBCASE("goal to the left") {
    const auto r = plan_frame(open, lib, {1.0, 3.0, 0.0}, cfg);
    CHECK(r.selection.index > mid);
    CHECK(lib[r.selection.index].omega > 0.0);
  }
  SUBCASE("obstacle ahead-left steers right") {
    Grid mask = open;
    for (std::size_t r = 25; r < 45; ++r)
      for (std::size_t c = 0; c < 46; ++c) mask.at(r, c) = 0.0;
    const auto res = plan_frame(mask, lib, {5.0, 0.0, 0.0}, cfg);
    CHECK(lib[res.selection.index].omega < 0.0);
  }
  SUBCASE("uniform weight scaling keeps the choice") {
    Grid mask = open;
    for (std::size_t r = 30; r < 50; ++r)
      for (std::size_t c = 30; c < 50; ++c) mask.at(r, c) = 0.0;
    const auto base = plan_frame(mask, lib, {4.0, 1.0, 0.0}, cfg);
    PlannerConfig scaled = cfg;
    scaled.weights.w1 *= 7.5;
    scaled.weights.w2 *= 7.5;
    CHECK(plan_frame(mask, lib, {4.0, 1.0, 0.0}, scaled).selection.index == base.selection.index);
  }
  SUBCASE("mirrored scene mirrors the choice") {
    Grid mask = open, mirrored = open;
    for (std::size_t r = 28; r < 48; ++r)
      for (std::size_t c = 10; c < 38; ++c) {
        mask.at(r, c) = 0.0;
        mirrored.at(r, cfg.camera.image_w - 1 - c) = 0.0;
      }
    const auto a = plan_frame(mask, lib, {4.0, 0.5, 0.0}, cfg);
    const auto b = plan_frame(mirrored, lib, {4.0, -0.5, 0.0}, cfg);
    CHECK(a.selection.index + b.selection.index == lib.size() - 1);
  }
  SUBCASE("ties go to the lowest index") {
    std::vector<Primitive> twins(3, lib[mid]);
    const auto r = select_primitive(twins, sedf(edf({}, 60, 80), 0.25), {5.0, 0.0, 0.0}, cfg.weights);
    CHECK(r.index == 0);
  }
  CHECK_THROWS_AS(select_primitive({}, sedf(edf({}, 60, 80), 0.25), {}, cfg.weights), ContractError);

  const auto trace = plan_trace(lib, plan_frame(open, lib, {5.0, 0.0, 0.0}, cfg).selection);
  CHECK(trace["selected"] == mid);
  CHECK(trace["costs"].size() == lib.size());
}

TEST_CASE("planner configuration") {
  PlannerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.v_thres() == 24);
  auto bad = cfg;
  bad.alpha = 2.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.samples = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.weights.a = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("PGM output") {
  const auto dir = std::filesystem::temp_directory_path() / "cali_test_planner_pgm";
  std::filesystem::create_directories(dir);
  const std::vector<BoundaryPoint> pts{{0, 0}};
  const auto e = sedf(edf(pts, 2, 3), 1.0);
  write_field_pgm(dir / "f.pgm", e);
  std::ifstream in(dir / "f.pgm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n3 2\n65535\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(bytes.substr(0, header.size()) == header);
  auto sample = [&](std::size_t i) {
    const auto hi = static_cast<unsigned char>(bytes[header.size() + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[header.size() + 2 * i + 1]);
    return hi * 256u + lo;
  };
  CHECK(sample(0) == 0u);
  CHECK(sample(5) == 65535u);  // farthest pixel, sqrt 5
  CHECK(sample(1) == static_cast<unsigned>(std::lround(65535.0 / std::sqrt(5.0))));

  Grid mask(1, 2, 0.0);
  mask.at(0, 1) = 1.0;
  write_mask_pgm(dir / "m.pgm", mask);
  CHECK(std::filesystem::file_size(dir / "m.pgm") == std::string("P5\n2 1\n65535\n").size() + 4);
  CHECK_THROWS_AS(write_field_pgm(dir / "missing" / "x.pgm", e), IoError);
  std::filesystem::remove_all(dir);
}
