#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "videopose/error.hpp"
#include "videopose/metrics.hpp"

using namespace vp;

namespace {

// Reference transforms go through Eigen's quaternion so the oracle does not
// share code with quat_to_matrix.
Vec3 ref_apply(const Pose &p, const Vec3 &x) {
  const Eigen::Quaterniond q{p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z};
  return q.normalized() * x + p.translation;
}

double ref_add(const ObjectModel &m, const Pose &gt, const Pose &pred) {
  double sum = 0.0;
  for (const auto &x : m.points) sum += (ref_apply(pred, x) - ref_apply(gt, x)).norm();
  return sum / static_cast<double>(m.points.size());
}

double ref_adds(const ObjectModel &m, const Pose &gt, const Pose &pred) {
  double sum = 0.0;
  for (const auto &x : m.points) {
    double best = INFINITY;
    for (const auto &y : m.points)
      best = std::min(best, (ref_apply(pred, x) - ref_apply(gt, y)).norm());
    sum += best;
  }
  return sum / static_cast<double>(m.points.size());
}

double ref_auc(const std::vector<double> &errors, double max_t, int resolution) {
  // Midpoint integration of the fraction of errors below t over [0, max_t].
  double area = 0.0;
  for (int i = 0; i < resolution; ++i) {
    const double t = (i + 0.5) * max_t / resolution;
    area += static_cast<double>(std::count_if(errors.begin(), errors.end(),
                                              [&](double e) { return e < t; })) /
            static_cast<double>(errors.size());
  }
  return area / resolution;
}

ObjectModel random_model(std::mt19937_64 &rng, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(test::random_vec(rng, -0.1, 0.1));
  return ObjectModel::from_points("r", pts, false);
}

const Pose kIdentity{};

Pose about_z(double angle) {
  return {Quaternion::from_axis_angle({0, 0, 1}, angle), Vec3::Zero()};
}

}  // namespace

TEST_CASE("ADD and ADD-S examples") {
  const ObjectModel cube = make_cube("cube", 1.0);
  CHECK(add_metric(cube, kIdentity, kIdentity) == 0.0);
  CHECK(add_s_metric(cube, kIdentity, kIdentity) == 0.0);
  const Pose shifted{{}, {0.01, 0, 0}};
  CHECK(add_metric(cube, kIdentity, shifted) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(add_s_metric(cube, kIdentity, shifted) == doctest::Approx(0.01).epsilon(1e-12));
  // Exact 180 degree rotation about z.
  const Pose flip{{0, 0, 0, 1}, Vec3::Zero()};
  CHECK(add_metric(cube, kIdentity, flip) == std::sqrt(2.0));
  CHECK(add_s_metric(cube, kIdentity, flip) == 0.0);
}

TEST_CASE("ADD and ADD-S match brute-force references") {
  std::mt19937_64 rng{11};
  for (int i = 0; i < 1000; ++i) {
    const ObjectModel m = random_model(rng, 20);
    const Pose gt = test::random_pose(rng), pred = test::random_pose(rng);
    const double add = add_metric(m, gt, pred), adds = add_s_metric(m, gt, pred);
    CHECK(std::abs(add - ref_add(m, gt, pred)) < 1e-9);
    CHECK(std::abs(adds - ref_adds(m, gt, pred)) < 1e-9);
    CHECK(adds <= add + 1e-12);
  }
}

TEST_CASE("metrics are invariant under a common rigid transform") {
  std::mt19937_64 rng{12};
  for (int i = 0; i < 200; ++i) {
    const ObjectModel m = random_model(rng, 15);
    const Pose gt = test::random_pose(rng), pred = test::random_pose(rng);
    const Pose g = test::random_pose(rng);
    auto left = [&](const Pose &p) {
      Pose out;
      out.rotation = g.rotation.compose(p.rotation);
      out.translation = g.rotation_matrix() * p.translation + g.translation;
      return out;
    };
    CHECK(std::abs(add_metric(m, left(gt), left(pred)) - add_metric(m, gt, pred)) < 1e-9);
    CHECK(std::abs(add_s_metric(m, left(gt), left(pred)) - add_s_metric(m, gt, pred)) < 1e-9);
  }
}

TEST_CASE("ADD with equal rotations is the translation distance") {
  std::mt19937_64 rng{13};
  for (int i = 0; i < 100; ++i) {
    const ObjectModel m = random_model(rng, 10);
    Pose gt = test::random_pose(rng), pred = gt;
    pred.translation += test::random_vec(rng, -0.05, 0.05);
    CHECK(add_metric(m, gt, pred) ==
          doctest::Approx((pred.translation - gt.translation).norm()).epsilon(1e-9));
  }
}

TEST_CASE("compute_pose_error") {
  const ObjectModel cube = make_cube("cube", 1.0);
  const PoseError e = compute_pose_error(cube, kIdentity, about_z(0.4));
  CHECK(e.rotation_error == doctest::Approx(0.4));
  CHECK(e.translation_error == 0.0);
  CHECK(e.add_s <= e.add);
}

TEST_CASE("accuracy_curve examples") {
  CHECK(accuracy_curve({0.0, 0.0, 0.0}, 0.1).auc == 1.0);
  CHECK(accuracy_curve({0.2, 0.5}, 0.1).auc == 0.0);
  CHECK(accuracy_curve({0.05}, 0.1).auc == doctest::Approx(0.5).epsilon(1.0 / 1000));
  const AccuracyCurve c = accuracy_curve({0.01, 0.02}, 0.1, 10);
  CHECK(c.thresholds.size() == 10);
  CHECK(c.thresholds.front() == doctest::Approx(0.005));
  CHECK(c.thresholds.back() == doctest::Approx(0.095));
  CHECK_THROWS_AS(accuracy_curve({}, 0.1), Error);
  CHECK_THROWS_AS(accuracy_curve({0.1}, 0.0), Error);
  CHECK_THROWS_AS(accuracy_curve({0.1}, 0.1, 1), Error);
}

TEST_CASE("accuracy_curve is monotone and integrates correctly") {
  std::mt19937_64 rng{14};
  std::exponential_distribution<double> exp_dist{25.0};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> errors(50);
    for (auto &e : errors) e = exp_dist(rng);
    const int steps = 1000;
    const AccuracyCurve c = accuracy_curve(errors, 0.1, steps);
    CHECK(std::is_sorted(c.thresholds.begin(), c.thresholds.end()));
    CHECK(std::is_sorted(c.accuracy.begin(), c.accuracy.end()));
    CHECK(c.auc >= 0.0);
    CHECK(c.auc <= 1.0);
    CHECK(std::abs(c.auc - ref_auc(errors, 0.1, 10 * steps)) <= 2.0 / steps);
  }
}

TEST_CASE("evaluate_dataset") {
  const ObjectRegistry reg{{make_cube("a", 0.1, 20), make_cylinder("b", 0.03, 0.1, 30),
                            make_pyramid("c", 0.1, 0.1, 20)}};
  SUBCASE("perfect predictions") {
    std::vector<PredictionRecord> preds{{"v/0", "a", kIdentity, kIdentity}};
    const auto ev = evaluate_dataset(preds, reg);
    REQUIRE(ev.rows.size() == 2);
    CHECK(ev.rows[0].id == "a");
    CHECK(ev.rows[0].add_auc == 1.0);
    CHECK(ev.rows[0].adds_auc == 1.0);
    CHECK(ev.rows[1].id == "ALL");
  }
  SUBCASE("ALL pools by prediction count") {
    std::mt19937_64 rng{15};
    std::vector<PredictionRecord> preds;
    std::vector<double> all_add, all_adds;
    // Interleave ids so the rows must come out in registry order.
    const char *ids[] = {"c", "a", "c", "c", "a"};
    for (int i = 0; i < 40; ++i) {
      const std::string id = ids[i % 5];
      Pose gt = test::random_pose(rng), pred = gt;
      pred.translation += test::random_vec(rng, -0.03, 0.03);
      pred.rotation = Quaternion::from_axis_angle(test::random_vec(rng, -1, 1), 0.2)
                          .compose(gt.rotation);
      preds.push_back({"v/" + std::to_string(i), id, gt, pred});
      all_add.push_back(ref_add(reg.by_id(id), gt, pred));
      all_adds.push_back(ref_adds(reg.by_id(id), gt, pred));
    }
    const auto ev = evaluate_dataset(preds, reg);
    REQUIRE(ev.rows.size() == 3);
    CHECK(ev.rows[0].id == "a");
    CHECK(ev.rows[0].count == 16);
    CHECK(ev.rows[1].id == "c");
    CHECK(ev.rows[1].count == 24);
    CHECK(ev.rows[2].id == "ALL");
    CHECK(ev.rows[2].count == 40);
    CHECK(ev.rows[2].add_auc == doctest::Approx(ref_auc(all_add, 0.1, 1000)).epsilon(1e-9));
    CHECK(ev.rows[2].adds_auc == doctest::Approx(ref_auc(all_adds, 0.1, 1000)).epsilon(1e-9));
    CHECK(ev.errors.size() == 40);
  }
  SUBCASE("symmetric objects can report ADD-S as ADD") {
    const Pose gt{}, pred = about_z(1.0);
    std::vector<PredictionRecord> preds{{"v/0", "b", gt, pred}};
    const auto plain = evaluate_dataset(preds, reg);
    EvalOptions opt;
    opt.symmetric_adds_for_add = true;
    const auto compat = evaluate_dataset(preds, reg, opt);
    CHECK(compat.rows[0].add_auc == compat.rows[0].adds_auc);
    CHECK(plain.rows[0].add_auc < compat.rows[0].add_auc);
  }
  SUBCASE("unknown id") {
    std::vector<PredictionRecord> preds{{"v/0", "ghost", kIdentity, kIdentity}};
    CHECK_THROWS_WITH_AS(evaluate_dataset(preds, reg), doctest::Contains("ghost"), Error);
  }
}
