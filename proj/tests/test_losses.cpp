#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "videopose/error.hpp"
#include "videopose/losses.hpp"

using namespace vp;

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-3;

bool grad_close(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) <= kRelTol * scale;
}

double central(const std::function<double(double)> &f, double x) {
  return (f(x + kStep) - f(x - kStep)) / (2.0 * kStep);
}

double &component(Quaternion &q, int i) {
  return i == 0 ? q.w : i == 1 ? q.x : i == 2 ? q.y : q.z;
}

double component(const Quaternion &q, int i) {
  return i == 0 ? q.w : i == 1 ? q.x : i == 2 ? q.y : q.z;
}

Quaternion random_raw_quaternion(std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> scale{0.5, 1.5};
  return test::random_unit_quaternion(rng) * scale(rng);
}

}  // namespace

TEST_CASE("pose_loss examples") {
  const ObjectModel cube = make_cube("cube", 1.0);
  const Quaternion id{};
  CHECK(pose_loss(cube, id, {0, 0, 1}, id, {0, 0, 1}, false).value == 0.0);
  CHECK(pose_loss(cube, id, {0.03, 0, 1}, id, {0, 0, 1}, false).value ==
        doctest::Approx(0.0009).epsilon(1e-12));
  const Quaternion flip{0, 0, 0, 1};
  CHECK(pose_loss(cube, flip, Vec3::Zero(), id, Vec3::Zero(), true).value == 0.0);
  CHECK(pose_loss(cube, flip, Vec3::Zero(), id, Vec3::Zero(), false).value ==
        doctest::Approx(2.0).epsilon(1e-12));
  try {
    pose_loss(cube, {0, 0, 0, 0}, Vec3::Zero(), id, Vec3::Zero(), false);
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::kInvalidInput);
  }
}

TEST_CASE("quaternion loss examples") {
  CHECK(quat_reg_loss({1, 0, 0, 0}).value == 0.0);
  CHECK(quat_reg_loss({0, 2, 0, 0}).value == 1.0);
  CHECK(quat_reg_loss({0, 0, 0, 0}).value == 1.0);
  for (double g : quat_reg_loss({0, 0, 0, 0}).grad) CHECK(g == 0.0);
  for (double g : quat_reg_loss({0, 1, 0, 0}).grad) CHECK(g == 0.0);

  const Quaternion q{0.5, 0.5, 0.5, 0.5};
  CHECK(quat_inner_prod_loss(q, q).value == doctest::Approx(0.0));
  CHECK(quat_inner_prod_loss(-q, q).value == doctest::Approx(2.0));
  CHECK(quat_inner_prod_loss({1, 0, 0, 0}, {0, 1, 0, 0}).value == 1.0);
  CHECK(quat_inner_prod_loss(-q, q, true).value == doctest::Approx(0.0));
}

TEST_CASE("inner product loss stays within its norm bounds") {
  std::mt19937_64 rng{21};
  for (int i = 0; i < 500; ++i) {
    const Quaternion raw = random_raw_quaternion(rng);
    const Quaternion gt = test::random_unit_quaternion(rng);
    const double v = quat_inner_prod_loss(raw, gt).value;
    CHECK(v >= 1.0 - raw.norm() - 1e-12);
    CHECK(v <= 1.0 + raw.norm() + 1e-12);
  }
}

TEST_CASE("depth_loss examples") {
  const std::vector<double> gt{1.0, 2.0, 3.0, 4.0};
  const std::vector<std::uint8_t> all{1, 1, 1, 1}, half{1, 1, 0, 0}, none{0, 0, 0, 0};
  CHECK(depth_loss(gt, gt, all).value == 0.0);
  std::vector<double> off = gt;
  for (auto &v : off) v += 0.05;
  CHECK(depth_loss(off, gt, all).value == doctest::Approx(0.05).epsilon(1e-12));
  std::vector<double> outside = gt;
  outside[3] += 7.0;
  CHECK(depth_loss(outside, gt, half).value == 0.0);
  CHECK(depth_loss(outside, gt, half).grad[3] == 0.0);
  try {
    depth_loss(gt, gt, none);
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("label_loss examples") {
  const std::vector<std::uint8_t> labels{0, 3, 2};
  const std::vector<double> uniform(4 * 3, 0.7);
  CHECK(label_loss(uniform, 4, labels).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (double l : {0.5, 2.0, 10.0}) {
    const std::vector<double> logits{0.0, l};
    CHECK(label_loss(logits, 2, std::vector<std::uint8_t>{1}).value ==
          doctest::Approx(std::log1p(std::exp(-l))).epsilon(1e-12));
  }
  double previous = INFINITY;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    const std::vector<double> logits{0.0, margin};
    const double v = label_loss(logits, 2, std::vector<std::uint8_t>{1}).value;
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous < 1e-20);
  CHECK_THROWS_AS(label_loss(uniform, 4, std::vector<std::uint8_t>{0, 4, 1}), Error);
}

TEST_CASE("total_loss") {
  const LossBreakdown zero = total_loss(0, 0, 0, 0, 0);
  CHECK(zero.total == 0.0);
  const LossBreakdown b = total_loss(0.1, 0.2, 0.3, 0.4, 0.5);
  CHECK(b.total == doctest::Approx(1.5).epsilon(1e-12));
  LossWeights w;
  w.pose = 0.0;
  w.label = 2.0;
  const LossBreakdown bw = total_loss(0.1, 0.2, 0.3, 0.4, 0.5, w);
  CHECK(std::abs(bw.total - (0.1 + 0.4 + 0.4 + 0.5)) < 1e-9);
  CHECK(bw.pose == 0.3);
}

TEST_CASE("pose_loss symmetric never exceeds matched") {
  std::mt19937_64 rng{22};
  const ObjectModel m = make_cube("c", 0.2, 30);
  for (int i = 0; i < 200; ++i) {
    const Quaternion q = random_raw_quaternion(rng), qg = test::random_unit_quaternion(rng);
    const Vec3 t = test::random_vec(rng, -0.1, 0.1), tg = test::random_vec(rng, -0.1, 0.1);
    CHECK(pose_loss(m, q, t, qg, tg, true).value <= pose_loss(m, q, t, qg, tg, false).value + 1e-15);
  }
}

TEST_CASE("pose_loss gradients match finite differences") {
  std::mt19937_64 rng{23};
  const ObjectModel m = make_pyramid("p", 0.2, 0.15, 25);
  for (bool symmetric : {false, true}) {
    for (int cfg = 0; cfg < 20; ++cfg) {
      const Quaternion q = random_raw_quaternion(rng), qg = test::random_unit_quaternion(rng);
      const Vec3 t = test::random_vec(rng, -0.1, 0.1), tg = test::random_vec(rng, -0.1, 0.1);
      const PoseLossResult r = pose_loss(m, q, t, qg, tg, symmetric);
      for (int i = 0; i < 4; ++i) {
        const double fd = central(
            [&](double v) {
              Quaternion p = q;
              component(p, i) = v;
              return pose_loss(m, p, t, qg, tg, symmetric).value;
            },
            component(q, i));
        CHECK(grad_close(r.d_quat[i], fd));
      }
      for (int i = 0; i < 3; ++i) {
        const double fd = central(
            [&](double v) {
              Vec3 p = t;
              p[i] = v;
              return pose_loss(m, q, p, qg, tg, symmetric).value;
            },
            t[i]);
        CHECK(grad_close(r.d_translation[i], fd));
      }
    }
  }
}

TEST_CASE("quaternion loss gradients match finite differences") {
  std::mt19937_64 rng{24};
  for (int cfg = 0; cfg < 20; ++cfg) {
    Quaternion q = random_raw_quaternion(rng);
    const Quaternion qg = test::random_unit_quaternion(rng);
    const QuatLossResult reg = quat_reg_loss(q);
    for (bool abs_mode : {false, true}) {
      const QuatLossResult inner = quat_inner_prod_loss(q, qg, abs_mode);
      for (int i = 0; i < 4; ++i) {
        const double fd = central(
            [&](double v) {
              Quaternion p = q;
              component(p, i) = v;
              return quat_inner_prod_loss(p, qg, abs_mode).value;
            },
            component(q, i));
        CHECK(grad_close(inner.grad[i], fd));
      }
    }
    for (int i = 0; i < 4; ++i) {
      const double fd = central(
          [&](double v) {
            Quaternion p = q;
            component(p, i) = v;
            return quat_reg_loss(p).value;
          },
          component(q, i));
      CHECK(grad_close(reg.grad[i], fd));
    }
  }
}

TEST_CASE("dense loss gradients match finite differences") {
  std::mt19937_64 rng{25};
  std::uniform_real_distribution<double> u{-2.0, 2.0};
  for (int cfg = 0; cfg < 20; ++cfg) {
    const std::size_t n = 12;
    std::vector<double> pred(n), gt(n);
    std::vector<std::uint8_t> valid(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = 1.0 + 0.5 * u(rng);
      // Keep away from the kink of |x| so the central difference is exact.
      pred[i] = gt[i] + (u(rng) > 0 ? 1 : -1) * (0.01 + 0.2 * std::abs(u(rng)));
      valid[i] = (i % 3 != 0) ? 1 : 0;
    }
    const DenseLossResult d = depth_loss(pred, gt, valid);
    for (std::size_t i = 0; i < n; ++i) {
      const double fd = central(
          [&](double v) {
            auto p = pred;
            p[i] = v;
            return depth_loss(p, gt, valid).value;
          },
          pred[i]);
      CHECK(grad_close(d.grad[i], fd));
    }

    const std::size_t classes = 4, pixels = 5;
    std::vector<double> logits(classes * pixels);
    for (auto &l : logits) l = u(rng);
    std::vector<std::uint8_t> labels(pixels);
    for (auto &l : labels) l = static_cast<std::uint8_t>(rng() % classes);
    const DenseLossResult lab = label_loss(logits, classes, labels);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double fd = central(
          [&](double v) {
            auto p = logits;
            p[i] = v;
            return label_loss(p, classes, labels).value;
          },
          logits[i]);
      CHECK(grad_close(lab.grad[i], fd));
    }
  }
}

TEST_CASE("sign behaviour of the quaternion losses") {
  std::mt19937_64 rng{26};
  const ObjectModel m = make_cube("c", 0.2, 20);
  for (int i = 0; i < 50; ++i) {
    const Quaternion q = random_raw_quaternion(rng), qg = test::random_unit_quaternion(rng);
    const Vec3 t = test::random_vec(rng, -0.1, 0.1), tg = test::random_vec(rng, -0.1, 0.1);
    CHECK(pose_loss(m, q, t, qg, tg, false).value ==
          doctest::Approx(pose_loss(m, -q, t, qg, tg, false).value).epsilon(1e-12));
    // 1 - <q, g> and 1 + <q, g> differ unless the two are orthogonal.
    CHECK(quat_inner_prod_loss(q, qg).value != quat_inner_prod_loss(-q, qg).value);
    CHECK(quat_reg_loss(q.normalized()).value == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  }
}
