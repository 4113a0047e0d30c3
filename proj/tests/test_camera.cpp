// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "tpd/camera.hpp"

using namespace tpd;

TEST_CASE("flatten identity pose", "[camera]") {
  CameraPose pose;  // identity extrinsic, identity intrinsic
  PoseVec flat = flatten_pose(pose);
  for (int i = 0; i < kPoseDim; ++i) {
    bool one = (i == 0 || i == 5 || i == 10 || i == 15 || i == 16 || i == 20 || i == 24);
    CHECK(flat[static_cast<size_t>(i)] == (one ? 1.0 : 0.0));
  }
}

TEST_CASE("flatten/unflatten round-trips bit-exactly", "[camera]") {
  PosePrior prior;
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    CameraPose pose = sample_pose(prior, rng).pose;
    PoseVec flat = flatten_pose(pose);
    CameraPose back = unflatten_pose(flat);
    CHECK(pose.extrinsic == back.extrinsic);  // element-wise exact
    CHECK(pose.intrinsic == back.intrinsic);
  }
}

TEST_CASE("look-at extrinsic times analytic inverse is identity", "[camera]") {
  // oracle: inverse of [R t; 0 1] is [R^T -R^T t; 0 1]
  PosePrior prior;
  prior.radius = 2.7;
  CameraPose pose = orbit_pose(prior, 0.4, -0.2);
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  Eigen::Matrix3d rt = pose.rotation().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.col(3).head<3>() = -rt * pose.position();
  Eigen::Matrix4d prod = pose.extrinsic * inv;
  CHECK((prod - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(pose.position().norm() - 2.7) < 1e-12);
}

TEST_CASE("pose validation rejects bad rotation", "[camera]") {
  CameraPose pose;
  pose.extrinsic(0, 0) = 2.0;
  CHECK_THROWS_AS(flatten_pose(pose), CheckError);
  CameraPose pose2;
  pose2.extrinsic(3, 0) = 0.5;
  CHECK_THROWS_AS(flatten_pose(pose2), CheckError);
}

TEST_CASE("degenerate ranges give the deterministic frontal pose", "[camera]") {
  PosePrior prior;
  prior.yaw_min = prior.yaw_max = 0;
  prior.pitch_min = prior.pitch_max = 0;
  Rng rng(1);
  CameraPose pose = sample_pose(prior, rng).pose;
  CHECK((pose.position() - Eigen::Vector3d(0, 0, prior.radius)).norm() < 1e-12);
  CHECK((pose.forward() - Eigen::Vector3d(0, 0, -1)).norm() < 1e-12);
}

TEST_CASE("empty range rejected", "[camera]") {
  PosePrior prior;
  prior.yaw_min = 0.5;
  prior.yaw_max = -0.5;
  Rng rng(1);
  CHECK_THROWS_AS(sample_pose(prior, rng), CheckError);
}

TEST_CASE("sampled yaw is uniform over the range", "[camera]") {
  PosePrior prior;
  prior.yaw_min = -M_PI / 4;
  prior.yaw_max = M_PI / 4;
  Rng rng(17);
  const int n = 10000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += sample_pose(prior, rng).yaw;
  double mean = sum / n;
  double se = (prior.yaw_max - prior.yaw_min) / std::sqrt(12.0) / std::sqrt(double(n));
  CHECK(std::abs(mean) < 3 * se);
}

TEST_CASE("central ray passes through the look-at point", "[camera]") {
  PosePrior prior;
  prior.lookat = Eigen::Vector3d(0.1, -0.2, 0.05);
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    CameraPose pose = sample_pose(prior, rng).pose;
    // ray through the principal point: direction K^-1 (cx, cy, 1) = +z cam
    Eigen::Vector3d o = pose.position();
    Eigen::Vector3d d = pose.forward();
    double t = (prior.lookat - o).dot(d);
    CHECK((o + t * d - prior.lookat).norm() < 1e-6);
  }
}

TEST_CASE("identity pose 1x1 image yields the +Z canonical ray", "[camera]") {
  CameraPose pose;
  pose.intrinsic = normalized_intrinsic(1.0);
  auto rays = generate_rays<double>(pose, 1);
  CHECK(rays.origins.shape() == Shape{1, 3});
  CHECK(rays.directions[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(rays.directions[1] == Catch::Approx(0.0).margin(1e-15));
  CHECK(rays.directions[2] == Catch::Approx(1.0));
}

TEST_CASE("rays are unit norm and share the camera origin", "[camera]") {
  PosePrior prior;
  Rng rng(7);
  CameraPose pose = sample_pose(prior, rng).pose;
  auto rays = generate_rays<double>(pose, 16);
  Eigen::Vector3d origin = pose.position();
  for (int64_t r = 0; r < 256; ++r) {
    double n2 = 0;
    for (int64_t a = 0; a < 3; ++a) {
      n2 += rays.directions[r * 3 + a] * rays.directions[r * 3 + a];
      CHECK(rays.origins[r * 3 + a] == Catch::Approx(origin[a]).margin(1e-15));
    }
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-7);
  }
}

TEST_CASE("corner ray angle matches pinhole trigonometry", "[camera]") {
  const int64_t res = 8;
  const double f = 1.3;
  CameraPose pose;
  pose.intrinsic = normalized_intrinsic(f);
  auto rays = generate_rays<double>(pose, res);
  // pixel (0,0) center sits at normalized offset (0.5 - 0.5/res) from the
  // principal point on both axes
  double off = 0.5 - 0.5 / double(res);
  double expected = std::atan(std::hypot(off, off) / f);
  Eigen::Vector3d d(rays.directions[0], rays.directions[1], rays.directions[2]);
  double angle = std::acos(d.dot(Eigen::Vector3d(0, 0, 1)));
  CHECK(std::abs(angle - expected) < 1e-6);
}

TEST_CASE("generate_rays rejects singular intrinsics", "[camera]") {
  CameraPose pose;
  pose.intrinsic(0, 0) = 0.0;
  pose.intrinsic(1, 1) = 0.0;
  CHECK_THROWS_AS(generate_rays<double>(pose, 4), CheckError);
}

TEST_CASE("generate_rays is deterministic", "[camera]") {
  PosePrior prior;
  Rng rng(9);
  CameraPose pose = sample_pose(prior, rng).pose;
  auto a = generate_rays<float>(pose, 12);
  auto b = generate_rays<float>(pose, 12);
  CHECK(bitwise_equal(a.origins, b.origins));
  CHECK(bitwise_equal(a.directions, b.directions));
}

TEST_CASE("project_point inverts ray generation", "[camera]") {
  PosePrior prior;
  Rng rng(11);
  CameraPose pose = sample_pose(prior, rng).pose;
  const int64_t res = 32;
  auto rays = generate_rays<double>(pose, res);
  // walk along a few rays; the walked point must project back to the pixel
  for (int64_t r : {0L, 100L, 515L, 1023L}) {
    Eigen::Vector3d o(rays.origins[r * 3], rays.origins[r * 3 + 1], rays.origins[r * 3 + 2]);
    Eigen::Vector3d d(rays.directions[r * 3], rays.directions[r * 3 + 1], rays.directions[r * 3 + 2]);
    Eigen::Vector3d p = o + 2.0 * d;
    Eigen::Vector2d px = project_point(pose, p, res);
    CHECK(std::abs(px.x() - double(r % res)) < 1e-9);
    CHECK(std::abs(px.y() - double(r / res)) < 1e-9);
  }
}
