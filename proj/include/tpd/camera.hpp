// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera convention, fixed project-wide: OpenCV-style right-handed frames,
// camera +Z forward, image y down, extrinsic is camera-to-world. Intrinsics
// are normalized by image width (focal and principal point in units of the
// image size), so the same 25-float pose drives any render resolution.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "tpd/common.hpp"
#include "tpd/rng.hpp"
#include "tpd/tensor.hpp"

namespace tpd {

inline constexpr int kPoseDim = 25;
using PoseVec = std::array<double, kPoseDim>;

struct CameraPose {
  Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();  // camera-to-world
  Eigen::Matrix3d intrinsic = Eigen::Matrix3d::Identity();  // normalized

  void validate(double tol = 1e-5) const {
    TPD_CHECK_MSG((extrinsic.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() == 0.0,
                  "extrinsic bottom row must be (0,0,0,1)");
    Eigen::Matrix3d r = extrinsic.topLeftCorner<3, 3>();
    double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    TPD_CHECK_MSG(ortho <= tol, "rotation block not orthonormal, residual " << ortho);
    TPD_CHECK_MSG(r.determinant() > 0, "rotation block must have determinant +1");
    TPD_CHECK(extrinsic.allFinite() && intrinsic.allFinite());
  }

  Eigen::Vector3d position() const { return extrinsic.col(3).head<3>(); }
  Eigen::Matrix3d rotation() const { return extrinsic.topLeftCorner<3, 3>(); }
  Eigen::Vector3d forward() const { return rotation().col(2); }
};

// flat layout: row-major extrinsic (16) ++ row-major intrinsic (9)
inline PoseVec flatten_pose(const CameraPose& pose) {
  pose.validate();
  PoseVec out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out[static_cast<size_t>(i * 4 + j)] = pose.extrinsic(i, j);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[static_cast<size_t>(16 + i * 3 + j)] = pose.intrinsic(i, j);
  return out;
}

inline CameraPose unflatten_pose(const PoseVec& flat, bool validate = true) {
  CameraPose pose;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) pose.extrinsic(i, j) = flat[static_cast<size_t>(i * 4 + j)];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) pose.intrinsic(i, j) = flat[static_cast<size_t>(16 + i * 3 + j)];
  if (validate) pose.validate();
  return pose;
}

inline Eigen::Matrix3d normalized_intrinsic(double focal, double cx = 0.5, double cy = 0.5) {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = focal;
  k(1, 1) = focal;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

// Camera basis from eye/target: z forward toward the target, y world-down.
inline CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Matrix3d& intrinsic,
                          const Eigen::Vector3d& world_up = Eigen::Vector3d(0, 1, 0)) {
  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(world_up);
  TPD_CHECK_MSG(x.norm() > 1e-9, "look_at degenerate: view direction parallel to up");
  x.normalize();
  Eigen::Vector3d y = z.cross(x);
  CameraPose pose;
  pose.extrinsic.topLeftCorner<3, 3>() << x, y, z;
  pose.extrinsic.col(3).head<3>() = eye;
  pose.intrinsic = intrinsic;
  return pose;
}

// Pose prior for sampling the conditioning viewpoint c. The orbit prior puts
// the camera on a sphere around a look-at point with uniform yaw/pitch; the
// empirical kind draws from an ingested pose list.
struct PosePrior {
  enum class Kind { kOrbit, kEmpirical };
  Kind kind = Kind::kOrbit;
  double radius = 2.7;
  double yaw_min = -0.7, yaw_max = 0.7;      // radians, about world Y
  double pitch_min = -0.5, pitch_max = 0.5;  // radians, elevation
  Eigen::Vector3d lookat = Eigen::Vector3d::Zero();
  double focal = 1.0;  // normalized by image width
  std::vector<PoseVec> empirical;            // used when kind == kEmpirical

  void validate() const {
    TPD_CHECK_MSG(radius > 0, "orbit radius must be positive");
    TPD_CHECK_MSG(yaw_min <= yaw_max && pitch_min <= pitch_max, "empty pose range");
    TPD_CHECK_MSG(std::abs(pitch_min) < M_PI / 2 && std::abs(pitch_max) < M_PI / 2,
                  "pitch must stay clear of the poles");
    if (kind == Kind::kEmpirical) TPD_CHECK_MSG(!empirical.empty(), "empirical prior has no poses");
  }
};

inline CameraPose orbit_pose(const PosePrior& prior, double yaw, double pitch) {
  Eigen::Vector3d offset(std::cos(pitch) * std::sin(yaw), std::sin(pitch),
                         std::cos(pitch) * std::cos(yaw));
  return look_at(prior.lookat + prior.radius * offset, prior.lookat,
                 normalized_intrinsic(prior.focal));
}

struct SampledPose {
  CameraPose pose;
  double yaw = 0, pitch = 0;  // populated for the orbit prior
};

inline SampledPose sample_pose(const PosePrior& prior, Rng& rng) {
  prior.validate();
  if (prior.kind == PosePrior::Kind::kEmpirical) {
    const PoseVec& f = prior.empirical[static_cast<size_t>(rng.randint(
        static_cast<int64_t>(prior.empirical.size())))];
    return {unflatten_pose(f), 0, 0};
  }
  double yaw = rng.uniform(prior.yaw_min, prior.yaw_max);
  double pitch = rng.uniform(prior.pitch_min, prior.pitch_max);
  return {orbit_pose(prior, yaw, pitch), yaw, pitch};
}

// Pinhole rays through pixel centers; origins all equal the camera position.
// Ray r = i*res + j covers pixel row i (image y), column j (image x).
template <typename T>
struct RayBatch {
  Tensor<T> origins;     // [res*res, 3]
  Tensor<T> directions;  // [res*res, 3], unit norm
};

template <typename T>
RayBatch<T> generate_rays(const CameraPose& pose, int64_t resolution) {
  TPD_CHECK_MSG(resolution >= 1, "resolution must be >= 1");
  pose.validate();
  TPD_CHECK_MSG(std::abs(pose.intrinsic.determinant()) > 1e-12, "singular intrinsic");
  Eigen::Matrix3d kinv = pose.intrinsic.inverse();
  Eigen::Matrix3d rot = pose.rotation();
  Eigen::Vector3d origin = pose.position();

  int64_t n = resolution * resolution;
  RayBatch<T> rays{Tensor<T>(Shape{n, 3}), Tensor<T>(Shape{n, 3})};
  for (int64_t i = 0; i < resolution; ++i)
    for (int64_t j = 0; j < resolution; ++j) {
      double u = (static_cast<double>(j) + 0.5) / static_cast<double>(resolution);
      double v = (static_cast<double>(i) + 0.5) / static_cast<double>(resolution);
      Eigen::Vector3d dir_cam = kinv * Eigen::Vector3d(u, v, 1.0);
      Eigen::Vector3d dir = (rot * dir_cam).normalized();
      int64_t r = i * resolution + j;
      for (int64_t a = 0; a < 3; ++a) {
        rays.origins[r * 3 + a] = static_cast<T>(origin[a]);
        rays.directions[r * 3 + a] = static_cast<T>(dir[a]);
      }
    }
  return rays;
}

// Normalizes flat 25-float poses for use as a network input: subtract the
// canonical (range-midpoint) pose and scale each component to unit standard
// deviation over the prior. Constant components map to exactly zero.
struct PoseFeaturizer {
  PoseVec canonical{};
  PoseVec inv_std{};

  static PoseFeaturizer from_prior(const PosePrior& prior, int64_t n_samples = 1024,
                                   uint64_t seed = 0x9e3779b9) {
    prior.validate();
    PoseFeaturizer pf;
    CameraPose canon = prior.kind == PosePrior::Kind::kOrbit
                           ? orbit_pose(prior, 0.5 * (prior.yaw_min + prior.yaw_max),
                                        0.5 * (prior.pitch_min + prior.pitch_max))
                           : unflatten_pose(prior.empirical.front());
    pf.canonical = flatten_pose(canon);
    Rng rng(seed);
    std::array<double, kPoseDim> mean{}, m2{};
    for (int64_t i = 0; i < n_samples; ++i) {
      PoseVec f = flatten_pose(sample_pose(prior, rng).pose);
      for (int k = 0; k < kPoseDim; ++k) {
        double d = f[static_cast<size_t>(k)] - pf.canonical[static_cast<size_t>(k)];
        mean[static_cast<size_t>(k)] += d;
        m2[static_cast<size_t>(k)] += d * d;
      }
    }
    for (int k = 0; k < kPoseDim; ++k) {
      double mu = mean[static_cast<size_t>(k)] / double(n_samples);
      double var = m2[static_cast<size_t>(k)] / double(n_samples) - mu * mu;
      pf.inv_std[static_cast<size_t>(k)] = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    }
    return pf;
  }

  template <typename T>
  Tensor<T> featurize(const std::vector<PoseVec>& poses) const {
    Tensor<T> out(Shape{static_cast<int64_t>(poses.size()), kPoseDim});
    for (size_t i = 0; i < poses.size(); ++i)
      for (int k = 0; k < kPoseDim; ++k)
        out[static_cast<int64_t>(i) * kPoseDim + k] = static_cast<T>(
            (poses[i][static_cast<size_t>(k)] - canonical[static_cast<size_t>(k)]) *
            inv_std[static_cast<size_t>(k)]);
    return out;
  }
};

// Project a world point to continuous pixel coordinates (col, row) at the
// given resolution; used by the geometry oracles.
inline Eigen::Vector2d project_point(const CameraPose& pose, const Eigen::Vector3d& p,
                                     int64_t resolution) {
  Eigen::Matrix3d rot = pose.rotation();
  Eigen::Vector3d cam = rot.transpose() * (p - pose.position());
  TPD_CHECK_MSG(cam.z() > 0, "point behind camera");
  Eigen::Vector3d uv = pose.intrinsic * (cam / cam.z());
  return {uv.x() * static_cast<double>(resolution) - 0.5,
          uv.y() * static_cast<double>(resolution) - 0.5};
}

}  // namespace tpd
