// SPDX-License-Identifier: Apache-2.0
//
// Shared test fixtures and independent oracles. Nothing here calls into the
// code paths it is used to check.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "vqpl/geom.hpp"
#include "vqpl/ingest.hpp"
#include "vqpl/rng.hpp"

namespace fixtures {

using vqpl::geom::Coords;
using vqpl::geom::Mat3;
using vqpl::geom::Vec3;

inline Vec3 random_unit(vqpl::Rng& rng) {
  Vec3 v;
  do {
    v = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-6);
  return v.normalized();
}

/// CA-like random chain: 3.8 A steps, bond angles restricted to a realistic
/// band by rejection sampling on the step direction.
inline Coords random_chain(std::size_t n, vqpl::Rng& rng, double bond = 3.8) {
  Coords x;
  x.push_back(Vec3::Zero());
  Vec3 dir = random_unit(rng);
  x.push_back(x.back() + bond * dir);
  while (x.size() < n) {
    Vec3 next;
    for (;;) {
      next = random_unit(rng);
      // bond angle at the current atom = angle between -dir and next
      const double angle = std::acos(std::clamp((-dir).dot(next), -1.0, 1.0));
      if (angle > 1.4 && angle < 2.7) break;
    }
    x.push_back(x.back() + bond * next);
    dir = next;
  }
  return x;
}

/// Rotation from an axis-angle pair (Rodrigues), written out explicitly.
inline Mat3 rotation(const Vec3& axis_in, double angle) {
  const Vec3 k = axis_in.normalized();
  Mat3 kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(angle) * kx + (1 - std::cos(angle)) * kx * kx;
}

inline Mat3 random_rotation(vqpl::Rng& rng) {
  return rotation(random_unit(rng), (rng.uniform() * 2.0 - 1.0) * std::numbers::pi);
}

/// Bond angle at b, by the arccos of normalized dot product.
inline double oracle_bond_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = (a - b).normalized();
  const Vec3 w = (c - b).normalized();
  return std::acos(std::clamp(u.dot(w), -1.0, 1.0));
}

/// Dihedral a-b-c-d via projections onto the plane orthogonal to b-c.
inline double oracle_dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 b0 = a - b;
  const Vec3 b1 = (c - b).normalized();
  const Vec3 b2 = d - c;
  const Vec3 v = b0 - b0.dot(b1) * b1;
  const Vec3 w = b2 - b2.dot(b1) * b1;
  return std::atan2(b1.cross(v).dot(w), v.dot(w));
}

/// Best rigid-fit RMSD by gradient descent over a rotation vector, with
/// centroids matched. Multiple restarts guard against saddle points.
inline double oracle_alignment_rmsd(const Coords& p, const Coords& q) {
  Vec3 cp = Vec3::Zero(), cq = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
  }
  cp /= double(p.size());
  cq /= double(q.size());
  auto cost = [&](const Vec3& w) {
    const double angle = w.norm();
    const Mat3 r = angle < 1e-15 ? Mat3::Identity() : rotation(w, angle);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (r * (p[i] - cp) - (q[i] - cq)).squaredNorm();
    return s / double(p.size());
  };
  double best = INFINITY;
  vqpl::Rng rng(99);
  for (int restart = 0; restart < 6; ++restart) {
    Vec3 w = random_unit(rng) * (rng.uniform() * std::numbers::pi);
    double step = 0.1;
    double f = cost(w);
    for (int it = 0; it < 20000 && step > 1e-14; ++it) {
      Vec3 g;
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = 1e-7;
        g[k] = (cost(w + e) - cost(w - e)) / 2e-7;
      }
      const Vec3 trial = w - step * g;
      const double ft = cost(trial);
      if (ft < f) {
        w = trial;
        f = ft;
        step *= 1.2;
      } else {
        step *= 0.5;
      }
    }
    best = std::min(best, f);
  }
  return std::sqrt(best);
}

/// Places d from the frame (a, b, c) by the natural extension reference frame
/// construction: bond length r, bond angle alpha at c, dihedral beta.
inline Vec3 nerf(const Vec3& a, const Vec3& b, const Vec3& c, double r, double alpha, double beta) {
  const Vec3 bc = (c - b).normalized();
  const Vec3 n = (b - a).cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  const Vec3 local(-r * std::cos(alpha), r * std::sin(alpha) * std::cos(beta), r * std::sin(alpha) * std::sin(beta));
  return c + local.x() * bc + local.y() * m + local.z() * n;
}

/// CA trace with helix, strand and loop segments at typical virtual bond and
/// dihedral angles, and residues drawn from segment-specific pools.
inline vqpl::ingest::BackboneRecord protein_like(std::size_t n, vqpl::Rng& rng, const std::string& id) {
  static const std::string pools[3] = {"AELKMQRAELKA", "VIYFTWVITC", "GPNDSGKTEPH"};
  vqpl::ingest::BackboneRecord rec;
  rec.id = id;
  Coords x{Vec3(0, 0, 0), Vec3(3.8, 0, 0), Vec3(3.8 + 3.8 * std::cos(1.2), 3.8 * std::sin(1.2), 0)};
  std::vector<int> kinds(3, 2);
  std::size_t left = 0;
  int kind = 2;
  double a0 = 1.8, b0 = 0.0;
  while (x.size() < n) {
    if (left == 0) {
      kind = static_cast<int>(rng.below(3));
      left = kind == 0 ? 8 + rng.below(10) : kind == 1 ? 4 + rng.below(5) : 2 + rng.below(5);
      a0 = kind == 0 ? 1.57 : kind == 1 ? 2.1 : 1.6 + 0.6 * rng.uniform();
      b0 = kind == 0 ? 0.87 : -2.9;
    }
    const double a = a0 + 0.05 * rng.normal();
    const double b = kind == 2 ? (2.0 * rng.uniform() - 1.0) * std::numbers::pi : b0 + 0.1 * rng.normal();
    x.push_back(nerf(x[x.size() - 3], x[x.size() - 2], x.back(), 3.8 + 0.02 * rng.normal(), a, b));
    kinds.push_back(kind);
    --left;
  }
  x.resize(n);
  rec.coords = x;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pool = pools[kinds[i]];
    rec.sequence.push_back(vqpl::ingest::residue_from_one_letter(pool[rng.below(pool.size())]));
  }
  return rec;
}

inline std::filesystem::path data_dir() { return VQPL_DATA_DIR; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vqpl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
