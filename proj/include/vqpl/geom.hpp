// SPDX-License-Identifier: Apache-2.0
//
// CA-trace geometry: internal-coordinate (r, alpha, beta) parameterization
// of a backbone, its inverse, rigid superposition and TM-score.
//
// Angle sequences have n + 2 entries for n atoms. Entry 0 and entry n + 1
// are virtual boundary triples fixed at (1, 1, 1). Entry u (1..n) places
// atom u relative to the frame of the three atoms preceding it; the three
// virtual atoms that precede atom 1 are built backwards from atoms 1..3
// using the same fixed (1, 1, 1) triple. Because the parameterization is
// invariant to rigid motion, six numbers of entries 1..3 are fixed by this
// construction: entry 1 is (1, 1, 1), entry 2 has alpha = beta = 1 and
// entry 3 has beta = 1 (see constrain_gauge).
#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace vqpl::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Coords = std::vector<Vec3>;

/// Internal coordinate of one atom: bond length (Angstrom), bond angle at
/// the previous atom in (0, pi), and signed dihedral in (-pi, pi].
struct Triple {
  double r = 1.0;
  double alpha = 1.0;
  double beta = 1.0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

inline constexpr Triple kVirtualTriple{1.0, 1.0, 1.0};

struct AngleSequence {
  std::vector<Triple> triples;

  std::size_t residue_count() const noexcept { return triples.size() < 2 ? 0 : triples.size() - 2; }
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Coords apply(std::span<const Vec3> xs) const;
};

struct Superposition {
  RigidTransform transform;  // maps p onto q
  double rmsd = 0.0;
  bool unique = true;  // false when the covariance is rank deficient
};

inline constexpr double kMinBondLength = 1e-6;
inline constexpr double kMinCrossNorm = 1e-9;

/// Throws DegenerateGeometry / TooShort when coords cannot be parameterized.
void validate_coords(std::span<const Vec3> coords);

/// Bond length, bond angle and dihedral of d in the frame (a, b, c).
Triple measure(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Inverse of measure: the point d with measure(a, b, c, d) == t.
Vec3 place(const Vec3& a, const Vec3& b, const Vec3& c, const Triple& t);

AngleSequence torsion_parametrize(std::span<const Vec3> coords);

/// Rebuilds coordinates from the canonical seed frame: virtual atom -2 at the
/// origin, -1 on +x at unit distance, 0 in the xy-plane at unit distance and a
/// 1 rad bond angle. Entries 0 and n + 1 are not used for placement.
Coords torsion_reconstruct(const AngleSequence& angles);

/// Overwrites the six gauge-fixed numbers of entries 1..3 with their
/// canonical values (no-op for sequences shorter than 3 residues).
void constrain_gauge(AngleSequence& angles);

Superposition kabsch(std::span<const Vec3> p, std::span<const Vec3> q);

double rmsd(std::span<const Vec3> p, std::span<const Vec3> q);

/// d0(L) = max(1.24 (L - 15)^(1/3) - 1.8, 0.5).
double tm_d0(std::size_t length);

/// (1 / L) * sum 1 / (1 + (d_i / d0)^2) for already superposed distances.
double tm_score_from_distances(std::span<const double> distances, std::size_t length);

/// TM-score of p against q with residue correspondence given by index.
double tm_score(std::span<const Vec3> p, std::span<const Vec3> q);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double radians);

/// Serialization as one JSON-lines record: {"id": str, "triples": [[r, a, b], ...]}.
std::string angles_to_json_line(const std::string& id, const AngleSequence& angles);
AngleSequence angles_from_json_line(const std::string& line, std::string* id = nullptr);

}  // namespace vqpl::geom
