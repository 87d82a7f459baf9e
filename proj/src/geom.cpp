// SPDX-License-Identifier: Apache-2.0
#include "vqpl/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "vqpl/error.hpp"

namespace vqpl::geom {

namespace {

// Canonical seed frame for reconstruction. The bond angle at atom -1 is the
// 1 rad alpha of the virtual triple.
const Vec3 kSeedA{0.0, 0.0, 0.0};
const Vec3 kSeedB{1.0, 0.0, 0.0};
const Vec3 kSeedC{1.0 - std::cos(1.0), std::sin(1.0), 0.0};

}  // namespace

Coords RigidTransform::apply(std::span<const Vec3> xs) const {
  Coords out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(apply(x));
  return out;
}

void validate_coords(std::span<const Vec3> coords) {
  if (coords.size() < 4) {
    throw Error(Errc::too_short, "need at least 4 atoms, got " + std::to_string(coords.size()));
  }
  for (std::size_t i = 0; i + 1 < coords.size(); ++i) {
    const Vec3 d = coords[i + 1] - coords[i];
    if (!d.allFinite() || d.norm() <= kMinBondLength) {
      throw Error(Errc::degenerate_geometry, "coincident atoms at " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i + 2 < coords.size(); ++i) {
    const Vec3 a = coords[i + 1] - coords[i];
    const Vec3 b = coords[i + 2] - coords[i + 1];
    if (a.cross(b).norm() <= kMinCrossNorm) {
      throw Error(Errc::degenerate_geometry, "collinear atoms at " + std::to_string(i));
    }
  }
}

Triple measure(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 v1 = b - a;
  const Vec3 v2 = c - b;
  const Vec3 v3 = d - c;
  const Vec3 back = -v2;
  Triple t;
  t.r = v3.norm();
  t.alpha = std::atan2(back.cross(v3).norm(), back.dot(v3));
  const Vec3 n1 = v1.cross(v2);
  const Vec3 n2 = v2.cross(v3);
  t.beta = std::atan2(v2.norm() * v1.dot(n2), n1.dot(n2));
  return t;
}

Vec3 place(const Vec3& a, const Vec3& b, const Vec3& c, const Triple& t) {
  const Vec3 bc = (c - b).normalized();
  const Vec3 n = (b - a).cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  const double sa = std::sin(t.alpha);
  const Vec3 local = -std::cos(t.alpha) * bc + sa * std::cos(t.beta) * m + sa * std::sin(t.beta) * n;
  return c + t.r * local;
}

AngleSequence torsion_parametrize(std::span<const Vec3> coords) {
  validate_coords(coords);
  const std::size_t n = coords.size();

  // ext[0..2] are the virtual atoms -2, -1, 0; ext[u + 2] is atom u (1-based).
  Coords ext(n + 3);
  ext[2] = place(coords[2], coords[1], coords[0], kVirtualTriple);
  ext[1] = place(coords[1], coords[0], ext[2], kVirtualTriple);
  ext[0] = place(coords[0], ext[2], ext[1], kVirtualTriple);
  std::copy(coords.begin(), coords.end(), ext.begin() + 3);

  AngleSequence out;
  out.triples.resize(n + 2);
  out.triples.front() = kVirtualTriple;
  for (std::size_t u = 1; u <= n; ++u) {
    out.triples[u] = measure(ext[u - 1], ext[u], ext[u + 1], ext[u + 2]);
  }
  out.triples.back() = kVirtualTriple;
  return out;
}

Coords torsion_reconstruct(const AngleSequence& angles) {
  const std::size_t n = angles.residue_count();
  for (std::size_t u = 1; u <= n; ++u) {
    const Triple& t = angles.triples[u];
    if (!(t.r > 0.0) || !std::isfinite(t.r)) {
      throw Error(Errc::invalid_angle, "non-positive r at entry " + std::to_string(u));
    }
    if (!(t.alpha > 0.0 && t.alpha < std::numbers::pi)) {
      throw Error(Errc::invalid_angle, "alpha outside (0, pi) at entry " + std::to_string(u));
    }
    if (!std::isfinite(t.beta)) {
      throw Error(Errc::invalid_angle, "non-finite beta at entry " + std::to_string(u));
    }
  }
  Coords ext;
  ext.reserve(n + 3);
  ext.push_back(kSeedA);
  ext.push_back(kSeedB);
  ext.push_back(kSeedC);
  for (std::size_t u = 1; u <= n; ++u) {
    ext.push_back(place(ext[u - 1], ext[u], ext[u + 1], angles.triples[u]));
  }
  return Coords(ext.begin() + 3, ext.end());
}

void constrain_gauge(AngleSequence& angles) {
  auto& t = angles.triples;
  if (t.size() < 5) return;
  t[1] = kVirtualTriple;
  t[2].alpha = 1.0;
  t[2].beta = 1.0;
  t[3].beta = 1.0;
}

Superposition kabsch(std::span<const Vec3> p, std::span<const Vec3> q) {
  if (p.size() != q.size()) {
    throw Error(Errc::shape_mismatch, "kabsch: sizes " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  }
  if (p.size() < 3) throw Error(Errc::shape_mismatch, "kabsch: need at least 3 points");

  const double count = static_cast<double>(p.size());
  Vec3 cp = Vec3::Zero();
  Vec3 cq = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
  }
  cp /= count;
  cq /= count;

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) cov += (p[i] - cp) * (q[i] - cq).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  const double d = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = d;

  Superposition out;
  out.transform.rotation = v * fix * u.transpose();
  out.transform.translation = cq - out.transform.rotation * cp;

  const Vec3 s = svd.singularValues();
  const double scale = std::max(s(0), 1e-300);
  out.unique = s(1) > 1e-12 * scale && !(d < 0.0 && std::abs(s(1) - s(2)) <= 1e-12 * scale);

  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (out.transform.apply(p[i]) - q[i]).squaredNorm();
  out.rmsd = std::sqrt(sum / count);
  return out;
}

double rmsd(std::span<const Vec3> p, std::span<const Vec3> q) {
  if (p.size() != q.size() || p.empty()) throw Error(Errc::shape_mismatch, "rmsd: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] - q[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(p.size()));
}

double tm_d0(std::size_t length) {
  const double l = static_cast<double>(length);
  if (length <= 15) return 0.5;
  return std::max(1.24 * std::cbrt(l - 15.0) - 1.8, 0.5);
}

double tm_score_from_distances(std::span<const double> distances, std::size_t length) {
  const double d0 = tm_d0(length);
  double sum = 0.0;
  for (double d : distances) {
    const double x = d / d0;
    sum += 1.0 / (1.0 + x * x);
  }
  return sum / static_cast<double>(length);
}

double tm_score(std::span<const Vec3> p, std::span<const Vec3> q) {
  if (p.size() != q.size()) throw Error(Errc::shape_mismatch, "tm_score: size mismatch");
  const std::size_t n = p.size();
  if (n < 3) throw Error(Errc::shape_mismatch, "tm_score: need at least 3 residues");

  const double d_search = std::clamp(tm_d0(n), 4.5, 8.0);
  constexpr int kMaxIterations = 20;

  std::vector<double> dist(n);
  Coords sp;
  Coords sq;
  double best = 0.0;

  auto score_selection = [&](std::vector<std::size_t> sel) {
    for (int iter = 0; iter < kMaxIterations; ++iter) {
      sp.clear();
      sq.clear();
      for (std::size_t i : sel) {
        sp.push_back(p[i]);
        sq.push_back(q[i]);
      }
      const Superposition sup = kabsch(sp, sq);
      for (std::size_t i = 0; i < n; ++i) dist[i] = (sup.transform.apply(p[i]) - q[i]).norm();
      best = std::max(best, tm_score_from_distances(dist, n));

      std::vector<std::size_t> next;
      for (double cutoff = d_search; next.size() < 3; cutoff += 0.5) {
        next.clear();
        for (std::size_t i = 0; i < n; ++i) {
          if (dist[i] < cutoff) next.push_back(i);
        }
      }
      if (next == sel) break;
      sel = std::move(next);
    }
  };

  for (std::size_t frag = n;; frag /= 2) {
    const std::size_t step = std::max<std::size_t>(1, frag / 4);
    for (std::size_t start = 0; start + frag <= n; start += step) {
      std::vector<std::size_t> sel(frag);
      for (std::size_t i = 0; i < frag; ++i) sel[i] = start + i;
      score_selection(std::move(sel));
    }
    if (frag / 2 < 4) break;
  }
  return best;
}

double wrap_angle(double radians) {
  double w = std::remainder(radians, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

std::string angles_to_json_line(const std::string& id, const AngleSequence& angles) {
  nlohmann::json j;
  j["id"] = id;
  auto& arr = j["triples"] = nlohmann::json::array();
  for (const auto& t : angles.triples) arr.push_back({t.r, t.alpha, t.beta});
  return j.dump();
}

AngleSequence angles_from_json_line(const std::string& line, std::string* id) {
  AngleSequence out;
  try {
    const auto j = nlohmann::json::parse(line);
    if (id != nullptr) *id = j.at("id").get<std::string>();
    for (const auto& t : j.at("triples")) {
      if (t.size() != 3) throw Error(Errc::format_error, "triple must have 3 entries");
      out.triples.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, e.what());
  }
  return out;
}

}  // namespace vqpl::geom
