// SPDX-License-Identifier: Apache-2.0
#include "vqpl/vq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <nlohmann/json.hpp>

#include "vqpl/binio.hpp"
#include "vqpl/error.hpp"

namespace vqpl::vq {

using namespace vqpl::grad;

namespace {

constexpr std::string_view kMagic = "VQPC";
constexpr std::uint32_t kVersion = 1;

void require_codes(const Tensor& entries) {
  if (entries.rank() != 2 || entries.shape[0] == 0) throw Error(Errc::empty_codebook, "codebook has no entries");
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

void normalize_rows(Tensor& t) {
  const std::size_t rows = t.rows(), cols = t.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* p = t.data.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += p[c] * p[c];
    const double n = std::max(std::sqrt(s), 1e-12);
    for (std::size_t c = 0; c < cols; ++c) p[c] /= n;
  }
}

Codebook random_codebook(std::size_t m, std::size_t d, Rng& rng) {
  if (m < 2 || d == 0) throw Error(Errc::empty_codebook, "codebook needs at least two entries of positive width");
  Codebook cb{Tensor({m, d}), std::vector<std::uint64_t>(m, 0)};
  for (auto& v : cb.entries.data) v = rng.normal();
  normalize_rows(cb.entries);
  return cb;
}

void init_params(net::ParamStore& store, std::size_t d_model, std::size_t d_code, std::size_t m, Rng& rng) {
  store.add("vq.proj.w", net::init_linear(d_model, d_code, rng));
  store.add("vq.proj.b", Tensor({d_code}));
  store.add("vq.codebook", random_codebook(m, d_code, rng).entries);
}

Var project_sphere(const net::Bound& p, Var h) { return l2_normalize(linear(h, p["vq.proj.w"], p["vq.proj.b"])); }

std::vector<int> nearest_indices(const Tensor& hhat, const Tensor& entries) {
  require_codes(entries);
  const std::size_t m = entries.shape[0], d = entries.shape[1];
  if (hhat.cols() != d) throw Error(Errc::shape_mismatch, "query width differs from code width");
  std::vector<int> out(hhat.rows());
  for (std::size_t i = 0; i < hhat.rows(); ++i) {
    const double* h = hhat.data.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double dist = sq_dist(h, entries.data.data() + j * d, d);
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(j);
      }
    }
    out[i] = arg;
  }
  return out;
}

QuantizerOutput nearest_code(Var hhat, Var codebook, double beta_commit) {
  QuantizerOutput out;
  out.indices = nearest_indices(hhat.value(), codebook.value());
  Var e = gather(codebook, out.indices);
  out.z = straight_through(hhat, e);
  Var codebook_term = sub(stop_gradient(hhat), e);
  Var commit_term = sub(hhat, stop_gradient(e));
  out.vq_loss = add(sum(mul(codebook_term, codebook_term)), scale(sum(mul(commit_term, commit_term)), beta_commit));
  out.has_loss = true;
  return out;
}

QuantizerOutput soft_quantize(Var hhat, Var codebook, double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::non_positive_temperature, "temperature must be positive");
  require_codes(codebook.value());
  QuantizerOutput out;
  Var scores = scale(matmul(hhat, transpose(codebook)), 1.0 / temperature);
  out.attention = softmax(scores);
  out.z = matmul(out.attention, codebook);
  const Tensor& a = out.attention.value();
  out.indices.resize(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* row = a.data.data() + i * a.cols();
    out.indices[i] = static_cast<int>(std::max_element(row, row + a.cols()) - row);
  }
  return out;
}

std::size_t ema_revive(Tensor& entries, const Tensor& batch_hhat, std::size_t k, double eps, double tau) {
  require_codes(entries);
  const std::size_t m = entries.shape[0], d = entries.shape[1];
  const std::size_t b = batch_hhat.rows();
  if (batch_hhat.cols() != d) throw Error(Errc::shape_mismatch, "batch width differs from code width");
  if (k == 0 || b < k)
    throw Error(Errc::batch_too_small, "batch of " + std::to_string(b) + " for top-" + std::to_string(k));
  Tensor next = entries;
  std::size_t updated = 0;
  std::vector<std::pair<double, std::size_t>> dist(b);
  std::vector<double> mu(d);
  for (std::size_t i = 0; i < m; ++i) {
    const double* e = entries.data.data() + i * d;
    for (std::size_t r = 0; r < b; ++r) dist[r] = {sq_dist(e, batch_hhat.data.data() + r * d, d), r};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::fill(mu.begin(), mu.end(), 0.0);
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t c = 0; c < d; ++c) mu[c] += batch_hhat.data[dist[t].second * d + c];
    for (auto& v : mu) v /= static_cast<double>(k);
    if (std::sqrt(sq_dist(mu.data(), e, d)) <= eps) continue;
    double* out = next.data.data() + i * d;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = tau * e[c] + (1.0 - tau) * mu[c];
      s += out[c] * out[c];
    }
    const double n = std::sqrt(s);
    // a code exactly opposite its own neighbourhood mean can cancel out
    if (n < 1e-12) {
      std::copy_n(e, d, out);
      continue;
    }
    for (std::size_t c = 0; c < d; ++c) out[c] /= n;
    ++updated;
  }
  entries = std::move(next);
  return updated;
}

double anneal_temperature(std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw Error(Errc::bad_step, "step " + std::to_string(step) + " of " + std::to_string(total_steps));
  if (step == 0) return 1.0;
  if (step == total_steps) return 1e-5;
  return std::pow(10.0, -5.0 * static_cast<double>(step) / static_cast<double>(total_steps));
}

int sample_code(std::span<const double> row, Rng& rng) {
  if (row.empty()) throw Error(Errc::empty_codebook, "empty attention row");
  double total = 0.0;
  for (double v : row) {
    if (!(v >= 0.0)) throw Error(Errc::not_normalized, "negative or non-finite weight");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-8) throw Error(Errc::not_normalized, "row sums to " + std::to_string(total));
  const double u = rng.uniform() * total;
  double cum = 0.0;
  int last = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] <= 0.0) continue;
    cum += row[j];
    last = static_cast<int>(j);
    if (u < cum) return last;
  }
  return last;
}

std::string codebook_bytes(const Codebook& cb) {
  require_codes(cb.entries);
  if (cb.usage.size() != cb.size()) throw Error(Errc::shape_mismatch, "usage counts do not match codebook size");
  binio::Writer w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  for (double v : cb.entries.data) w.f64(v);
  for (auto u : cb.usage) w.u64(u);
  return w.str();
}

Codebook codebook_from_bytes(const std::string& bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4) != kMagic) throw Error(Errc::format_error, "not a codebook file");
  if (const auto v = r.u32(); v != kVersion) throw Error(Errc::format_error, "codebook version " + std::to_string(v));
  const std::size_t m = r.u32(), d = r.u32();
  Codebook cb{Tensor({m, d}), std::vector<std::uint64_t>(m)};
  for (auto& v : cb.entries.data) v = r.f64();
  for (auto& u : cb.usage) u = r.u64();
  if (!r.done()) throw Error(Errc::format_error, "trailing bytes in codebook file");
  require_codes(cb.entries);
  return cb;
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  binio::write_file(path, codebook_bytes(cb));
}

Codebook load_codebook(const std::filesystem::path& path) { return codebook_from_bytes(binio::read_file(path)); }

std::string token_line(const TokenRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["codes"] = r.codes;
  return j.dump();
}

TokenRecord parse_token_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("id").get<std::string>(), j.at("codes").get<std::vector<int>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("token record: ") + e.what());
  }
}

void write_tokens(const std::filesystem::path& path, const std::vector<TokenRecord>& records) {
  std::string text;
  for (const auto& r : records) text += token_line(r) + "\n";
  binio::write_file(path, text);
}

std::vector<TokenRecord> read_tokens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<TokenRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(parse_token_line(line));
  return out;
}

}  // namespace vqpl::vq
