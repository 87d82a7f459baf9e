// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vqpl/grad.hpp"
#include "vqpl/net.hpp"
#include "vqpl/rng.hpp"

namespace vqpl::vq {

using grad::Tensor;
using grad::Var;

/// Unit-norm code vectors (m, d) with per-entry assignment counts.
struct Codebook {
  Tensor entries;
  std::vector<std::uint64_t> usage;

  std::size_t size() const { return entries.rank() ? entries.shape[0] : 0; }
  std::size_t dim() const { return entries.rank() > 1 ? entries.shape[1] : 0; }
};

/// Random unit rows; m >= 2.
Codebook random_codebook(std::size_t m, std::size_t d, Rng& rng);
void normalize_rows(Tensor& t);

/// Adds "vq.proj.w", "vq.proj.b" and "vq.codebook".
void init_params(net::ParamStore& store, std::size_t d_model, std::size_t d_code, std::size_t m, Rng& rng);

/// Affine map to d_code followed by row-wise l2 normalization.
Var project_sphere(const net::Bound& p, Var h);

struct QuantizerOutput {
  Var z;
  std::vector<int> indices;
  Var attention;         // soft only
  Var vq_loss;           // vanilla only
  bool has_loss = false;
};

/// argmin_j ||h_i - e_j|| per row, lowest index on ties.
std::vector<int> nearest_indices(const Tensor& hhat, const Tensor& entries);

/// Nearest code with straight-through gradient and the summed
/// codebook/commitment loss.
QuantizerOutput nearest_code(Var hhat, Var codebook, double beta_commit = 0.25);

/// Attention over the codebook at temperature T; indices are the argmax.
QuantizerOutput soft_quantize(Var hhat, Var codebook, double temperature);

/// Moves codes whose top-k batch mean lies farther than eps toward that mean
/// and re-normalizes them. Returns the number of codes updated.
std::size_t ema_revive(Tensor& entries, const Tensor& batch_hhat, std::size_t k = 5, double eps = 0.1,
                       double tau = 0.95);

/// 10^(-5 step/total), exactly 1 at step 0 and 1e-5 at the end.
double anneal_temperature(std::int64_t step, std::int64_t total_steps);

/// Inverse-CDF draw from a normalized row.
int sample_code(std::span<const double> row, Rng& rng);

void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);
std::string codebook_bytes(const Codebook& cb);
Codebook codebook_from_bytes(const std::string& bytes);

struct TokenRecord {
  std::string id;
  std::vector<int> codes;
};

std::string token_line(const TokenRecord& r);
TokenRecord parse_token_line(const std::string& line);
void write_tokens(const std::filesystem::path& path, const std::vector<TokenRecord>& records);
std::vector<TokenRecord> read_tokens(const std::filesystem::path& path);

}  // namespace vqpl::vq
