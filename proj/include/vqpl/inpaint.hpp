// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "vqpl/checkpoint.hpp"
#include "vqpl/net.hpp"
#include "vqpl/rng.hpp"
#include "vqpl/train.hpp"

namespace vqpl::inpaint {

using grad::Tensor;
using grad::Var;

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

/// Throws BadSpan unless length >= 1 and start + length <= total.
void validate_span(std::size_t total, const Span& span);

/// Length uniform on [5, floor(L/3)], start uniform on [0, L - length].
Span sample_span(std::size_t length, Rng& rng);

/// Token ids beyond the m codes.
struct Vocab {
  std::size_t codes = 0;
  int mask() const { return static_cast<int>(codes); }
  int start() const { return static_cast<int>(codes) + 1; }
  int end() const { return static_cast<int>(codes) + 2; }
  std::size_t size() const { return codes + 3; }
};

/// Rearranged sequence: the visible codes with the span collapsed to one
/// MASK, then START, the span codes and END. Generation slot j predicts the
/// token after it; the END slot carries no target.
struct GlmLayout {
  std::vector<int> tokens;
  std::vector<int> targets;  // -1 where unsupervised
  std::size_t visible = 0;   // length of the visible block
  std::size_t size() const { return tokens.size(); }
};

GlmLayout glm_layout(const std::vector<int>& codes, const Span& span, const Vocab& vocab);

/// Row-major attention permissions over the layout: the visible block sees
/// itself, generation slot j sees the visible block and slots before j.
std::vector<std::uint8_t> glm_mask(std::size_t total, const Span& span);

struct InpaintConfig {
  std::size_t codebook_size = 1024;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 1024;
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json config_to_json(const InpaintConfig& cfg);
InpaintConfig config_from_json(const nlohmann::json& j);

struct InpaintModel {
  InpaintConfig cfg;
  net::ParamStore params;
  train::AdamState adam;
  std::int64_t step = 0;
  std::string tokenizer_hash;  // config hash of the tokenizer that produced the corpus

  Vocab vocab() const { return {cfg.codebook_size}; }
};

InpaintModel init_model(const InpaintConfig& cfg);

/// Logits (layout size, vocab size) for a layout.
Var forward(const net::Bound& p, const InpaintConfig& cfg, const GlmLayout& layout, const Span& span);

/// Mean cross entropy over the generation slots only.
Var span_loss(Var logits, const GlmLayout& layout);

struct InpaintStep {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct InpaintResult {
  InpaintModel model;
  std::vector<InpaintStep> steps;
};

/// Sequences shorter than 15 codes are skipped; throws when none remain.
InpaintResult train_inpainter(const std::vector<std::vector<int>>& corpus, const InpaintConfig& cfg,
                              std::ostream* log = nullptr);

enum class Mode { greedy, sample };
Mode parse_mode(const std::string& s);

/// Fills the span autoregressively; codes outside it are copied.
std::vector<int> generate_span(const InpaintModel& model, const std::vector<int>& codes, const Span& span, Rng& rng,
                               Mode mode);

checkpoint::Container to_container(const InpaintModel& model);
InpaintModel from_container(const checkpoint::Container& c);
void save_model(const std::filesystem::path& path, const InpaintModel& model);
InpaintModel load_model(const std::filesystem::path& path);

}  // namespace vqpl::inpaint
