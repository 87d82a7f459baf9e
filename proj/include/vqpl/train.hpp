// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vqpl/checkpoint.hpp"
#include "vqpl/ingest.hpp"
#include "vqpl/net.hpp"
#include "vqpl/vq.hpp"

namespace vqpl::train {

using grad::Tensor;
using grad::Var;

enum class Quantizer { vanilla, soft };
std::string quantizer_name(Quantizer q);
Quantizer parse_quantizer(const std::string& s);

struct OneCycle {
  double warmup_fraction = 0.3;
  double start_divisor = 25.0;
  double end_divisor = 1e4;
};

struct TrainConfig {
  net::NetConfig net;
  std::size_t codebook_size = 1024;
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta_commit = 0.25;
  double grad_clip = 0.0;  // global norm; 0 disables
  Quantizer quantizer = Quantizer::vanilla;
  ingest::CorruptionConfig corruption;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 1;
  std::size_t ema_k = 5;
  double ema_eps = 0.1;
  double ema_tau = 0.95;
  OneCycle schedule;
  std::size_t threads = 1;
  std::size_t eval_every = 1;  // epochs between training-set evaluations; 0 for none

  void validate() const;
};

nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t t = 0;
};

struct Model {
  TrainConfig cfg;
  net::ParamStore params;
  std::vector<std::uint64_t> usage;
  AdamState adam;
  std::int64_t step = 0;
  std::int64_t epochs_done = 0;

  vq::Codebook codebook() const;
};

Model init_model(const TrainConfig& cfg);

/// Mean cross entropy over rows with target >= 0; 0 when there are none.
Var seq_loss(Var logits, const std::vector<int>& targets);

/// Target features (r, sin a, cos a, sin b, cos b) for residues 1..n.
Tensor structure_targets(const geom::AngleSequence& angles);

/// Mean over residues of (r - r')^2 + the squared sin/cos differences of
/// both angles.
Var struct_loss(Var predictions, const geom::AngleSequence& truth);

/// Decoupled weight decay then bias-corrected Adam update. Decay applies to
/// the tensors named in decay (all when empty).
void adamw_step(net::ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
                double weight_decay, const std::vector<std::string>& decay = {}, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

/// Weight matrices other than embeddings and the codebook.
std::vector<std::string> decayed_parameters(const net::ParamStore& params);

double onecycle_lr(double step, double total_steps, double peak_lr, const OneCycle& sched = {});

struct SampleForward {
  Var total;
  Var seq;
  Var structure;
  Var vq_loss;  // per-residue mean; vanilla only
  bool has_vq = false;
  Tensor hhat;
  std::vector<int> indices;
  net::Decoded decoded;
};

/// Corrupted sample through encoder, quantizer and decoder. temperature is
/// used by the soft strategy.
SampleForward forward_sample(const net::Bound& p, const TrainConfig& cfg, const ingest::Corrupted& input,
                             const std::vector<int>& true_sequence, const geom::AngleSequence& true_angles,
                             double temperature);

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0;
  std::optional<double> temperature;
  double seq_loss = 0;
  double struct_loss = 0;
  std::optional<double> vq_loss;
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const StepRecord& r);

struct EvalReport {
  double rec = 0;      // masked positions
  double rec_all = 0;  // every position
  double tm_score = 0;
  double l_r = 0, l_alpha = 0, l_beta = 0;
  double max_l_r = 0, max_l_alpha = 0, max_l_beta = 0;
  std::optional<double> vq_loss_mean;
  std::size_t proteins = 0;
};

nlohmann::ordered_json report_to_json(const EvalReport& r);

/// Metrics of one protein prediction.
struct ProteinMetrics {
  std::size_t masked = 0, masked_correct = 0;
  std::size_t residues = 0, correct = 0;
  double tm_score = 0;
  double l_r = 0, l_alpha = 0, l_beta = 0;
  double max_l_r = 0, max_l_alpha = 0, max_l_beta = 0;
  std::optional<double> vq_loss;
};

ProteinMetrics protein_metrics(const std::vector<int>& true_seq, const std::vector<int>& pred_seq,
                               const std::vector<std::size_t>& mask_positions, const geom::AngleSequence& true_angles,
                               const geom::AngleSequence& pred_angles, const geom::Coords& true_coords,
                               const geom::Coords& pred_coords);

/// Rec pools residues over the dataset; the remaining metrics are per-protein
/// values averaged over proteins.
EvalReport aggregate(const std::vector<ProteinMetrics>& items);

struct Prediction {
  std::vector<int> codes;
  std::vector<int> sequence;
  geom::AngleSequence angles;  // reconstructable
  geom::Coords coords;
  double vq_loss = 0;
};

/// Encoder, quantizer and decoder in inference mode. The soft strategy uses
/// argmax codes unless sample_rng is given.
Prediction reconstruct(const Model& model, const std::vector<int>& tokens, const geom::AngleSequence& angles,
                       Rng* sample_rng = nullptr);

/// Codes of an uncorrupted record.
std::vector<int> tokenize(const Model& model, const ingest::BackboneRecord& record, Rng* sample_rng = nullptr);

/// Decoder output for codes.
Prediction detokenize(const Model& model, const std::vector<int>& codes);

/// Corrupts each record with a seed derived from eval_seed and its index and
/// scores the reconstruction against the clean record.
EvalReport evaluate(const Model& model, const std::vector<ingest::BackboneRecord>& records,
                    std::vector<ProteinMetrics>* per_protein = nullptr, std::size_t threads = 1);

/// Runs body(i) for i in [0, n) on up to threads workers; the first
/// exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0;
  std::optional<EvalReport> report;
};

struct TrainResult {
  Model model;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
};

struct TrainHooks {
  std::ostream* log = nullptr;  // CSV rows
  std::function<void(const Model&, const EpochSummary&)> on_epoch;
};

TrainResult train_reconstruction(const std::vector<ingest::BackboneRecord>& dataset, const TrainConfig& cfg,
                                 const TrainHooks& hooks = {});

/// Continues training an existing model for cfg.epochs more epochs.
TrainResult train_reconstruction(Model model, const std::vector<ingest::BackboneRecord>& dataset,
                                 const TrainHooks& hooks = {});

checkpoint::Container to_container(const Model& model);
Model from_container(const checkpoint::Container& c);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace vqpl::train
