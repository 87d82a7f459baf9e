// SPDX-License-Identifier: Apache-2.0
#include "vqpl/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "vqpl/error.hpp"
#include "vqpl/log.hpp"

namespace vqpl::train {

using namespace vqpl::grad;
using json = nlohmann::ordered_json;

std::string quantizer_name(Quantizer q) { return q == Quantizer::vanilla ? "vanilla" : "soft"; }

Quantizer parse_quantizer(const std::string& s) {
  if (s == "vanilla") return Quantizer::vanilla;
  if (s == "soft") return Quantizer::soft;
  throw Error(Errc::usage_error, "quantizer must be vanilla or soft, got '" + s + "'");
}

void TrainConfig::validate() const {
  net.validate();
  if (epochs == 0 || batch_size == 0 || !(lr > 0.0))
    throw Error(Errc::usage_error, "epochs, batch size and learning rate must be positive");
  if (codebook_size < 2) throw Error(Errc::usage_error, "codebook size must be at least 2");
  if (weight_decay < 0.0 || beta_commit < 0.0 || grad_clip < 0.0)
    throw Error(Errc::usage_error, "weight decay, commitment weight and clip must be non-negative");
  if (!(corruption.mask_ratio >= 0.0 && corruption.mask_ratio < 1.0))
    throw Error(Errc::usage_error, "mask ratio must be in [0, 1)");
  if (!(corruption.noise_sigma >= 0.0)) throw Error(Errc::usage_error, "noise sigma must be non-negative");
  if (ema_k == 0 || !(ema_tau >= 0.0 && ema_tau <= 1.0) || ema_eps < 0.0)
    throw Error(Errc::usage_error, "invalid EMA revival settings");
  if (!(schedule.warmup_fraction > 0.0 && schedule.warmup_fraction < 1.0) || !(schedule.start_divisor > 0.0) ||
      !(schedule.end_divisor > 0.0))
    throw Error(Errc::usage_error, "invalid OneCycle settings");
}

json config_to_json(const TrainConfig& c) {
  json j;
  j["d_model"] = c.net.d_model;
  j["d_code"] = c.net.d_code;
  j["n_heads"] = c.net.n_heads;
  j["n_enc_layers"] = c.net.n_enc_layers;
  j["n_dec_layers"] = c.net.n_dec_layers;
  j["n_vocab"] = c.net.n_vocab;
  j["max_len"] = c.net.max_len;
  j["ffn_mult"] = c.net.ffn_mult;
  j["dropout"] = c.net.dropout;
  j["codebook_size"] = c.codebook_size;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["beta_commit"] = c.beta_commit;
  j["grad_clip"] = c.grad_clip;
  j["quantizer"] = quantizer_name(c.quantizer);
  j["mask_ratio"] = c.corruption.mask_ratio;
  j["noise_sigma"] = c.corruption.noise_sigma;
  j["seed"] = c.seed;
  j["eval_seed"] = c.eval_seed;
  j["ema_k"] = c.ema_k;
  j["ema_eps"] = c.ema_eps;
  j["ema_tau"] = c.ema_tau;
  j["warmup_fraction"] = c.schedule.warmup_fraction;
  j["start_divisor"] = c.schedule.start_divisor;
  j["end_divisor"] = c.schedule.end_divisor;
  j["eval_every"] = c.eval_every;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d_model", c.net.d_model);
    get("d_code", c.net.d_code);
    get("n_heads", c.net.n_heads);
    get("n_enc_layers", c.net.n_enc_layers);
    get("n_dec_layers", c.net.n_dec_layers);
    get("n_vocab", c.net.n_vocab);
    get("max_len", c.net.max_len);
    get("ffn_mult", c.net.ffn_mult);
    get("dropout", c.net.dropout);
    get("codebook_size", c.codebook_size);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("beta_commit", c.beta_commit);
    get("grad_clip", c.grad_clip);
    if (j.contains("quantizer")) c.quantizer = parse_quantizer(j.at("quantizer").get<std::string>());
    get("mask_ratio", c.corruption.mask_ratio);
    get("noise_sigma", c.corruption.noise_sigma);
    get("seed", c.seed);
    get("eval_seed", c.eval_seed);
    get("ema_k", c.ema_k);
    get("ema_eps", c.ema_eps);
    get("ema_tau", c.ema_tau);
    get("warmup_fraction", c.schedule.warmup_fraction);
    get("start_divisor", c.schedule.start_divisor);
    get("end_divisor", c.schedule.end_divisor);
    get("eval_every", c.eval_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("training config: ") + e.what());
  }
  c.corruption.seed = c.seed;
  return c;
}

vq::Codebook Model::codebook() const { return {params.at("vq.codebook"), usage}; }

Model init_model(const TrainConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(derive_seed(cfg.seed, 0x696e6974));
  net::init_params(m.params, cfg.net, rng);
  vq::init_params(m.params, cfg.net.d_model, cfg.net.d_code, cfg.codebook_size, rng);
  m.usage.assign(cfg.codebook_size, 0);
  return m;
}

Var seq_loss(Var logits, const std::vector<int>& targets) { return cross_entropy_with_logits(logits, targets); }

Tensor structure_targets(const geom::AngleSequence& angles) { return net::structure_features(angles); }

Var struct_loss(Var predictions, const geom::AngleSequence& truth) {
  const std::size_t n = truth.residue_count();
  if (predictions.shape() != Shape{n, 5})
    throw Error(Errc::shape_mismatch, "structure predictions " + shape_string(predictions.shape()) + " for " +
                                          std::to_string(n) + " residues");
  if (n == 0) return predictions.tape->constant(Tensor::scalar(0.0));
  Var diff = sub(predictions, predictions.tape->constant(structure_targets(truth)));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n));
}

std::vector<std::string> decayed_parameters(const net::ParamStore& params) {
  std::vector<std::string> out;
  for (const auto& name : params.names()) {
    if (params.at(name).rank() != 2) continue;
    if (name == "vq.codebook" || name.rfind("embed.", 0) == 0) continue;
    out.push_back(name);
  }
  return out;
}

void adamw_step(net::ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
                double weight_decay, const std::vector<std::string>& decay, double beta1, double beta2, double eps) {
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (g.shape != p.shape) throw Error(Errc::shape_mismatch, "gradient shape for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape != p.shape) m = Tensor(p.shape);
    if (v.shape != p.shape) v = Tensor(p.shape);
    const bool decays = decay.empty() || std::find(decay.begin(), decay.end(), name) != decay.end();
    const double shrink = decays ? 1.0 - lr * weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
      p.data[i] *= shrink;
      p.data[i] -= lr * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + eps);
    }
  }
}

double onecycle_lr(double step, double total_steps, double peak_lr, const OneCycle& s) {
  if (!(total_steps > 0.0) || step < 0.0 || step > total_steps)
    throw Error(Errc::bad_step, "step " + std::to_string(step) + " of " + std::to_string(total_steps));
  const double start = peak_lr / s.start_divisor;
  const double end = peak_lr / s.end_divisor;
  const double warm = s.warmup_fraction * total_steps;
  if (step <= warm) return start + (peak_lr - start) * 0.5 * (1.0 - std::cos(std::numbers::pi * step / warm));
  const double frac = (step - warm) / (total_steps - warm);
  return end + (peak_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

SampleForward forward_sample(const net::Bound& p, const TrainConfig& cfg, const ingest::Corrupted& input,
                             const std::vector<int>& true_sequence, const geom::AngleSequence& true_angles,
                             double temperature) {
  SampleForward f;
  Var h = net::encode(p, cfg.net, net::fuse_embed(p, input.masked_sequence, input.angles));
  Var hhat = vq::project_sphere(p, h);
  vq::QuantizerOutput q = cfg.quantizer == Quantizer::vanilla
                              ? vq::nearest_code(hhat, p["vq.codebook"], cfg.beta_commit)
                              : vq::soft_quantize(hhat, p["vq.codebook"], temperature);
  f.decoded = net::decode(p, cfg.net, q.z);
  f.seq = seq_loss(f.decoded.logits, true_sequence);
  f.structure = struct_loss(f.decoded.structure, true_angles);
  f.total = add(f.seq, f.structure);
  if (q.has_loss) {
    f.vq_loss = scale(q.vq_loss, 1.0 / static_cast<double>(true_sequence.size()));
    f.total = add(f.total, f.vq_loss);
    f.has_vq = true;
  }
  f.hhat = hhat.value();
  f.indices = std::move(q.indices);
  return f;
}

void write_log_header(std::ostream& os) { os << "step,lr,T,seq_loss,struct_loss,vq_loss\n"; }

void write_log_row(std::ostream& os, const StepRecord& r) {
  std::ostringstream line;
  line << std::setprecision(10) << r.step << ',' << r.lr << ',';
  if (r.temperature) line << *r.temperature;
  line << ',' << r.seq_loss << ',' << r.struct_loss << ',';
  if (r.vq_loss) line << *r.vq_loss;
  line << '\n';
  os << line.str();
}

json report_to_json(const EvalReport& r) {
  json j;
  j["Rec"] = r.rec;
  j["Rec_all"] = r.rec_all;
  j["TMScore"] = r.tm_score;
  if (r.vq_loss_mean) j["L_vq"] = *r.vq_loss_mean;
  j["L_r"] = r.l_r;
  j["L_alpha"] = r.l_alpha;
  j["L_beta"] = r.l_beta;
  j["max_L_r"] = r.max_l_r;
  j["max_L_alpha"] = r.max_l_alpha;
  j["max_L_beta"] = r.max_l_beta;
  j["proteins"] = r.proteins;
  return j;
}

ProteinMetrics protein_metrics(const std::vector<int>& true_seq, const std::vector<int>& pred_seq,
                               const std::vector<std::size_t>& mask_positions, const geom::AngleSequence& true_angles,
                               const geom::AngleSequence& pred_angles, const geom::Coords& true_coords,
                               const geom::Coords& pred_coords) {
  const std::size_t n = true_seq.size();
  if (pred_seq.size() != n || true_angles.residue_count() != n || pred_angles.residue_count() != n ||
      true_coords.size() != n || pred_coords.size() != n)
    throw Error(Errc::length_mismatch, "prediction and reference lengths differ");
  ProteinMetrics m;
  m.residues = n;
  for (std::size_t i = 0; i < n; ++i) m.correct += pred_seq[i] == true_seq[i];
  for (auto i : mask_positions) {
    ++m.masked;
    m.masked_correct += pred_seq.at(i) == true_seq.at(i);
  }
  m.tm_score = geom::tm_score(pred_coords, true_coords);
  for (std::size_t i = 1; i <= n; ++i) {
    const auto& a = true_angles.triples[i];
    const auto& b = pred_angles.triples[i];
    const double dr = std::abs(a.r - b.r);
    const double da = std::abs(geom::wrap_angle(a.alpha - b.alpha));
    const double db = std::abs(geom::wrap_angle(a.beta - b.beta));
    m.l_r += dr;
    m.l_alpha += da;
    m.l_beta += db;
    m.max_l_r = std::max(m.max_l_r, dr);
    m.max_l_alpha = std::max(m.max_l_alpha, da);
    m.max_l_beta = std::max(m.max_l_beta, db);
  }
  m.l_r /= static_cast<double>(n);
  m.l_alpha /= static_cast<double>(n);
  m.l_beta /= static_cast<double>(n);
  return m;
}

EvalReport aggregate(const std::vector<ProteinMetrics>& items) {
  EvalReport r;
  r.proteins = items.size();
  if (items.empty()) return r;
  std::size_t masked = 0, masked_ok = 0, residues = 0, ok = 0;
  double vq = 0.0;
  bool has_vq = false;
  for (const auto& m : items) {
    masked += m.masked;
    masked_ok += m.masked_correct;
    residues += m.residues;
    ok += m.correct;
    r.tm_score += m.tm_score;
    r.l_r += m.l_r;
    r.l_alpha += m.l_alpha;
    r.l_beta += m.l_beta;
    r.max_l_r += m.max_l_r;
    r.max_l_alpha += m.max_l_alpha;
    r.max_l_beta += m.max_l_beta;
    if (m.vq_loss) {
      vq += *m.vq_loss;
      has_vq = true;
    }
  }
  const double k = static_cast<double>(items.size());
  r.rec = masked ? static_cast<double>(masked_ok) / static_cast<double>(masked) : 1.0;
  r.rec_all = residues ? static_cast<double>(ok) / static_cast<double>(residues) : 1.0;
  r.tm_score /= k;
  r.l_r /= k;
  r.l_alpha /= k;
  r.l_beta /= k;
  r.max_l_r /= k;
  r.max_l_alpha /= k;
  r.max_l_beta /= k;
  if (has_vq) r.vq_loss_mean = vq / k;
  return r;
}

namespace {

constexpr double kFinalTemperature = 1e-5;

std::vector<int> choose_codes(const Model& model, const Tensor& hhat, Rng* sample_rng) {
  const Tensor& entries = model.params.at("vq.codebook");
  if (model.cfg.quantizer == Quantizer::soft && sample_rng) {
    Tape t(false);
    const auto q = vq::soft_quantize(t.constant(hhat), t.constant(entries), kFinalTemperature);
    const Tensor& a = q.attention.value();
    std::vector<int> out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
      out[i] = vq::sample_code(std::span<const double>(a.data.data() + i * a.cols(), a.cols()), *sample_rng);
    return out;
  }
  return vq::nearest_indices(hhat, entries);
}

Tensor encode_hhat(const Model& model, const std::vector<int>& tokens, const geom::AngleSequence& angles) {
  Tape t(false);
  net::Bound p(t, model.params, false);
  Var h = net::encode(p, model.cfg.net, net::fuse_embed(p, tokens, angles));
  return vq::project_sphere(p, h).value();
}

}  // namespace

Prediction detokenize(const Model& model, const std::vector<int>& codes) {
  const Tensor& entries = model.params.at("vq.codebook");
  if (codes.size() < 4) throw Error(Errc::too_short, "at least 4 codes are needed to build a backbone");
  for (int c : codes)
    if (c < 0 || static_cast<std::size_t>(c) >= entries.rows())
      throw Error(Errc::unknown_code, "code " + std::to_string(c) + " outside codebook of " +
                                          std::to_string(entries.rows()));
  Tape t(false);
  net::Bound p(t, model.params, false);
  const auto d = net::decode(p, model.cfg.net, gather(p["vq.codebook"], codes));
  Prediction out;
  out.codes = codes;
  out.sequence = net::predict_residues(d.logits.value());
  out.angles = net::reconstructable(net::decode_angles(d.structure.value()));
  out.coords = geom::torsion_reconstruct(out.angles);
  return out;
}

Prediction reconstruct(const Model& model, const std::vector<int>& tokens, const geom::AngleSequence& angles,
                       Rng* sample_rng) {
  const Tensor hhat = encode_hhat(model, tokens, angles);
  const auto codes = choose_codes(model, hhat, sample_rng);
  Prediction out = detokenize(model, codes);
  const Tensor& entries = model.params.at("vq.codebook");
  double loss = 0.0;
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (std::size_t c = 0; c < hhat.cols(); ++c) {
      const double d = hhat(i, c) - entries(codes[i], c);
      loss += (1.0 + model.cfg.beta_commit) * d * d;
    }
  out.vq_loss = loss / static_cast<double>(codes.size());
  return out;
}

std::vector<int> tokenize(const Model& model, const ingest::BackboneRecord& record, Rng* sample_rng) {
  const auto angles = geom::torsion_parametrize(record.coords);
  return choose_codes(model, encode_hhat(model, record.sequence, angles), sample_rng);
}

EvalReport evaluate(const Model& model, const std::vector<ingest::BackboneRecord>& records,
                    std::vector<ProteinMetrics>* per_protein, std::size_t threads) {
  std::vector<ProteinMetrics> items(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& rec = records[i];
    ingest::CorruptionConfig cc = model.cfg.corruption;
    cc.seed = derive_seed(model.cfg.eval_seed, i);
    const auto corrupted = ingest::corrupt(rec, cc);
    const auto pred = reconstruct(model, corrupted.masked_sequence, corrupted.angles);
    auto m = protein_metrics(rec.sequence, pred.sequence, corrupted.mask_positions,
                             geom::torsion_parametrize(rec.coords), pred.angles, rec.coords, pred.coords);
    if (model.cfg.quantizer == Quantizer::vanilla) m.vq_loss = pred.vq_loss;
    items[i] = m;
  });
  if (per_protein) *per_protein = items;
  return aggregate(items);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

struct SampleResult {
  std::map<std::string, Tensor> grads;
  Tensor hhat;
  std::vector<int> indices;
  double total = 0, seq = 0, structure = 0, vq = 0;
};

}  // namespace

TrainResult train_reconstruction(const std::vector<ingest::BackboneRecord>& dataset, const TrainConfig& cfg,
                                 const TrainHooks& hooks) {
  return train_reconstruction(init_model(cfg), dataset, hooks);
}

TrainResult train_reconstruction(Model model, const std::vector<ingest::BackboneRecord>& dataset,
                                 const TrainHooks& hooks) {
  const TrainConfig cfg = model.cfg;
  cfg.validate();
  if (dataset.empty()) throw Error(Errc::usage_error, "training set is empty");
  std::vector<geom::AngleSequence> truth;
  for (const auto& r : dataset) truth.push_back(geom::torsion_parametrize(r.coords));

  const std::size_t n = dataset.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total = per_epoch * cfg.epochs;
  const double denom = static_cast<double>(std::max<std::size_t>(total, 2) - 1);
  const auto decay = decayed_parameters(model.params);

  // steps since each code was last assigned; a code idle for a full pass is dead
  std::vector<std::size_t> idle(model.params.at("vq.codebook").rows(), 0);

  TrainResult result;
  if (hooks.log) write_log_header(*hooks.log);
  std::size_t local = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::uint64_t epoch_id = static_cast<std::uint64_t>(model.epochs_done);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, 0x73687566, epoch_id)).shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch, ++local) {
      const std::size_t b1 = std::min(n, b0 + batch);
      const double s = static_cast<double>(std::min<std::size_t>(local, static_cast<std::size_t>(denom)));
      StepRecord rec;
      rec.step = model.step;
      rec.lr = onecycle_lr(s, denom, cfg.lr, cfg.schedule);
      double temperature = 1.0;
      if (cfg.quantizer == Quantizer::soft) {
        temperature = vq::anneal_temperature(static_cast<std::int64_t>(s), static_cast<std::int64_t>(denom));
        rec.temperature = temperature;
      }
      std::vector<SampleResult> results(b1 - b0);
      parallel_for(results.size(), cfg.threads, [&](std::size_t j) {
        const std::size_t idx = order[b0 + j];
        ingest::CorruptionConfig cc = cfg.corruption;
        cc.seed = derive_seed(cfg.seed, epoch_id + 1, idx);
        const auto corrupted = ingest::corrupt(dataset[idx], cc);
        Tape tape(false);
        net::Bound p(tape, model.params, true);
        auto f = forward_sample(p, cfg, corrupted, dataset[idx].sequence, truth[idx], temperature);
        tape.backward(f.total);
        SampleResult& r = results[j];
        r.grads = p.grads();
        r.hhat = std::move(f.hhat);
        r.indices = std::move(f.indices);
        r.total = f.total.value().item();
        r.seq = f.seq.value().item();
        r.structure = f.structure.value().item();
        r.vq = f.has_vq ? f.vq_loss.value().item() : 0.0;
      });

      std::map<std::string, Tensor> grads = std::move(results[0].grads);
      for (std::size_t j = 1; j < results.size(); ++j)
        for (auto& [name, g] : grads) {
          const auto& other = results[j].grads.at(name);
          for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += other.data[i];
        }
      const double inv = 1.0 / static_cast<double>(results.size());
      double norm2 = 0.0;
      for (auto& [name, g] : grads)
        for (auto& v : g.data) {
          v *= inv;
          norm2 += v * v;
        }
      if (!std::isfinite(norm2)) throw Error(Errc::numeric_error, "non-finite gradient at step " + std::to_string(model.step));
      if (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip) {
        const double f = cfg.grad_clip / std::sqrt(norm2);
        for (auto& [name, g] : grads)
          for (auto& v : g.data) v *= f;
      }
      adamw_step(model.params, grads, model.adam, rec.lr, cfg.weight_decay, decay);
      for (const auto& name : model.params.names())
        for (double v : model.params.at(name).data)
          if (!std::isfinite(v))
            throw Error(Errc::numeric_error, "parameter " + name + " diverged at step " + std::to_string(model.step));
      Tensor& codes = model.params.at("vq.codebook");
      vq::normalize_rows(codes);

      for (const auto& r : results) {
        rec.seq_loss += r.seq * inv;
        rec.struct_loss += r.structure * inv;
        epoch_loss += r.total;
        for (int c : r.indices) ++model.usage[c];
      }
      if (cfg.quantizer == Quantizer::vanilla) {
        double vq = 0.0;
        for (const auto& r : results) vq += r.vq * inv;
        rec.vq_loss = vq;
        std::size_t rows = 0;
        for (const auto& r : results) rows += r.hhat.rows();
        for (auto& i : idle) ++i;
        for (const auto& r : results)
          for (int c : r.indices) idle[c] = 0;
        if (rows >= cfg.ema_k) {
          Tensor all({rows, codes.cols()});
          std::size_t off = 0;
          for (const auto& r : results) {
            std::copy(r.hhat.data.begin(), r.hhat.data.end(), all.data.begin() + off);
            off += r.hhat.size();
          }
          std::vector<std::size_t> dead;
          for (std::size_t c = 0; c < idle.size(); ++c)
            if (idle[c] >= per_epoch) dead.push_back(c);
          if (!dead.empty()) {
            const std::size_t d = codes.cols();
            Tensor sub({dead.size(), d});
            for (std::size_t j = 0; j < dead.size(); ++j)
              std::copy_n(codes.data.begin() + dead[j] * d, d, sub.data.begin() + j * d);
            vq::ema_revive(sub, all, cfg.ema_k, cfg.ema_eps, cfg.ema_tau);
            for (std::size_t j = 0; j < dead.size(); ++j)
              std::copy_n(sub.data.begin() + j * d, d, codes.data.begin() + dead[j] * d);
          }
        }
      }
      if (!std::isfinite(rec.seq_loss + rec.struct_loss + rec.vq_loss.value_or(0.0)))
        throw Error(Errc::numeric_error, "non-finite loss at step " + std::to_string(model.step));
      if (hooks.log) write_log_row(*hooks.log, rec);
      result.steps.push_back(rec);
      ++model.step;
    }
    ++model.epochs_done;
    EpochSummary summary;
    summary.epoch = static_cast<std::size_t>(model.epochs_done);
    summary.mean_loss = epoch_loss / static_cast<double>(n);
    if (cfg.eval_every && ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs))
      summary.report = evaluate(model, dataset);
    log::info("epoch ", summary.epoch, " loss ", summary.mean_loss,
              summary.report ? " rec " + std::to_string(summary.report->rec) + " tm " +
                                   std::to_string(summary.report->tm_score)
                             : std::string());
    if (hooks.on_epoch) hooks.on_epoch(model, summary);
    result.epochs.push_back(std::move(summary));
  }
  result.model = std::move(model);
  return result;
}

checkpoint::Container to_container(const Model& model) {
  checkpoint::Container c;
  const auto cfg = config_to_json(model.cfg);
  c.meta["format"] = "vqpl-tokenizer";
  c.meta["config"] = cfg;
  c.meta["config_hash"] = checkpoint::fnv1a_hex(cfg.dump());
  c.meta["step"] = model.step;
  c.meta["epochs_done"] = model.epochs_done;
  c.meta["adam_t"] = model.adam.t;
  for (const auto& name : model.params.names()) c.tensors.emplace_back(name, model.params.at(name));
  for (const auto& [name, t] : model.adam.m) c.tensors.emplace_back("adam.m/" + name, t);
  for (const auto& [name, t] : model.adam.v) c.tensors.emplace_back("adam.v/" + name, t);
  Tensor usage({model.usage.size()});
  for (std::size_t i = 0; i < model.usage.size(); ++i) usage.data[i] = static_cast<double>(model.usage[i]);
  c.tensors.emplace_back("usage/vq.codebook", std::move(usage));
  return c;
}

Model from_container(const checkpoint::Container& c) {
  if (c.meta.value("format", std::string()) != "vqpl-tokenizer")
    throw Error(Errc::format_error, "checkpoint is not a tokenizer model");
  Model m;
  m.cfg = config_from_json(c.meta.at("config"));
  m.step = c.meta.value("step", std::int64_t{0});
  m.epochs_done = c.meta.value("epochs_done", std::int64_t{0});
  m.adam.t = c.meta.value("adam_t", std::int64_t{0});
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m/", 0) == 0) {
      m.adam.m[name.substr(7)] = t;
    } else if (name.rfind("adam.v/", 0) == 0) {
      m.adam.v[name.substr(7)] = t;
    } else if (name == "usage/vq.codebook") {
      for (double v : t.data) m.usage.push_back(static_cast<std::uint64_t>(v));
    } else {
      m.params.add(name, t);
    }
  }
  const auto& cb = m.params.at("vq.codebook");
  if (m.usage.size() != cb.rows()) m.usage.assign(cb.rows(), 0);
  m.cfg.codebook_size = cb.rows();
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) { checkpoint::save(path, to_container(model)); }

Model load_model(const std::filesystem::path& path) { return from_container(checkpoint::load(path)); }

}  // namespace vqpl::train
