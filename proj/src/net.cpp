// SPDX-License-Identifier: Apache-2.0
#include "vqpl/net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vqpl/error.hpp"
#include "vqpl/ingest.hpp"

namespace vqpl::net {

using namespace vqpl::grad;

void NetConfig::validate() const {
  if (d_model == 0 || d_code == 0 || n_heads == 0 || n_vocab == 0 || max_len == 0 || ffn_mult == 0)
    throw Error(Errc::degenerate_configuration, "network dimensions must be positive");
  if (d_model % n_heads != 0)
    throw Error(Errc::degenerate_configuration,
                "d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(n_heads) + " heads");
  if (head_dim() % 2 != 0) throw Error(Errc::odd_head_dim, "head dim " + std::to_string(head_dim()) + " is odd");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(Errc::degenerate_configuration, "dropout outside [0, 1)");
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw Error(Errc::format_error, "duplicate parameter " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::format_error, "missing parameter " + name);
  return tensors_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

Bound::Bound(Tape& tape, const ParamStore& store, bool trainable) : tape_(&tape), order_(store.names()) {
  for (const auto& name : order_)
    vars_.emplace(name, trainable ? tape.param(store.at(name)) : tape.constant(store.at(name)));
}

Var Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error(Errc::format_error, "unbound parameter " + name);
  return it->second;
}

void Bound::replace(const std::string& name, Var v) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error(Errc::format_error, "unbound parameter " + name);
  if (it->second.shape() != v.shape()) throw Error(Errc::shape_mismatch, "replacement shape for " + name);
  it->second = v;
}

std::map<std::string, Tensor> Bound::grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& name : order_) out.emplace(name, tape_->grad(vars_.at(name)));
  return out;
}

Tensor init_linear(std::size_t in, std::size_t out, Rng& rng) {
  Tensor w({in, out});
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data) v = sd * rng.normal();
  return w;
}

namespace {

Tensor gaussian(Shape s, double sd, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = sd * rng.normal();
  return t;
}

void add_norm(ParamStore& store, const std::string& name, std::size_t d) {
  store.add(name + ".g", Tensor::full({d}, 1.0));
  store.add(name + ".b", Tensor({d}));
}

Var norm(const Bound& p, const std::string& name, Var x) {
  return add(mul(layer_norm(x), p[name + ".g"]), p[name + ".b"]);
}

Var dropout(Var x, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return x;
  Tensor keep(x.shape());
  for (auto& v : keep.data) v = rng->uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
  return mul(x, x.tape->constant(std::move(keep)));
}

}  // namespace

void init_stack(ParamStore& store, const std::string& prefix, std::size_t layers, std::size_t d_model,
                std::size_t ffn_mult, Rng& rng) {
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(layers, 1)));
  const std::size_t hidden = ffn_mult * d_model;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string b = prefix + "." + std::to_string(l) + ".";
    add_norm(store, b + "ln1", d_model);
    store.add(b + "wq", init_linear(d_model, d_model, rng));
    store.add(b + "wk", init_linear(d_model, d_model, rng));
    store.add(b + "wv", init_linear(d_model, d_model, rng));
    Tensor wo = init_linear(d_model, d_model, rng);
    for (auto& v : wo.data) v *= out_scale;
    store.add(b + "wo", std::move(wo));
    store.add(b + "bo", Tensor({d_model}));
    add_norm(store, b + "ln2", d_model);
    store.add(b + "w1", init_linear(d_model, hidden, rng));
    store.add(b + "b1", Tensor({hidden}));
    Tensor w2 = init_linear(hidden, d_model, rng);
    for (auto& v : w2.data) v *= out_scale;
    store.add(b + "w2", std::move(w2));
    store.add(b + "b2", Tensor({d_model}));
  }
  add_norm(store, prefix + ".ln", d_model);
}

void init_params(ParamStore& store, const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const double embed_sd = 1.0 / std::sqrt(static_cast<double>(d));
  store.add("embed.token", gaussian({cfg.n_vocab, d}, 1.0, rng));
  store.add("embed.struct.w", init_linear(5, d, rng));
  store.add("embed.struct.b", Tensor({d}));
  store.add("embed.mask", gaussian({d}, embed_sd, rng));
  init_stack(store, "enc", cfg.n_enc_layers, d, cfg.ffn_mult, rng);
  store.add("dec.up.w", init_linear(cfg.d_code, d, rng));
  store.add("dec.up.b", Tensor({d}));
  init_stack(store, "dec", cfg.n_dec_layers, d, cfg.ffn_mult, rng);
  store.add("head.seq.w", init_linear(d, cfg.n_vocab, rng));
  store.add("head.seq.b", Tensor({cfg.n_vocab}));
  store.add("head.struct.w", init_linear(d, 5, rng));
  Tensor sb({5});
  sb[0] = 3.8;
  store.add("head.struct.b", std::move(sb));
}

Tensor structure_features(const geom::AngleSequence& angles, std::vector<std::uint8_t>* mask_rows) {
  const std::size_t n = angles.residue_count();
  Tensor f({n, 5});
  if (mask_rows) mask_rows->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = angles.triples[i + 1];
    if (ingest::is_mask_sentinel(t)) {
      if (mask_rows) (*mask_rows)[i] = 1;
      continue;
    }
    if (!std::isfinite(t.r) || !std::isfinite(t.alpha) || !std::isfinite(t.beta))
      throw Error(Errc::invalid_angle, "non-finite angle triple at residue " + std::to_string(i));
    f(i, 0) = t.r;
    f(i, 1) = std::sin(t.alpha);
    f(i, 2) = std::cos(t.alpha);
    f(i, 3) = std::sin(t.beta);
    f(i, 4) = std::cos(t.beta);
  }
  return f;
}

Var fuse_embed(const Bound& p, const std::vector<int>& tokens, const geom::AngleSequence& angles) {
  if (tokens.size() != angles.residue_count())
    throw Error(Errc::length_mismatch, std::to_string(tokens.size()) + " tokens vs " +
                                           std::to_string(angles.residue_count()) + " residues");
  Tape& t = p.tape();
  const std::size_t n = tokens.size();
  std::vector<std::uint8_t> masked;
  Tensor feats = structure_features(angles, &masked);
  Var hs = gather(p["embed.token"], tokens);
  Var hx = linear(t.constant(std::move(feats)), p["embed.struct.w"], p["embed.struct.b"]);
  if (std::any_of(masked.begin(), masked.end(), [](std::uint8_t m) { return m != 0; })) {
    const std::size_t d = hs.shape()[1];
    Tensor keep({n, d});
    Tensor indicator({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      indicator[i] = masked[i] ? 1.0 : 0.0;
      for (std::size_t j = 0; j < d; ++j) keep(i, j) = masked[i] ? 0.0 : 1.0;
    }
    Var mask_rows = matmul(t.constant(std::move(indicator)), reshape(p["embed.mask"], {1, d}));
    hx = add(mul(hx, t.constant(std::move(keep))), mask_rows);
  }
  return add(hs, hx);
}

Var transformer(const Bound& p, const std::string& prefix, std::size_t layers, Var x, const StackOptions& opt) {
  const std::size_t n = x.shape()[0];
  std::vector<double> positions = opt.positions;
  if (positions.empty()) {
    positions.resize(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<double>(i);
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string b = prefix + "." + std::to_string(l) + ".";
    Var h = norm(p, b + "ln1", x);
    Var q = rope(matmul(h, p[b + "wq"]), opt.n_heads, positions);
    Var k = rope(matmul(h, p[b + "wk"]), opt.n_heads, positions);
    Var v = matmul(h, p[b + "wv"]);
    std::vector<double>* probs = nullptr;
    if (opt.probe) {
      opt.probe->q.push_back(q.value());
      opt.probe->k.push_back(k.value());
      opt.probe->probs.emplace_back();
      probs = &opt.probe->probs.back();
    }
    Var a = attention(q, k, v, opt.n_heads, opt.allowed, probs);
    x = add(x, dropout(linear(a, p[b + "wo"], p[b + "bo"]), opt.dropout, opt.rng));
    Var f = gelu(linear(norm(p, b + "ln2", x), p[b + "w1"], p[b + "b1"]));
    x = add(x, dropout(linear(f, p[b + "w2"], p[b + "b2"]), opt.dropout, opt.rng));
  }
  return norm(p, prefix + ".ln", x);
}

Tensor rope_rotate(const Tensor& x, std::size_t n_heads, const std::vector<double>& positions) {
  Tensor out = x;
  rope_inplace(out, n_heads, positions);
  return out;
}

Var encode(const Bound& p, const NetConfig& cfg, Var h_sx, Rng* dropout_rng, AttentionProbe* probe) {
  const std::size_t n = h_sx.shape()[0];
  if (n > cfg.max_len)
    throw Error(Errc::too_long, "length " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg.max_len));
  StackOptions opt;
  opt.n_heads = cfg.n_heads;
  opt.dropout = cfg.dropout;
  opt.rng = dropout_rng;
  opt.probe = probe;
  return transformer(p, "enc", cfg.n_enc_layers, h_sx, opt);
}

Decoded decode(const Bound& p, const NetConfig& cfg, Var z, Rng* dropout_rng) {
  if (z.shape().size() != 2 || z.shape()[1] != cfg.d_code)
    throw Error(Errc::shape_mismatch, "decoder input " + shape_string(z.shape()) + ", expected (n," +
                                          std::to_string(cfg.d_code) + ")");
  if (z.shape()[0] > cfg.max_len) throw Error(Errc::too_long, "decoder input exceeds max_len");
  StackOptions opt;
  opt.n_heads = cfg.n_heads;
  opt.dropout = cfg.dropout;
  opt.rng = dropout_rng;
  Var h = transformer(p, "dec", cfg.n_dec_layers, linear(z, p["dec.up.w"], p["dec.up.b"]), opt);
  Var logits = linear(h, p["head.seq.w"], p["head.seq.b"]);
  Var s = linear(h, p["head.struct.w"], p["head.struct.b"]);
  Var structure = concat({softplus(slice(s, 1, 0, 1)), slice(s, 1, 1, 5)}, 1);
  return {logits, structure};
}

std::vector<Tensor> encode_padded(const ParamStore& store, const NetConfig& cfg,
                                  const std::vector<std::vector<int>>& tokens,
                                  const std::vector<geom::AngleSequence>& angles) {
  if (tokens.size() != angles.size()) throw Error(Errc::length_mismatch, "batch sizes differ");
  std::size_t width = 0;
  for (const auto& t : tokens) width = std::max(width, t.size());
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const std::size_t n = tokens[s].size();
    if (angles[s].residue_count() != n) throw Error(Errc::length_mismatch, "sample " + std::to_string(s));
    std::vector<int> padded = tokens[s];
    padded.resize(width, ingest::kPad);
    geom::AngleSequence a = angles[s];
    a.triples.resize(n + 1);
    a.triples.resize(width + 1, geom::Triple{});
    a.triples.push_back(geom::kVirtualTriple);
    std::vector<std::uint8_t> allowed(width * width, 0);
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t j = 0; j < n; ++j) allowed[i * width + j] = 1;
    Tape tape(false);
    Bound p(tape, store, false);
    StackOptions opt;
    opt.n_heads = cfg.n_heads;
    opt.allowed = std::move(allowed);
    Var h = transformer(p, "enc", cfg.n_enc_layers, fuse_embed(p, padded, a), opt);
    out.push_back(slice(h, 0, 0, n).value());
  }
  return out;
}

geom::AngleSequence decode_angles(const Tensor& structure) {
  if (structure.rank() != 2 || structure.shape[1] != 5)
    throw Error(Errc::shape_mismatch, "structure output " + shape_string(structure.shape));
  geom::AngleSequence a;
  a.triples.push_back(geom::kVirtualTriple);
  for (std::size_t i = 0; i < structure.shape[0]; ++i)
    a.triples.push_back({structure(i, 0), std::atan2(structure(i, 1), structure(i, 2)),
                         std::atan2(structure(i, 3), structure(i, 4))});
  a.triples.push_back(geom::kVirtualTriple);
  return a;
}

geom::AngleSequence reconstructable(geom::AngleSequence angles) {
  constexpr double kMargin = 1e-6;
  for (auto& t : angles.triples) {
    if (!std::isfinite(t.r) || !std::isfinite(t.alpha) || !std::isfinite(t.beta))
      throw Error(Errc::numeric_error, "decoder produced a non-finite structure");
    if (t.alpha < 0.0) {
      t.alpha = -t.alpha;
      t.beta = geom::wrap_angle(t.beta + std::numbers::pi);
    }
    t.alpha = std::clamp(t.alpha, kMargin, std::numbers::pi - kMargin);
    t.r = std::max(t.r, kMargin);
  }
  return angles;
}

std::vector<int> predict_residues(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t classes = std::min<std::size_t>(logits.cols(), ingest::kNumAminoAcids);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* row = logits.data.data() + i * logits.cols();
    out[i] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace vqpl::net
