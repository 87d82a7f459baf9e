// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "vqpl/geom.hpp"
#include "vqpl/grad.hpp"
#include "vqpl/rng.hpp"

namespace vqpl::net {

using grad::Tape;
using grad::Tensor;
using grad::Var;

struct NetConfig {
  std::size_t d_model = 64;
  std::size_t d_code = 32;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 4;
  std::size_t n_dec_layers = 4;
  std::size_t n_vocab = 23;
  std::size_t max_len = 1024;
  std::size_t ffn_mult = 4;
  double dropout = 0.0;

  std::size_t head_dim() const { return n_heads ? d_model / n_heads : 0; }
  void validate() const;
};

/// Named parameter tensors in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t parameter_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as leaves.
class Bound {
 public:
  Bound(Tape& tape, const ParamStore& store, bool trainable);
  Var operator[](const std::string& name) const;
  /// Substitutes another variable for a parameter.
  void replace(const std::string& name, Var v);
  Tape& tape() const { return *tape_; }
  /// Gradients of every bound parameter after backward, in store order.
  std::map<std::string, Tensor> grads() const;

 private:
  Tape* tape_;
  std::vector<std::string> order_;
  std::map<std::string, Var> vars_;
};

/// Adds encoder, decoder and head parameters under "embed.", "enc.",
/// "dec." and "head.". Weights are drawn from N(0, 1/fan_in).
void init_params(ParamStore& store, const NetConfig& cfg, Rng& rng);

/// Adds a transformer stack with the given prefix (used by the inpainter).
void init_stack(ParamStore& store, const std::string& prefix, std::size_t layers, std::size_t d_model,
                std::size_t ffn_mult, Rng& rng);
Tensor init_linear(std::size_t in, std::size_t out, Rng& rng);

/// (r, sin a, cos a, sin b, cos b) per residue from entries 1..n of an angle
/// sequence; mask_rows flags residues carrying the mask sentinel.
Tensor structure_features(const geom::AngleSequence& angles, std::vector<std::uint8_t>* mask_rows = nullptr);

/// h^s + h^x.
Var fuse_embed(const Bound& p, const std::vector<int>& tokens, const geom::AngleSequence& angles);

struct AttentionProbe {
  std::vector<std::vector<double>> probs;  // per layer, n_heads*n*n
  std::vector<Tensor> q;                    // per layer, after rotation
  std::vector<Tensor> k;
};

struct StackOptions {
  std::size_t n_heads = 4;
  std::vector<double> positions;      // default 0..n-1
  std::vector<std::uint8_t> allowed;  // n*n, empty for full attention
  double dropout = 0.0;
  Rng* rng = nullptr;  // dropout is active only when set
  AttentionProbe* probe = nullptr;
};

/// Pre-norm RoPE transformer: layers of attention and GELU feed-forward with
/// residual connections, followed by a final layer norm.
Var transformer(const Bound& p, const std::string& prefix, std::size_t layers, Var x, const StackOptions& opt);

/// Applies RoPE to (n, n_heads*d_head) vectors at the given positions.
Tensor rope_rotate(const Tensor& x, std::size_t n_heads, const std::vector<double>& positions);

Var encode(const Bound& p, const NetConfig& cfg, Var h_sx, Rng* dropout_rng = nullptr,
           AttentionProbe* probe = nullptr);

struct Decoded {
  Var logits;     // (n, n_vocab)
  Var structure;  // (n, 5): softplus r, sin a, cos a, sin b, cos b
};

Decoded decode(const Bound& p, const NetConfig& cfg, Var z, Rng* dropout_rng = nullptr);

/// Key-padded batch encoding: every sample is padded to the longest length
/// and padded keys are excluded from attention. Returns the valid rows.
std::vector<Tensor> encode_padded(const ParamStore& store, const NetConfig& cfg,
                                  const std::vector<std::vector<int>>& tokens,
                                  const std::vector<geom::AngleSequence>& angles);

/// Triples decoded from structure outputs via atan2; returns n + 2 entries
/// with virtual boundaries.
geom::AngleSequence decode_angles(const Tensor& structure);

/// Maps decoded triples into the domain accepted by torsion_reconstruct:
/// a negative bond angle is reflected with a half-turn of the dihedral, and
/// angles are clamped strictly inside (0, pi).
geom::AngleSequence reconstructable(geom::AngleSequence angles);

/// Argmax over the 20 amino-acid logits of each row.
std::vector<int> predict_residues(const Tensor& logits);

}  // namespace vqpl::net
