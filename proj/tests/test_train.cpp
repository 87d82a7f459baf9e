// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "vqpl/error.hpp"
#include "vqpl/train.hpp"

using namespace vqpl;
using namespace vqpl::train;
using vqpl::grad::Tape;

namespace {

ingest::BackboneRecord make_record(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ingest::BackboneRecord r;
  r.id = "P" + std::to_string(seed);
  r.coords = fixtures::random_chain(n, rng);
  for (std::size_t i = 0; i < n; ++i) r.sequence.push_back(static_cast<int>(rng.below(20)));
  return r;
}

TrainConfig tiny_config(Quantizer q) {
  TrainConfig c;
  c.net.d_model = 8;
  c.net.d_code = 4;
  c.net.n_heads = 2;
  c.net.n_enc_layers = 1;
  c.net.n_dec_layers = 1;
  c.net.ffn_mult = 2;
  c.net.max_len = 64;
  c.codebook_size = 8;
  c.quantizer = q;
  c.epochs = 2;
  c.batch_size = 2;
  c.eval_every = 0;
  return c;
}

geom::AngleSequence angles_of(std::vector<geom::Triple> residues) {
  geom::AngleSequence a;
  a.triples.push_back(geom::kVirtualTriple);
  for (const auto& t : residues) a.triples.push_back(t);
  a.triples.push_back(geom::kVirtualTriple);
  return a;
}

// Per-residue structure loss written out from sines and cosines.
double oracle_struct_loss(const geom::AngleSequence& pred, const geom::AngleSequence& truth) {
  double s = 0.0;
  const std::size_t n = truth.residue_count();
  for (std::size_t i = 1; i <= n; ++i) {
    const auto& p = pred.triples[i];
    const auto& t = truth.triples[i];
    s += (p.r - t.r) * (p.r - t.r);
    s += std::pow(std::sin(p.alpha) - std::sin(t.alpha), 2) + std::pow(std::cos(p.alpha) - std::cos(t.alpha), 2);
    s += std::pow(std::sin(p.beta) - std::sin(t.beta), 2) + std::pow(std::cos(p.beta) - std::cos(t.beta), 2);
  }
  return s / static_cast<double>(n);
}

double struct_loss_value(const geom::AngleSequence& pred, const geom::AngleSequence& truth) {
  Tape t(false);
  return struct_loss(t.constant(structure_targets(pred)), truth).value().item();
}

}  // namespace

TEST_CASE("seq_loss: uniform logits, confident margin and empty supervision") {
  Tape t(false);
  const std::vector<int> targets{0, 5, 19, 7};
  const double uniform = seq_loss(t.constant(Tensor({4, 20})), targets).value().item();
  CHECK(uniform == doctest::Approx(std::log(20.0)).epsilon(1e-14));
  CHECK(uniform == doctest::Approx(2.9957).epsilon(1e-4));

  Tensor confident({3, 2});
  const std::vector<int> right{1, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) confident(i, right[i]) = 20.0;
  const double near_zero = seq_loss(t.constant(confident), right).value().item();
  CHECK(near_zero >= 0.0);
  CHECK(near_zero < 1e-8);
  CHECK(near_zero == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));

  Tensor wide({1, 20});
  wide(0, 3) = 20.0;
  CHECK(seq_loss(t.constant(wide), {3}).value().item() == doctest::Approx(std::log1p(19.0 * std::exp(-20.0))));

  CHECK(seq_loss(t.constant(Tensor({2, 20})), {-1, -1}).value().item() == 0.0);
  CHECK_THROWS_AS(seq_loss(t.constant(Tensor({2, 20})), {1}), Error);
}

TEST_CASE("struct_loss: perfect, periodic, antipodal and shape errors") {
  const auto truth = angles_of({{3.8, 1.2, -0.4}, {3.7, 2.0, 2.9}, {3.9, 0.3, -3.0}});
  CHECK(struct_loss_value(truth, truth) == 0.0);

  auto shifted = truth;
  shifted.triples[2].alpha += 2.0 * std::numbers::pi;
  shifted.triples[3].beta -= 4.0 * std::numbers::pi;
  CHECK(std::abs(struct_loss_value(shifted, truth)) < 1e-24);
  CHECK(std::abs(struct_loss_value(truth, shifted)) < 1e-24);

  const auto zero = angles_of({{3.8, 0.0, 0.5}});
  const auto half = angles_of({{3.8, std::numbers::pi, 0.5}});
  CHECK(struct_loss_value(half, zero) == doctest::Approx(4.0).epsilon(1e-15));

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<geom::Triple> a, b;
    for (int i = 0; i < 7; ++i) {
      a.push_back({3.0 + rng.uniform(), rng.uniform() * 3.0, rng.uniform() * 6.0 - 3.0});
      b.push_back({3.0 + rng.uniform(), rng.uniform() * 3.0, rng.uniform() * 6.0 - 3.0});
    }
    const auto pa = angles_of(a), pb = angles_of(b);
    CHECK(struct_loss_value(pa, pb) == doctest::Approx(oracle_struct_loss(pa, pb)).epsilon(1e-12));
  }

  Tape t(false);
  CHECK_THROWS_AS(struct_loss(t.constant(Tensor({2, 5})), truth), Error);
  CHECK_THROWS_AS(struct_loss(t.constant(Tensor({3, 4})), truth), Error);
}

TEST_CASE("adamw: zero gradient, first step and decoupled decay") {
  net::ParamStore store;
  Tensor w({2, 3});
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.1 * static_cast<double>(i) - 0.2;
  store.add("w", w);
  AdamState state;

  adamw_step(store, {{"w", Tensor({2, 3})}}, state, 1e-3, 0.0);
  CHECK(store.at("w").data == w.data);

  AdamState decay_state;
  adamw_step(store, {{"w", Tensor({2, 3})}}, decay_state, 1e-2, 0.5);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(store.at("w").data[i] == w.data[i] * (1.0 - 1e-2 * 0.5));

  net::ParamStore fresh;
  fresh.add("w", w);
  AdamState first;
  Tensor g({2, 3});
  g.data = {0.5, -2.0, 1e-3, -1e-6, 3.0, 0.0};
  adamw_step(fresh, {{"w", g}}, first, 1e-3, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double expect = w.data[i] - 1e-3 * g.data[i] / (std::abs(g.data[i]) + 1e-8);
    CHECK(fresh.at("w").data[i] == doctest::Approx(expect).epsilon(1e-12));
    if (std::abs(g.data[i]) > 1e-4) CHECK(std::abs(fresh.at("w").data[i] - w.data[i]) == doctest::Approx(1e-3));
  }
  CHECK(first.t == 1);
  CHECK_THROWS_AS(adamw_step(fresh, {{"w", Tensor({3, 2})}}, first, 1e-3, 0.0), Error);
}

TEST_CASE("decayed parameters are weight matrices outside embeddings and codebook") {
  const auto model = init_model(tiny_config(Quantizer::vanilla));
  const auto names = decayed_parameters(model.params);
  CHECK(std::find(names.begin(), names.end(), "enc.0.wq") != names.end());
  CHECK(std::find(names.begin(), names.end(), "vq.proj.w") != names.end());
  CHECK(std::find(names.begin(), names.end(), "vq.codebook") == names.end());
  CHECK(std::find(names.begin(), names.end(), "embed.token") == names.end());
  for (const auto& n : names) CHECK(model.params.at(n).rank() == 2);
}

TEST_CASE("onecycle: endpoints, apex and step validation") {
  const double peak = 3e-3;
  CHECK(onecycle_lr(0, 100, peak) == doctest::Approx(peak / 25).epsilon(1e-15));
  CHECK(onecycle_lr(30, 100, peak) == doctest::Approx(peak).epsilon(1e-15));
  CHECK(std::abs(onecycle_lr(100, 100, peak) - peak / 1e4) < 1e-12);
  CHECK(std::abs(onecycle_lr(1000, 1000, 1.0) - 1e-4) < 1e-12);
  double prev = 0.0;
  for (int s = 0; s <= 30; ++s) {
    const double lr = onecycle_lr(s, 100, peak);
    CHECK(lr > prev);
    prev = lr;
  }
  for (int s = 31; s <= 100; ++s) {
    const double lr = onecycle_lr(s, 100, peak);
    CHECK(lr < prev);
    prev = lr;
  }
  OneCycle custom{0.5, 10.0, 100.0};
  CHECK(onecycle_lr(0, 10, 1.0, custom) == doctest::Approx(0.1));
  CHECK(onecycle_lr(5, 10, 1.0, custom) == doctest::Approx(1.0));
  CHECK(onecycle_lr(10, 10, 1.0, custom) == doctest::Approx(0.01));
  CHECK_THROWS_AS(onecycle_lr(-1, 100, peak), Error);
  CHECK_THROWS_AS(onecycle_lr(101, 100, peak), Error);
}

TEST_CASE("metrics: identical prediction is perfect") {
  std::vector<ProteinMetrics> items;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto rec = make_record(10 + 7 * s, s);
    const auto angles = geom::torsion_parametrize(rec.coords);
    items.push_back(protein_metrics(rec.sequence, rec.sequence, {0, 3}, angles, angles, rec.coords, rec.coords));
  }
  for (const auto* name : {"five_residues_full.pdb"}) {
    const auto rec = ingest::parse_backbone(fixtures::read_file(fixtures::data_dir() / "fixtures" / name)).record;
    const auto angles = geom::torsion_parametrize(rec.coords);
    const auto coords = geom::torsion_reconstruct(angles);
    items.push_back(protein_metrics(rec.sequence, rec.sequence, {1}, angles, angles, coords, coords));
  }
  for (const auto& m : items) {
    CHECK(m.tm_score == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.l_r == 0.0);
    CHECK(m.max_l_beta == 0.0);
  }
  const auto r = aggregate(items);
  CHECK(r.rec == 1.0);
  CHECK(r.rec_all == 1.0);
  CHECK(r.tm_score == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : {r.l_r, r.l_alpha, r.l_beta, r.max_l_r, r.max_l_alpha, r.max_l_beta}) CHECK(v == 0.0);
  CHECK_FALSE(r.vq_loss_mean.has_value());
}

TEST_CASE("metrics: single-residue error and angle wrap") {
  const auto rec = make_record(10, 21);
  const auto truth = geom::torsion_parametrize(rec.coords);
  auto pred = truth;
  pred.triples[6].r += 0.5;
  const auto pc = geom::torsion_reconstruct(pred);
  const auto m = protein_metrics(rec.sequence, rec.sequence, {}, truth, pred, rec.coords, pc);
  CHECK(m.l_r == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(m.max_l_r == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.l_alpha == 0.0);
  CHECK(m.tm_score < 1.0);
  CHECK(m.tm_score > 0.0);

  auto a = truth, b = truth;
  a.triples[4].beta = -3.1;
  b.triples[4].beta = 3.1;
  const auto w = protein_metrics(rec.sequence, rec.sequence, {}, a, b, rec.coords, rec.coords);
  CHECK(w.max_l_beta == doctest::Approx(2.0 * std::numbers::pi - 6.2).epsilon(1e-12));
  CHECK(w.max_l_beta == doctest::Approx(0.0832).epsilon(1e-3));

  auto wrong = rec.sequence;
  wrong[2] = (wrong[2] + 1) % 20;
  const auto s = protein_metrics(rec.sequence, wrong, {2, 5}, truth, truth, rec.coords, rec.coords);
  CHECK(s.masked == 2);
  CHECK(s.masked_correct == 1);
  CHECK(s.correct == 9);

  ProteinMetrics empty_mask;
  empty_mask.residues = 4;
  empty_mask.correct = 4;
  CHECK(aggregate({empty_mask}).rec == 1.0);
  CHECK_THROWS_AS(protein_metrics(rec.sequence, {1, 2}, {}, truth, truth, rec.coords, rec.coords), Error);
}

TEST_CASE("metrics: Rec pools residues, maxima average per protein") {
  ProteinMetrics a, b;
  a.masked = 1;
  a.masked_correct = 0;
  a.max_l_r = 1.0;
  a.tm_score = 0.5;
  b.masked = 3;
  b.masked_correct = 3;
  b.max_l_r = 0.0;
  b.tm_score = 1.0;
  b.vq_loss = 2.0;
  const auto r = aggregate({a, b});
  CHECK(r.rec == doctest::Approx(0.75));
  CHECK(r.max_l_r == doctest::Approx(0.5));
  CHECK(r.tm_score == doctest::Approx(0.75));
  const auto j = report_to_json(r);
  for (const auto* k : {"Rec", "TMScore", "L_r", "L_alpha", "L_beta", "max_L_r", "max_L_alpha", "max_L_beta"})
    CHECK(j.contains(k));
}

namespace {

// Finite differences of the total loss over every parameter entry. The
// vanilla route freezes stop-gradient operands and the straight-through
// offset at the base point so the function differentiated matches the
// surrogate that backpropagation follows.
double total_loss_fd_error(Quantizer q) {
  auto cfg = tiny_config(q);
  auto model = init_model(cfg);
  const auto rec = make_record(6, 77);
  ingest::CorruptionConfig cc;
  cc.mask_ratio = 0.34;
  cc.noise_sigma = 0.1;
  cc.seed = 5;
  const auto input = ingest::corrupt(rec, cc);
  REQUIRE(input.mask_positions.size() == 2);
  const auto truth = geom::torsion_parametrize(rec.coords);
  const double temperature = 0.7;

  std::map<std::string, Tensor> analytic;
  Tensor base_hhat, base_codes;
  std::vector<int> indices;
  {
    Tape t(false);
    net::Bound p(t, model.params, true);
    auto f = forward_sample(p, cfg, input, rec.sequence, truth, temperature);
    t.backward(f.total);
    analytic = p.grads();
    base_hhat = f.hhat;
    indices = f.indices;
    base_codes = grad::gather(p["vq.codebook"], indices).value();
  }

  auto surrogate = [&]() {
    Tape t(false);
    net::Bound p(t, model.params, false);
    grad::Var h = net::encode(p, cfg.net, net::fuse_embed(p, input.masked_sequence, input.angles));
    grad::Var hhat = vq::project_sphere(p, h);
    double extra = 0.0;
    grad::Var z;
    if (q == Quantizer::soft) {
      grad::Var a = grad::softmax(grad::scale(grad::matmul(hhat, grad::transpose(p["vq.codebook"])), 1.0 / temperature));
      z = grad::matmul(a, p["vq.codebook"]);
    } else {
      Tensor offset = base_codes;
      for (std::size_t i = 0; i < offset.size(); ++i) offset.data[i] -= base_hhat.data[i];
      z = grad::add(hhat, t.constant(offset));
      grad::Var e = grad::gather(p["vq.codebook"], indices);
      grad::Var cb = grad::sub(t.constant(base_hhat), e);
      grad::Var cm = grad::sub(hhat, t.constant(base_codes));
      extra = (grad::sum(grad::mul(cb, cb)).value().item() +
               cfg.beta_commit * grad::sum(grad::mul(cm, cm)).value().item()) /
              6.0;
    }
    const auto d = net::decode(p, cfg.net, z);
    return seq_loss(d.logits, rec.sequence).value().item() + struct_loss(d.structure, truth).value().item() + extra;
  };

  double worst = 0.0;
  const double h = 1e-6;
  for (const auto& name : model.params.names()) {
    Tensor& w = model.params.at(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w.data[i];
      w.data[i] = keep + h;
      const double up = surrogate();
      w.data[i] = keep - h;
      const double down = surrogate();
      w.data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.at(name).data[i];
      if (std::abs(a) < 1e-7 && std::abs(numeric) < 1e-7) continue;
      const double err = grad::relative_error(a, numeric);
      if (err > worst) worst = err;
      if (err >= 1e-4) MESSAGE(name << "[" << i << "] analytic " << a << " numeric " << numeric);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("total loss gradient matches finite differences, vanilla") {
  const double e = total_loss_fd_error(Quantizer::vanilla);
  MESSAGE("vanilla worst relative error " << e);
  CHECK(e < 1e-4);
}

TEST_CASE("total loss gradient matches finite differences, soft") {
  const double e = total_loss_fd_error(Quantizer::soft);
  MESSAGE("soft worst relative error " << e);
  CHECK(e < 1e-4);
}

TEST_CASE("vanilla: reconstruction loss leaves exact zeros on the codebook") {
  auto cfg = tiny_config(Quantizer::vanilla);
  const auto model = init_model(cfg);
  const auto rec = make_record(9, 3);
  const auto input = ingest::corrupt(rec, {});
  const auto truth = geom::torsion_parametrize(rec.coords);
  Tape t(false);
  net::Bound p(t, model.params, true);
  auto f = forward_sample(p, cfg, input, rec.sequence, truth, 1.0);
  REQUIRE(f.has_vq);
  t.backward(grad::add(f.seq, f.structure));
  const auto g = p.grads();
  for (double v : g.at("vq.codebook").data) CHECK(v == 0.0);
  double enc = 0.0;
  for (double v : g.at("enc.0.wq").data) enc += std::abs(v);
  CHECK(enc > 0.0);
}

TEST_CASE("forward_sample: soft strategy has no vq term") {
  auto cfg = tiny_config(Quantizer::soft);
  const auto model = init_model(cfg);
  const auto rec = make_record(9, 3);
  Tape t(false);
  net::Bound p(t, model.params, true);
  auto f = forward_sample(p, cfg, ingest::corrupt(rec, {}), rec.sequence, geom::torsion_parametrize(rec.coords), 1.0);
  CHECK_FALSE(f.has_vq);
  CHECK(f.total.value().item() == f.seq.value().item() + f.structure.value().item());
}

TEST_CASE("training: overfit one protein") {
  TrainConfig cfg;
  cfg.net.d_model = 64;
  cfg.net.d_code = 16;
  cfg.net.n_heads = 4;
  cfg.net.n_enc_layers = 4;
  cfg.net.n_dec_layers = 4;
  cfg.net.max_len = 64;
  cfg.codebook_size = 64;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.lr = 3e-3;
  cfg.eval_every = 0;
  cfg.seed = 11;
  const std::vector<ingest::BackboneRecord> data{make_record(24, 8)};
  const auto result = train_reconstruction(data, cfg);
  REQUIRE(result.steps.size() == 200);
  CHECK(result.model.step == 200);
  std::vector<double> quarter(4, 0.0);
  for (std::size_t i = 0; i < result.epochs.size(); ++i) quarter[i / 50] += result.epochs[i].mean_loss / 50.0;
  MESSAGE("quarter means " << quarter[0] << " " << quarter[1] << " " << quarter[2] << " " << quarter[3]);
  for (int i = 1; i < 4; ++i) CHECK(quarter[i] < quarter[i - 1]);
  const auto report = evaluate(result.model, data);
  MESSAGE("Rec " << report.rec << " Rec_all " << report.rec_all << " TM " << report.tm_score);
  CHECK(report.rec == 1.0);
  CHECK(report.vq_loss_mean.has_value());
  for (const auto& s : result.steps) CHECK(s.vq_loss.has_value());
}

TEST_CASE("training: determinism, soft schedule and log format") {
  std::vector<ingest::BackboneRecord> data;
  for (std::uint64_t s = 0; s < 5; ++s) data.push_back(make_record(8 + s, 100 + s));

  for (auto q : {Quantizer::vanilla, Quantizer::soft}) {
    auto cfg = tiny_config(q);
    cfg.epochs = 3;
    std::ostringstream log_a, log_b;
    const auto a = train_reconstruction(data, cfg, {&log_a, {}});
    const auto b = train_reconstruction(data, cfg, {&log_b, {}});
    CHECK(checkpoint::to_bytes(to_container(a.model)) == checkpoint::to_bytes(to_container(b.model)));
    CHECK(log_a.str() == log_b.str());
    CHECK(log_a.str().rfind("step,lr,T,seq_loss,struct_loss,vq_loss\n", 0) == 0);
    REQUIRE(a.steps.size() == 9);
    if (q == Quantizer::soft) {
      CHECK(*a.steps.front().temperature == 1.0);
      CHECK(*a.steps.back().temperature == 1e-5);
      for (const auto& s : a.steps) CHECK_FALSE(s.vq_loss.has_value());
      std::istringstream rows(log_a.str());
      std::string line;
      std::getline(rows, line);
      std::getline(rows, line);
      CHECK(line.back() == ',');
    } else {
      for (const auto& s : a.steps) CHECK_FALSE(s.temperature.has_value());
    }
    cfg.seed = 99;
    const auto c = train_reconstruction(data, cfg);
    CHECK(checkpoint::to_bytes(to_container(a.model)) != checkpoint::to_bytes(to_container(c.model)));
  }
}

TEST_CASE("training: only codes idle for a full pass are revived") {
  std::vector<ingest::BackboneRecord> data;
  for (std::uint64_t s = 0; s < 4; ++s) data.push_back(make_record(10, 300 + s));
  auto cfg = tiny_config(Quantizer::vanilla);
  cfg.codebook_size = 32;
  cfg.batch_size = 4;
  cfg.epochs = 4;
  const Tensor initial = init_model(cfg).params.at("vq.codebook");

  auto moved_unused = [&](double tau) {
    cfg.ema_tau = tau;
    const auto r = train_reconstruction(data, cfg);
    const auto& cb = r.model.params.at("vq.codebook");
    std::size_t unused = 0, moved = 0;
    for (std::size_t i = 0; i < cb.rows(); ++i) {
      if (r.model.usage[i] != 0) continue;
      ++unused;
      double d = 0.0;
      for (std::size_t j = 0; j < cb.cols(); ++j) d = std::max(d, std::abs(cb(i, j) - initial(i, j)));
      moved += d > 1e-9;
    }
    REQUIRE(unused > 0);
    return moved;
  };
  // never-assigned codes get no gradient, so only revival can move them
  CHECK(moved_unused(1.0) == 0);
  CHECK(moved_unused(0.95) > 0);
}

TEST_CASE("training: codebook rows stay unit norm and errors propagate") {
  std::vector<ingest::BackboneRecord> data;
  for (std::uint64_t s = 0; s < 4; ++s) data.push_back(make_record(10, 200 + s));
  auto cfg = tiny_config(Quantizer::vanilla);
  const auto r = train_reconstruction(data, cfg);
  const auto& cb = r.model.params.at("vq.codebook");
  for (std::size_t i = 0; i < cb.rows(); ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < cb.cols(); ++j) n2 += cb(i, j) * cb(i, j);
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::uint64_t used = 0;
  for (auto u : r.model.usage) used += u;
  CHECK(used == 2 * 40);

  CHECK_THROWS_AS(train_reconstruction({}, cfg), Error);
  auto bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(train_reconstruction(data, bad), Error);
  bad = cfg;
  bad.lr = std::numeric_limits<double>::infinity();
  try {
    train_reconstruction(data, bad);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::numeric_error);
  }
}

TEST_CASE("threads do not change the result") {
  std::vector<ingest::BackboneRecord> data;
  for (std::uint64_t s = 0; s < 6; ++s) data.push_back(make_record(9, 300 + s));
  auto cfg = tiny_config(Quantizer::vanilla);
  cfg.batch_size = 3;
  const auto one = train_reconstruction(data, cfg);
  cfg.threads = 3;
  const auto three = train_reconstruction(data, cfg);
  auto bytes = [](Model m) {
    m.cfg.threads = 1;
    return checkpoint::to_bytes(to_container(m));
  };
  CHECK(bytes(one.model) == bytes(three.model));
}

TEST_CASE("checkpoint roundtrip is bit exact and resumable") {
  std::vector<ingest::BackboneRecord> data;
  for (std::uint64_t s = 0; s < 3; ++s) data.push_back(make_record(10, 400 + s));
  auto cfg = tiny_config(Quantizer::vanilla);
  const auto trained = train_reconstruction(data, cfg).model;
  const auto bytes = checkpoint::to_bytes(to_container(trained));
  const auto back = from_container(checkpoint::from_bytes(bytes));
  CHECK(checkpoint::to_bytes(to_container(back)) == bytes);
  CHECK(back.step == trained.step);
  CHECK(back.adam.t == trained.adam.t);
  CHECK(back.usage == trained.usage);

  const auto dir = fixtures::temp_dir("train_ckpt");
  save_model(dir / "m.vqpt", trained);
  const auto loaded = load_model(dir / "m.vqpt");
  CHECK(checkpoint::to_bytes(to_container(loaded)) == bytes);
  const auto ra = evaluate(trained, data), rb = evaluate(loaded, data);
  CHECK(ra.tm_score == rb.tm_score);
  CHECK(ra.rec == rb.rec);

  auto a = train_reconstruction(trained, data);
  auto b = train_reconstruction(loaded, data);
  CHECK(checkpoint::to_bytes(to_container(a.model)) == checkpoint::to_bytes(to_container(b.model)));
  CHECK(a.model.epochs_done == 4);

  checkpoint::Container other;
  other.meta["format"] = "something-else";
  CHECK_THROWS_AS(from_container(other), Error);
  CHECK_THROWS_AS(checkpoint::from_bytes(bytes.substr(0, bytes.size() - 3)), Error);
}

TEST_CASE("config json roundtrip") {
  auto cfg = tiny_config(Quantizer::soft);
  cfg.corruption.mask_ratio = 0.2;
  cfg.lr = 2.5e-4;
  const auto j = config_to_json(cfg);
  const auto back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(config_to_json(back).dump() == j.dump());
  CHECK_THROWS_AS(parse_quantizer("hard"), Error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"lr": "fast"})")), Error);
}

TEST_CASE("tokenize and detokenize") {
  auto cfg = tiny_config(Quantizer::vanilla);
  const auto model = init_model(cfg);
  const auto rec = make_record(12, 9);
  const auto codes = tokenize(model, rec);
  CHECK(codes.size() == 12);
  for (int c : codes) CHECK((c >= 0 && c < 8));
  const auto p = detokenize(model, codes);
  CHECK(p.coords.size() == 12);
  CHECK(p.sequence.size() == 12);
  CHECK_THROWS_AS(detokenize(model, {}), Error);
  CHECK_THROWS_AS(detokenize(model, {1, 2, 3}), Error);
  try {
    detokenize(model, {1, 2, 3, 8});
    FAIL("expected unknown code");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_code);
  }
  auto soft_cfg = tiny_config(Quantizer::soft);
  const auto soft = init_model(soft_cfg);
  Rng r1(5), r2(5);
  CHECK(tokenize(soft, rec, &r1) == tokenize(soft, rec, &r2));
}
