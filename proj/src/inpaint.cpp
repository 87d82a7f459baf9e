// SPDX-License-Identifier: Apache-2.0
#include "vqpl/inpaint.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "vqpl/error.hpp"
#include "vqpl/log.hpp"
#include "vqpl/vq.hpp"

namespace vqpl::inpaint {

using namespace vqpl::grad;
using json = nlohmann::ordered_json;

void validate_span(std::size_t total, const Span& span) {
  if (span.length == 0 || span.start > total || span.length > total - span.start)
    throw Error(Errc::bad_span, "span (" + std::to_string(span.start) + ", " + std::to_string(span.length) +
                                    ") does not fit a sequence of " + std::to_string(total));
}

Span sample_span(std::size_t length, Rng& rng) {
  if (length < 15) throw Error(Errc::too_short, "span sampling needs at least 15 codes, got " + std::to_string(length));
  Span s;
  s.length = 5 + static_cast<std::size_t>(rng.below(length / 3 - 5 + 1));
  s.start = static_cast<std::size_t>(rng.below(length - s.length + 1));
  return s;
}

GlmLayout glm_layout(const std::vector<int>& codes, const Span& span, const Vocab& vocab) {
  validate_span(codes.size(), span);
  GlmLayout g;
  g.tokens.assign(codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(span.start));
  g.tokens.push_back(vocab.mask());
  g.tokens.insert(g.tokens.end(), codes.begin() + static_cast<std::ptrdiff_t>(span.start + span.length), codes.end());
  g.visible = g.tokens.size();
  g.targets.assign(g.visible, -1);
  g.tokens.push_back(vocab.start());
  for (std::size_t j = 0; j < span.length; ++j) {
    g.tokens.push_back(codes[span.start + j]);
    g.targets.push_back(codes[span.start + j]);
  }
  g.tokens.push_back(vocab.end());
  g.targets.push_back(vocab.end());
  g.targets.push_back(-1);
  return g;
}

std::vector<std::uint8_t> glm_mask(std::size_t total, const Span& span) {
  validate_span(total, span);
  const std::size_t visible = total - span.length + 1;
  const std::size_t n = visible + span.length + 2;
  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) allowed[i * n + j] = j < visible || (i >= visible && j < i);
  return allowed;
}

void InpaintConfig::validate() const {
  if (codebook_size < 2) throw Error(Errc::usage_error, "codebook size must be at least 2");
  if (d_model == 0 || n_heads == 0 || layers == 0 || ffn_mult == 0)
    throw Error(Errc::usage_error, "inpainter dimensions must be positive");
  if (d_model % n_heads != 0 || (d_model / n_heads) % 2 != 0)
    throw Error(Errc::odd_head_dim, "d_model / n_heads must be even");
  if (steps == 0 || batch_size == 0 || !(lr > 0.0)) throw Error(Errc::usage_error, "steps, batch and lr must be positive");
  if (weight_decay < 0.0) throw Error(Errc::usage_error, "weight decay must be non-negative");
}

json config_to_json(const InpaintConfig& c) {
  json j;
  j["codebook_size"] = c.codebook_size;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["layers"] = c.layers;
  j["ffn_mult"] = c.ffn_mult;
  j["max_len"] = c.max_len;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  return j;
}

InpaintConfig config_from_json(const nlohmann::json& j) {
  InpaintConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("codebook_size", c.codebook_size);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("layers", c.layers);
    get("ffn_mult", c.ffn_mult);
    get("max_len", c.max_len);
    get("steps", c.steps);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("inpainter config: ") + e.what());
  }
  return c;
}

InpaintModel init_model(const InpaintConfig& cfg) {
  cfg.validate();
  InpaintModel m;
  m.cfg = cfg;
  Rng rng(derive_seed(cfg.seed, 0x696e7061));
  Tensor embed({m.vocab().size(), cfg.d_model});
  for (auto& v : embed.data) v = rng.normal();
  m.params.add("inp.embed", std::move(embed));
  net::init_stack(m.params, "inp", cfg.layers, cfg.d_model, cfg.ffn_mult, rng);
  m.params.add("inp.head.w", net::init_linear(cfg.d_model, m.vocab().size(), rng));
  m.params.add("inp.head.b", Tensor({m.vocab().size()}));
  return m;
}

Var forward(const net::Bound& p, const InpaintConfig& cfg, const GlmLayout& layout, const Span& span) {
  if (layout.size() > cfg.max_len)
    throw Error(Errc::too_long, "layout of " + std::to_string(layout.size()) + " exceeds max_len " +
                                    std::to_string(cfg.max_len));
  const std::size_t total = layout.visible + span.length - 1;
  net::StackOptions opt;
  opt.n_heads = cfg.n_heads;
  opt.allowed = glm_mask(total, span);
  Var x = net::transformer(p, "inp", cfg.layers, gather(p["inp.embed"], layout.tokens), opt);
  return linear(x, p["inp.head.w"], p["inp.head.b"]);
}

Var span_loss(Var logits, const GlmLayout& layout) {
  std::vector<int> targets(layout.size(), -1);
  for (std::size_t i = layout.visible; i < layout.size(); ++i) targets[i] = layout.targets[i];
  return cross_entropy_with_logits(logits, targets);
}

namespace {

std::vector<std::string> decayed(const net::ParamStore& params) {
  std::vector<std::string> out;
  for (const auto& name : params.names())
    if (params.at(name).rank() == 2 && name != "inp.embed") out.push_back(name);
  return out;
}

}  // namespace

InpaintResult train_inpainter(const std::vector<std::vector<int>>& corpus, const InpaintConfig& cfg, std::ostream* log) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (int c : corpus[i])
      if (c < 0 || static_cast<std::size_t>(c) >= cfg.codebook_size)
        throw Error(Errc::unknown_code, "code " + std::to_string(c) + " outside codebook of " +
                                            std::to_string(cfg.codebook_size));
    if (corpus[i].size() >= 15) eligible.push_back(i);
  }
  if (eligible.empty()) throw Error(Errc::usage_error, "no token sequence has at least 15 codes");
  if (eligible.size() < corpus.size())
    log::warn(corpus.size() - eligible.size(), " sequences shorter than 15 codes skipped");

  InpaintResult result;
  InpaintModel& model = result.model;
  model = init_model(cfg);
  const auto decay = decayed(model.params);
  const double denom = static_cast<double>(std::max<std::size_t>(cfg.steps, 2) - 1);
  if (log) *log << "step,lr,loss\n";
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    Rng rng(derive_seed(cfg.seed, 0x73746570, s));
    std::map<std::string, Tensor> grads;
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& codes = corpus[eligible[rng.below(eligible.size())]];
      const Span span = sample_span(codes.size(), rng);
      const auto layout = glm_layout(codes, span, model.vocab());
      Tape tape(false);
      net::Bound p(tape, model.params, true);
      Var l = span_loss(forward(p, cfg, layout, span), layout);
      tape.backward(l);
      loss += l.value().item();
      auto g = p.grads();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (auto& [name, t] : grads) {
          const auto& o = g.at(name);
          for (std::size_t i = 0; i < t.size(); ++i) t.data[i] += o.data[i];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch_size);
    for (auto& [name, t] : grads)
      for (auto& v : t.data) v *= inv;
    loss *= inv;
    if (!std::isfinite(loss)) throw Error(Errc::numeric_error, "non-finite inpainter loss at step " + std::to_string(s));
    InpaintStep rec;
    rec.step = model.step;
    rec.lr = train::onecycle_lr(std::min(static_cast<double>(s), denom), denom, cfg.lr);
    rec.loss = loss;
    train::adamw_step(model.params, grads, model.adam, rec.lr, cfg.weight_decay, decay);
    if (log) {
      std::ostringstream line;
      line << std::setprecision(10) << rec.step << ',' << rec.lr << ',' << rec.loss << '\n';
      *log << line.str();
    }
    result.steps.push_back(rec);
    ++model.step;
  }
  return result;
}

Mode parse_mode(const std::string& s) {
  if (s == "greedy") return Mode::greedy;
  if (s == "sample") return Mode::sample;
  throw Error(Errc::usage_error, "mode must be greedy or sample, got '" + s + "'");
}

std::vector<int> generate_span(const InpaintModel& model, const std::vector<int>& codes, const Span& span, Rng& rng,
                               Mode mode) {
  validate_span(codes.size(), span);
  const std::size_t m = model.cfg.codebook_size;
  for (int c : codes)
    if (c < 0 || static_cast<std::size_t>(c) >= m)
      throw Error(Errc::unknown_code, "code " + std::to_string(c) + " outside codebook of " + std::to_string(m));
  std::vector<int> out = codes;
  for (std::size_t j = 0; j < span.length; ++j) {
    const auto layout = glm_layout(out, span, model.vocab());
    Tape tape(false);
    net::Bound p(tape, model.params, false);
    const Tensor& logits = forward(p, model.cfg, layout, span).value();
    const double* row = logits.data.data() + (layout.visible + j) * logits.cols();
    int pick = 0;
    if (mode == Mode::greedy) {
      pick = static_cast<int>(std::max_element(row, row + m) - row);
    } else {
      const double top = *std::max_element(row, row + m);
      std::vector<double> probs(m);
      double z = 0.0;
      for (std::size_t c = 0; c < m; ++c) z += probs[c] = std::exp(row[c] - top);
      for (auto& v : probs) v /= z;
      pick = vq::sample_code(probs, rng);
    }
    out[span.start + j] = pick;
  }
  return out;
}

checkpoint::Container to_container(const InpaintModel& model) {
  checkpoint::Container c;
  const auto cfg = config_to_json(model.cfg);
  c.meta["format"] = "vqpl-inpainter";
  c.meta["config"] = cfg;
  c.meta["config_hash"] = checkpoint::fnv1a_hex(cfg.dump());
  c.meta["tokenizer_hash"] = model.tokenizer_hash;
  c.meta["step"] = model.step;
  c.meta["adam_t"] = model.adam.t;
  for (const auto& name : model.params.names()) c.tensors.emplace_back(name, model.params.at(name));
  for (const auto& [name, t] : model.adam.m) c.tensors.emplace_back("adam.m/" + name, t);
  for (const auto& [name, t] : model.adam.v) c.tensors.emplace_back("adam.v/" + name, t);
  return c;
}

InpaintModel from_container(const checkpoint::Container& c) {
  if (c.meta.value("format", std::string()) != "vqpl-inpainter")
    throw Error(Errc::format_error, "checkpoint is not an inpainter model");
  InpaintModel m;
  m.cfg = config_from_json(c.meta.at("config"));
  m.step = c.meta.value("step", std::int64_t{0});
  m.adam.t = c.meta.value("adam_t", std::int64_t{0});
  m.tokenizer_hash = c.meta.value("tokenizer_hash", std::string());
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m/", 0) == 0)
      m.adam.m[name.substr(7)] = t;
    else if (name.rfind("adam.v/", 0) == 0)
      m.adam.v[name.substr(7)] = t;
    else
      m.params.add(name, t);
  }
  return m;
}

void save_model(const std::filesystem::path& path, const InpaintModel& model) {
  checkpoint::save(path, to_container(model));
}

InpaintModel load_model(const std::filesystem::path& path) { return from_container(checkpoint::load(path)); }

}  // namespace vqpl::inpaint
