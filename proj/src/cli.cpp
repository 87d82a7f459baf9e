// SPDX-License-Identifier: Apache-2.0
#include "vqpl/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "vqpl/error.hpp"
#include "vqpl/geom.hpp"
#include "vqpl/ingest.hpp"
#include "vqpl/inpaint.hpp"
#include "vqpl/log.hpp"
#include "vqpl/train.hpp"
#include "vqpl/vq.hpp"

namespace vqpl::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Seed for all randomness")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

/// Resolved options of the active subcommand in the --config format.
std::string snapshot(const CLI::App& app, const CLI::App* sub) {
  std::istringstream all(app.config_to_str(true, false));
  std::ostringstream out;
  const std::string prefix = sub->get_name() + ".";
  std::string line;
  while (std::getline(all, line))
    if (line.rfind(prefix, 0) == 0) out << line << '\n';
  return out.str();
}

std::string safe_name(const std::string& id, std::size_t index) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (s.empty() || s == "." || s == "..") s = "protein_" + std::to_string(index);
  return s;
}

void write_structures(const fs::path& dir, const std::vector<std::string>& ids,
                      const std::vector<train::Prediction>& preds) {
  fs::create_directories(dir);
  std::ostringstream fasta;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ingest::BackboneRecord r{ids[i], preds[i].sequence, preds[i].coords};
    write_text(dir / (safe_name(ids[i], i) + ".pdb"), ingest::write_ca_pdb(r));
    fasta << '>' << ids[i] << '\n' << ingest::sequence_to_string(preds[i].sequence) << '\n';
  }
  write_text(dir / "sequences.fasta", fasta.str());
}

struct TrainArgs {
  fs::path in, out, val, log, resume;
  train::TrainConfig cfg;
  std::string quantizer = "vanilla";
};

CLI::App* add_train(CLI::App& app, TrainArgs& a, Common& c) {
  auto* s = app.add_subcommand("train", "Train the tokenizer on protein JSON lines");
  auto& cfg = a.cfg;
  s->add_option("--in", a.in, "Training proteins")->required();
  s->add_option("--out", a.out, "Checkpoint path, rewritten after every epoch")->required();
  s->add_option("--val", a.val, "Validation proteins evaluated after every epoch");
  s->add_option("--log", a.log, "Training log CSV (default: <out>.log.csv)");
  s->add_option("--resume", a.resume, "Continue from this checkpoint");
  s->add_option("--quantizer", a.quantizer, "vanilla or soft")
      ->capture_default_str()
      ->check(CLI::IsMember({"vanilla", "soft"}));
  s->add_option("--codebook-size", cfg.codebook_size)->capture_default_str();
  s->add_option("--epochs", cfg.epochs)->capture_default_str();
  s->add_option("--batch-size", cfg.batch_size)->capture_default_str();
  s->add_option("--lr", cfg.lr, "Peak learning rate")->capture_default_str();
  s->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
  s->add_option("--beta-commit", cfg.beta_commit)->capture_default_str();
  s->add_option("--grad-clip", cfg.grad_clip)->capture_default_str();
  s->add_option("--mask-ratio", cfg.corruption.mask_ratio)->capture_default_str();
  s->add_option("--noise-sigma", cfg.corruption.noise_sigma)->capture_default_str();
  s->add_option("--d-model", cfg.net.d_model)->capture_default_str();
  s->add_option("--d-code", cfg.net.d_code)->capture_default_str();
  s->add_option("--heads", cfg.net.n_heads)->capture_default_str();
  s->add_option("--enc-layers", cfg.net.n_enc_layers)->capture_default_str();
  s->add_option("--dec-layers", cfg.net.n_dec_layers)->capture_default_str();
  s->add_option("--ffn-mult", cfg.net.ffn_mult)->capture_default_str();
  s->add_option("--max-len", cfg.net.max_len)->capture_default_str();
  s->add_option("--dropout", cfg.net.dropout)->capture_default_str();
  s->add_option("--ema-k", cfg.ema_k)->capture_default_str();
  s->add_option("--ema-eps", cfg.ema_eps)->capture_default_str();
  s->add_option("--ema-tau", cfg.ema_tau)->capture_default_str();
  s->add_option("--warmup-fraction", cfg.schedule.warmup_fraction)->capture_default_str();
  s->add_option("--eval-every", cfg.eval_every, "Epochs between evaluations, 0 for none")->capture_default_str();
  add_common(s, c);
  return s;
}

int do_train(const CLI::App& app, const CLI::App* sub, TrainArgs& a, const Common& c, std::ostream& out) {
  auto cfg = a.cfg;
  cfg.quantizer = train::parse_quantizer(a.quantizer);
  cfg.seed = c.seed;
  cfg.corruption.seed = c.seed;
  cfg.eval_seed = derive_seed(c.seed, 0x6576616c);
  cfg.threads = c.threads;
  cfg.validate();
  const auto data = ingest::read_proteins(a.in);
  std::vector<ingest::BackboneRecord> val;
  if (!a.val.empty()) val = ingest::read_proteins(a.val);
  write_text(a.out.string() + ".config", snapshot(app, sub));

  train::Model model;
  if (!a.resume.empty()) {
    model = train::load_model(a.resume);
    const auto keep_net = model.cfg.net;
    const auto keep_m = model.cfg.codebook_size;
    model.cfg = cfg;
    model.cfg.net = keep_net;
    model.cfg.codebook_size = keep_m;
  } else {
    model = train::init_model(cfg);
  }
  const fs::path log_path = a.log.empty() ? fs::path(a.out.string() + ".log.csv") : a.log;
  auto log = open_out(log_path);
  auto epochs = open_out(a.out.string() + ".epochs.jsonl");
  train::TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const train::Model& m, const train::EpochSummary& s) {
    train::save_model(a.out, m);
    nlohmann::ordered_json j;
    j["epoch"] = s.epoch;
    j["mean_loss"] = s.mean_loss;
    if (s.report) j["train"] = train::report_to_json(*s.report);
    if (!val.empty()) j["val"] = train::report_to_json(train::evaluate(m, val, nullptr, c.threads));
    epochs << j.dump() << '\n';
    epochs.flush();
  };
  const auto result = train::train_reconstruction(std::move(model), data, hooks);
  out << "trained " << result.steps.size() << " steps, checkpoint " << a.out.string() << '\n';
  return ok;
}

struct EvalArgs {
  fs::path checkpoint, in, out, per_protein;
};

int do_eval(const CLI::App& app, const CLI::App* sub, const EvalArgs& a, const Common& c, std::ostream& out) {
  auto model = train::load_model(a.checkpoint);
  model.cfg.eval_seed = c.seed;
  const auto data = ingest::read_proteins(a.in);
  std::vector<train::ProteinMetrics> items;
  const auto report = train::evaluate(model, data, &items, c.threads);
  const std::string text = train::report_to_json(report).dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
    write_text(a.out.string() + ".config", snapshot(app, sub));
  }
  if (!a.per_protein.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < data.size(); ++i) {
      nlohmann::ordered_json j = train::report_to_json(train::aggregate({items[i]}));
      j.erase("proteins");
      j = nlohmann::ordered_json{{"id", data[i].id}, {"metrics", j}};
      os << j.dump() << '\n';
    }
    write_text(a.per_protein, os.str());
  }
  return ok;
}

struct TokenizeArgs {
  fs::path checkpoint, in, out;
  bool sample = false;
};

int do_tokenize(const CLI::App& app, const CLI::App* sub, const TokenizeArgs& a, const Common& c, std::ostream& out) {
  const auto model = train::load_model(a.checkpoint);
  const auto data = ingest::read_proteins(a.in);
  std::vector<vq::TokenRecord> tokens(data.size());
  train::parallel_for(data.size(), c.threads, [&](std::size_t i) {
    Rng rng(derive_seed(c.seed, i));
    tokens[i] = {data[i].id, train::tokenize(model, data[i], a.sample ? &rng : nullptr)};
  });
  vq::write_tokens(a.out, tokens);
  write_text(a.out.string() + ".config", snapshot(app, sub));
  out << "tokenized " << tokens.size() << " proteins\n";
  return ok;
}

struct DetokenizeArgs {
  fs::path checkpoint, in, out_dir;
};

int do_detokenize(const CLI::App& app, const CLI::App* sub, const DetokenizeArgs& a, const Common& c,
                  std::ostream& out) {
  const auto model = train::load_model(a.checkpoint);
  const auto tokens = vq::read_tokens(a.in);
  std::vector<train::Prediction> preds(tokens.size());
  std::vector<std::string> ids;
  for (const auto& t : tokens) ids.push_back(t.id);
  train::parallel_for(tokens.size(), c.threads, [&](std::size_t i) { preds[i] = train::detokenize(model, tokens[i].codes); });
  write_structures(a.out_dir, ids, preds);
  write_text(a.out_dir / "detokenize.config", snapshot(app, sub));
  out << "wrote " << preds.size() << " structures to " << a.out_dir.string() << '\n';
  return ok;
}

struct RoundtripArgs {
  fs::path in, out;
  double tolerance = 1e-4;
};

int do_roundtrip(const CLI::App& app, const CLI::App* sub, const RoundtripArgs& a, const Common& c,
                 std::ostream& out) {
  const auto data = ingest::read_proteins(a.in);
  std::vector<double> rmsd(data.size()), angle_err(data.size());
  train::parallel_for(data.size(), c.threads, [&](std::size_t i) {
    const auto angles = geom::torsion_parametrize(data[i].coords);
    const auto coords = geom::torsion_reconstruct(angles);
    rmsd[i] = geom::kabsch(coords, data[i].coords).rmsd;
    const auto again = geom::torsion_parametrize(coords);
    double worst = 0.0;
    for (std::size_t k = 0; k < angles.triples.size(); ++k) {
      worst = std::max(worst, std::abs(angles.triples[k].r - again.triples[k].r));
      worst = std::max(worst, std::abs(geom::wrap_angle(angles.triples[k].alpha - again.triples[k].alpha)));
      worst = std::max(worst, std::abs(geom::wrap_angle(angles.triples[k].beta - again.triples[k].beta)));
    }
    angle_err[i] = worst;
  });
  std::ostringstream table;
  table << "id\tlength\trmsd\tmax_angle_error\tstatus\n";
  bool all_ok = true;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool pass = rmsd[i] < a.tolerance;
    all_ok = all_ok && pass;
    table << data[i].id << '\t' << data[i].coords.size() << '\t' << std::scientific << std::setprecision(3) << rmsd[i]
          << '\t' << angle_err[i] << '\t' << (pass ? "ok" : "FAIL") << '\n';
  }
  out << table.str();
  if (!a.out.empty()) {
    write_text(a.out, table.str());
    write_text(a.out.string() + ".config", snapshot(app, sub));
  }
  return all_ok ? ok : numeric;
}

struct SplitArgs {
  fs::path in, out_dir;
  std::string ratios = "95,2,3";
};

int do_split(const CLI::App& app, const CLI::App* sub, const SplitArgs& a, const Common& c, std::ostream& out) {
  const auto ratios = ingest::parse_ratios(a.ratios);
  std::ifstream in(a.in, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + a.in.string());
  std::vector<std::string> lines, groups;
  bool grouped = false;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format_error, a.in.string() + ": " + e.what());
    }
    std::string g = std::to_string(lines.size());
    if (j.contains("group") && j["group"].is_string()) {
      g = "g:" + j["group"].get<std::string>();
      grouped = true;
    }
    groups.push_back(g);
    lines.push_back(line);
  }
  const auto idx = ingest::split_indices(lines.size(), ratios, c.seed, grouped ? groups : std::vector<std::string>{});
  auto emit = [&](const char* name, const std::vector<std::size_t>& which) {
    std::ostringstream os;
    for (auto i : which) os << lines[i] << '\n';
    write_text(a.out_dir / name, os.str());
  };
  emit("train.jsonl", idx.train);
  emit("val.jsonl", idx.val);
  emit("test.jsonl", idx.test);
  write_text(a.out_dir / "split.config", snapshot(app, sub));
  out << "train " << idx.train.size() << ", val " << idx.val.size() << ", test " << idx.test.size() << '\n';
  return ok;
}

struct InpainterArgs {
  fs::path in, out, tokenizer, log;
  inpaint::InpaintConfig cfg;
};

int do_train_inpainter(const CLI::App& app, const CLI::App* sub, InpainterArgs& a, const Common& c,
                       std::ostream& out) {
  auto cfg = a.cfg;
  cfg.seed = c.seed;
  std::string hash;
  if (!a.tokenizer.empty()) {
    const auto ck = checkpoint::load(a.tokenizer);
    if (ck.meta.value("format", std::string()) != "vqpl-tokenizer")
      throw Error(Errc::format_error, a.tokenizer.string() + " is not a tokenizer checkpoint");
    cfg.codebook_size = ck.tensor("vq.codebook").rows();
    hash = ck.meta.value("config_hash", std::string());
  }
  const auto records = vq::read_tokens(a.in);
  std::vector<std::vector<int>> corpus;
  for (const auto& r : records) corpus.push_back(r.codes);
  write_text(a.out.string() + ".config", snapshot(app, sub));
  auto log = open_out(a.log.empty() ? fs::path(a.out.string() + ".log.csv") : a.log);
  auto result = inpaint::train_inpainter(corpus, cfg, &log);
  result.model.tokenizer_hash = hash;
  inpaint::save_model(a.out, result.model);
  out << "trained inpainter for " << result.steps.size() << " steps, final loss " << result.steps.back().loss << '\n';
  return ok;
}

struct InpaintArgs {
  fs::path checkpoint, in, out, tokenizer, decode_dir;
  std::vector<std::size_t> span;
  std::string mode = "greedy";
};

int do_inpaint(const CLI::App& app, const CLI::App* sub, const InpaintArgs& a, const Common& c, std::ostream& out) {
  const auto model = inpaint::load_model(a.checkpoint);
  const auto mode = inpaint::parse_mode(a.mode);
  const auto records = vq::read_tokens(a.in);
  std::vector<std::optional<inpaint::Span>> spans(records.size());
  std::vector<std::vector<int>> completed(records.size());
  train::parallel_for(records.size(), c.threads, [&](std::size_t i) {
    Rng rng(derive_seed(c.seed, i));
    completed[i] = records[i].codes;
    if (!a.span.empty())
      spans[i] = inpaint::Span{a.span[0], a.span[1]};
    else if (records[i].codes.size() >= 15)
      spans[i] = inpaint::sample_span(records[i].codes.size(), rng);
    if (spans[i]) completed[i] = inpaint::generate_span(model, records[i].codes, *spans[i], rng, mode);
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < records.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = records[i].id;
    j["codes"] = completed[i];
    if (spans[i])
      j["span"] = {spans[i]->start, spans[i]->length};
    else
      log::warn(records[i].id, ": fewer than 15 codes, copied unchanged");
    os << j.dump() << '\n';
  }
  write_text(a.out, os.str());
  write_text(a.out.string() + ".config", snapshot(app, sub));
  if (!a.decode_dir.empty()) {
    if (a.tokenizer.empty()) throw Error(Errc::usage_error, "--decode-dir needs --tokenizer");
    const auto tok = train::load_model(a.tokenizer);
    if (!model.tokenizer_hash.empty() && checkpoint::fnv1a_hex(train::config_to_json(tok.cfg).dump()) != model.tokenizer_hash)
      log::warn("tokenizer checkpoint differs from the one the inpainter was trained on");
    std::vector<train::Prediction> preds(records.size());
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.id);
    train::parallel_for(records.size(), c.threads, [&](std::size_t i) { preds[i] = train::detokenize(tok, completed[i]); });
    write_structures(a.decode_dir, ids, preds);
  }
  out << "inpainted " << records.size() << " sequences\n";
  return ok;
}

int exit_for(const Error& e) {
  switch (error_class(e.code())) {
    case ErrorClass::usage: return usage;
    case ErrorClass::numeric: return numeric;
    case ErrorClass::data: return data;
  }
  return data;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"vqpl: protein backbone tokenizer, reconstruction training and code-space inpainting"};
  app.set_config("--config", "", "key = value file; keys are <command>.<option>");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  Common common;

  TrainArgs train_args;
  auto* train_cmd = add_train(app, train_args, common);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate reconstruction metrics");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--in", eval_args.in)->required();
  eval_cmd->add_option("--out", eval_args.out, "Report JSON (default: stdout)");
  eval_cmd->add_option("--per-protein", eval_args.per_protein, "Per-protein metrics as JSON lines");
  add_common(eval_cmd, common);

  TokenizeArgs tok_args;
  auto* tok_cmd = app.add_subcommand("tokenize", "Convert proteins to code sequences");
  tok_cmd->add_option("--checkpoint", tok_args.checkpoint)->required();
  tok_cmd->add_option("--in", tok_args.in)->required();
  tok_cmd->add_option("--out", tok_args.out)->required();
  tok_cmd->add_flag("--sample", tok_args.sample, "Sample codes from the soft assignment");
  add_common(tok_cmd, common);

  DetokenizeArgs detok_args;
  auto* detok_cmd = app.add_subcommand("detokenize", "Decode code sequences to CA-only PDB files and FASTA");
  detok_cmd->add_option("--checkpoint", detok_args.checkpoint)->required();
  detok_cmd->add_option("--in", detok_args.in)->required();
  detok_cmd->add_option("--out-dir", detok_args.out_dir)->required();
  add_common(detok_cmd, common);

  RoundtripArgs rt_args;
  auto* rt_cmd = app.add_subcommand("roundtrip-check", "Angle roundtrip RMSD per protein");
  rt_cmd->add_option("--in", rt_args.in)->required();
  rt_cmd->add_option("--out", rt_args.out, "Also write the table here");
  rt_cmd->add_option("--tolerance", rt_args.tolerance, "RMSD limit in Angstrom")->capture_default_str();
  add_common(rt_cmd, common);

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Seeded train/val/test split of protein JSON lines");
  split_cmd->add_option("--in", split_args.in)->required();
  split_cmd->add_option("--out-dir", split_args.out_dir)->required();
  split_cmd->add_option("--split", split_args.ratios, "train,val,test ratios")->capture_default_str();
  add_common(split_cmd, common);

  InpainterArgs inp_args;
  auto* inp_train_cmd = app.add_subcommand("train-inpainter", "Train the span inpainter on code sequences");
  inp_train_cmd->add_option("--in", inp_args.in, "Token JSON lines")->required();
  inp_train_cmd->add_option("--out", inp_args.out)->required();
  inp_train_cmd->add_option("--tokenizer", inp_args.tokenizer, "Tokenizer checkpoint (sets the codebook size)");
  inp_train_cmd->add_option("--log", inp_args.log, "Loss CSV (default: <out>.log.csv)");
  inp_train_cmd->add_option("--codebook-size", inp_args.cfg.codebook_size)->capture_default_str();
  inp_train_cmd->add_option("--steps", inp_args.cfg.steps)->capture_default_str();
  inp_train_cmd->add_option("--batch-size", inp_args.cfg.batch_size)->capture_default_str();
  inp_train_cmd->add_option("--lr", inp_args.cfg.lr)->capture_default_str();
  inp_train_cmd->add_option("--weight-decay", inp_args.cfg.weight_decay)->capture_default_str();
  inp_train_cmd->add_option("--d-model", inp_args.cfg.d_model)->capture_default_str();
  inp_train_cmd->add_option("--heads", inp_args.cfg.n_heads)->capture_default_str();
  inp_train_cmd->add_option("--layers", inp_args.cfg.layers)->capture_default_str();
  inp_train_cmd->add_option("--ffn-mult", inp_args.cfg.ffn_mult)->capture_default_str();
  inp_train_cmd->add_option("--max-len", inp_args.cfg.max_len)->capture_default_str();
  add_common(inp_train_cmd, common);

  InpaintArgs inpaint_args;
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Fill a span of each code sequence");
  inpaint_cmd->add_option("--checkpoint", inpaint_args.checkpoint, "Inpainter checkpoint")->required();
  inpaint_cmd->add_option("--in", inpaint_args.in)->required();
  inpaint_cmd->add_option("--out", inpaint_args.out)->required();
  inpaint_cmd->add_option("--span", inpaint_args.span, "start,length (default: sampled per sequence)")
      ->expected(2)
      ->delimiter(',');
  inpaint_cmd->add_option("--mode", inpaint_args.mode)->capture_default_str()->check(CLI::IsMember({"greedy", "sample"}));
  inpaint_cmd->add_option("--tokenizer", inpaint_args.tokenizer, "Tokenizer checkpoint for decoding");
  inpaint_cmd->add_option("--decode-dir", inpaint_args.decode_dir, "Write decoded PDB and FASTA here");
  add_common(inpaint_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    const CLI::App* active = &app;
    for (auto* s : app.get_subcommands()) active = s;
    err << active->help();
    return usage;
  }

  try {
    if (train_cmd->parsed()) return do_train(app, train_cmd, train_args, common, out);
    if (eval_cmd->parsed()) return do_eval(app, eval_cmd, eval_args, common, out);
    if (tok_cmd->parsed()) return do_tokenize(app, tok_cmd, tok_args, common, out);
    if (detok_cmd->parsed()) return do_detokenize(app, detok_cmd, detok_args, common, out);
    if (rt_cmd->parsed()) return do_roundtrip(app, rt_cmd, rt_args, common, out);
    if (split_cmd->parsed()) return do_split(app, split_cmd, split_args, common, out);
    if (inp_train_cmd->parsed()) return do_train_inpainter(app, inp_train_cmd, inp_args, common, out);
    if (inpaint_cmd->parsed()) return do_inpaint(app, inpaint_cmd, inpaint_args, common, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return data;
  }
  err << app.help();
  return usage;
}

}  // namespace vqpl::cli
