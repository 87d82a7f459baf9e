// SPDX-License-Identifier: Apache-2.0
#include "vqpl/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "vqpl/error.hpp"
#include "vqpl/log.hpp"
#include "vqpl/rng.hpp"

namespace vqpl::ingest {

namespace {

constexpr std::array<std::string_view, kNumAminoAcids> kThreeLetter = {
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU",
    "MET", "ASN", "PRO", "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string_view field(std::string_view line, std::size_t begin, std::size_t end) {
  if (begin >= line.size()) return {};
  return line.substr(begin, std::min(end, line.size()) - begin);
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

int residue_from_three_letter(std::string_view name) {
  name = trim(name);
  for (int i = 0; i < kNumAminoAcids; ++i) {
    if (kThreeLetter[i] == name) return i;
  }
  return kUnk;
}

std::string_view three_letter(int token) {
  if (token >= 0 && token < kNumAminoAcids) return kThreeLetter[token];
  return "UNK";
}

char one_letter(int token) {
  if (token >= 0 && token < kNumAminoAcids) return kAlphabet[token];
  if (token == kMask) return '#';
  if (token == kPad) return '-';
  return 'X';
}

int residue_from_one_letter(char c) {
  const auto pos = kAlphabet.find(c);
  if (pos != std::string_view::npos) return static_cast<int>(pos);
  if (c == '#') return kMask;
  if (c == '-') return kPad;
  return kUnk;
}

std::string sequence_to_string(const std::vector<int>& tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) s.push_back(one_letter(t));
  return s;
}

std::vector<int> sequence_from_string(std::string_view s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(residue_from_one_letter(c));
  return out;
}

ParsedBackbone parse_backbone(std::string_view text, const ParseOptions& options) {
  ParsedBackbone out;
  out.record.id = options.id;
  std::optional<char> chain = options.chain;
  std::set<std::tuple<char, std::string, char>> seen;  // chain, resSeq, iCode
  std::size_t ca_lines = 0;
  bool model_done = false;

  std::size_t pos = 0;
  while (pos < text.size() && !model_done) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;

    const std::string_view tag = field(line, 0, 6);
    if (tag.starts_with("HEADER") && out.record.id.empty()) {
      out.record.id = std::string(trim(field(line, 62, 66)));
      continue;
    }
    if (tag.starts_with("ENDMDL")) {
      if (!out.record.coords.empty()) model_done = true;
      continue;
    }
    if (tag != "ATOM  ") continue;
    if (trim(field(line, 12, 16)) != "CA") continue;

    const char chain_id = line.size() > 21 ? line[21] : ' ';
    if (chain && *chain != chain_id) continue;

    ++ca_lines;
    const auto x = parse_double(field(line, 30, 38));
    const auto y = parse_double(field(line, 38, 46));
    const auto z = parse_double(field(line, 46, 54));
    if (!x || !y || !z || line.size() < 54) {
      ++out.malformed_lines;
      continue;
    }
    if (!chain) chain = chain_id;

    const auto key = std::make_tuple(chain_id, std::string(trim(field(line, 22, 26))), line.size() > 26 ? line[26] : ' ');
    if (!seen.insert(key).second) continue;  // alternate location, keep the first

    out.record.sequence.push_back(residue_from_three_letter(field(line, 17, 20)));
    out.record.coords.emplace_back(*x, *y, *z);
  }

  if (ca_lines > 0 && out.malformed_lines == ca_lines) {
    throw Error(Errc::malformed_record, "every CA record failed to parse");
  }
  if (out.record.coords.size() < 4) {
    throw Error(Errc::no_backbone, "found " + std::to_string(out.record.coords.size()) + " CA atoms, need 4");
  }
  if (out.malformed_lines > 0) {
    log::warn("skipped ", out.malformed_lines, " malformed ATOM record(s) in ", out.record.id);
  }
  return out;
}

std::string write_ca_pdb(const BackboneRecord& record, char chain) {
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < record.coords.size(); ++i) {
    const auto& c = record.coords[i];
    const int token = i < record.sequence.size() ? record.sequence[i] : kUnk;
    std::snprintf(buf, sizeof(buf), "ATOM  %5zu  CA  %3s %c%4zu    %8.3f%8.3f%8.3f  1.00  0.00           C\n", i + 1,
                  std::string(three_letter(token)).c_str(), chain, i + 1, c.x(), c.y(), c.z());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "TER   %5zu      %3s %c%4zu\nEND\n", record.coords.size() + 1,
                std::string(three_letter(record.sequence.empty() ? kUnk : record.sequence.back())).c_str(), chain,
                record.coords.size());
  out += buf;
  return out;
}

Ratios parse_ratios(std::string_view text) {
  std::vector<double> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    const auto v = parse_double(text.substr(pos, comma - pos));
    if (!v) throw Error(Errc::bad_ratios, "cannot parse ratios '" + std::string(text) + "'");
    parts.push_back(*v);
    pos = comma + 1;
  }
  if (parts.size() != 3) throw Error(Errc::bad_ratios, "expected three ratios");
  return {parts[0], parts[1], parts[2]};
}

SplitIndices split_indices(std::size_t count, const Ratios& ratios, std::uint64_t seed,
                           const std::vector<std::string>& groups) {
  const double total = ratios.train + ratios.val + ratios.test;
  const bool valid_sum = std::abs(total - 100.0) < 1e-9 || std::abs(total - 1.0) < 1e-12;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || !valid_sum) {
    throw Error(Errc::bad_ratios, "ratios must be non-negative and sum to 100 or 1");
  }
  if (count == 0) throw Error(Errc::bad_ratios, "cannot split an empty dataset");
  if (!groups.empty() && groups.size() != count) throw Error(Errc::bad_ratios, "one group key per record required");

  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(count) * ratios.val / total));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(count) * ratios.test / total));

  Rng rng(seed);
  SplitIndices out;
  if (groups.empty()) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(std::span(order));
    out.val.assign(order.begin(), order.begin() + n_val);
    out.test.assign(order.begin() + n_val, order.begin() + n_val + n_test);
    out.train.assign(order.begin() + n_val + n_test, order.end());
    return out;
  }

  // Group-aware variant: distinct keys in first-appearance order, shuffled.
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < count; ++i) {
    auto& m = members[groups[i]];
    if (m.empty()) keys.push_back(groups[i]);
    m.push_back(i);
  }
  rng.shuffle(std::span(keys));
  for (const auto& key : keys) {
    const auto& m = members[key];
    auto& dest = out.val.size() < n_val ? out.val : out.test.size() < n_test ? out.test : out.train;
    dest.insert(dest.end(), m.begin(), m.end());
  }
  return out;
}

std::size_t mask_count(double mask_ratio, std::size_t n) {
  // nearbyint honours the default round-to-nearest-even mode
  return static_cast<std::size_t>(std::nearbyint(mask_ratio * static_cast<double>(n)));
}

std::uint64_t mask_stream_seed(std::uint64_t seed) { return derive_seed(seed, 0x6d61736b); }
std::uint64_t noise_stream_seed(std::uint64_t seed) { return derive_seed(seed, 0x6e6f6973); }

Corrupted corrupt(const BackboneRecord& record, const CorruptionConfig& cfg) {
  const std::size_t n = record.coords.size();
  if (record.sequence.size() != n) throw Error(Errc::length_mismatch, "sequence and coordinates differ in length");
  if (!(cfg.mask_ratio >= 0.0 && cfg.mask_ratio < 1.0)) throw Error(Errc::usage_error, "mask_ratio must be in [0, 1)");
  if (!(cfg.noise_sigma >= 0.0)) throw Error(Errc::usage_error, "noise_sigma must be >= 0");

  Corrupted out;
  const std::size_t k = mask_count(cfg.mask_ratio, n);
  if (k > 0) {
    Rng rng(mask_stream_seed(cfg.seed));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(order[i], order[j]);
    }
    out.mask_positions.assign(order.begin(), order.begin() + k);
    std::sort(out.mask_positions.begin(), out.mask_positions.end());
  }

  out.noisy_coords = record.coords;
  if (cfg.noise_sigma > 0.0) {
    Rng rng(noise_stream_seed(cfg.seed));
    for (auto& c : out.noisy_coords) {
      for (int axis = 0; axis < 3; ++axis) c[axis] += cfg.noise_sigma * rng.normal();
    }
  }

  out.angles = geom::torsion_parametrize(out.noisy_coords);
  out.masked_sequence = record.sequence;
  for (auto i : out.mask_positions) {
    out.masked_sequence[i] = kMask;
    out.angles.triples[i + 1] = kMaskTriple;
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      if (j.contains("chain") && j["chain"].is_string() && !j["chain"].get<std::string>().empty()) {
        e.chain = j["chain"].get<std::string>().front();
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::format_error, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["chain"] = e.chain ? std::string(1, *e.chain) : std::string();
    out << j.dump() << '\n';
  }
}

BackboneRecord load_record(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  std::filesystem::path p(entry.path);
  if (p.is_relative()) p = base_dir / p;
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open structure " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ParseOptions opt;
  opt.chain = entry.chain;
  opt.id = entry.id;
  return parse_backbone(ss.str(), opt).record;
}

std::vector<BackboneRecord> load_records(const std::filesystem::path& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<BackboneRecord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_record(e, base));
  return out;
}

std::string protein_line(const BackboneRecord& record) {
  nlohmann::ordered_json j;
  j["id"] = record.id;
  j["sequence"] = sequence_to_string(record.sequence);
  auto coords = nlohmann::ordered_json::array();
  for (const auto& x : record.coords) coords.push_back({x.x(), x.y(), x.z()});
  j["coords"] = std::move(coords);
  return j.dump();
}

BackboneRecord parse_protein_line(const std::string& line) {
  BackboneRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.id = j.value("id", std::string());
    r.sequence = sequence_from_string(j.at("sequence").get<std::string>());
    for (const auto& c : j.at("coords")) {
      if (c.size() != 3) throw Error(Errc::format_error, "coordinate entries must have 3 values");
      r.coords.emplace_back(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("protein record: ") + e.what());
  }
  if (r.coords.size() != r.sequence.size())
    throw Error(Errc::length_mismatch, "record " + r.id + " has " + std::to_string(r.sequence.size()) +
                                           " residues and " + std::to_string(r.coords.size()) + " coordinates");
  geom::validate_coords(r.coords);
  return r;
}

std::vector<BackboneRecord> read_proteins(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<BackboneRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      if (line.find("\"coords\"") == std::string::npos && line.find("\"path\"") != std::string::npos) {
        const auto j = nlohmann::json::parse(line);
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        if (j.contains("chain") && j["chain"].is_string() && !j["chain"].get<std::string>().empty())
          e.chain = j["chain"].get<std::string>().front();
        out.push_back(load_record(e, path.parent_path()));
      } else {
        out.push_back(parse_protein_line(line));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format_error, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_proteins(const std::filesystem::path& path, const std::vector<BackboneRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  for (const auto& r : records) out << protein_line(r) << '\n';
}

}  // namespace vqpl::ingest
