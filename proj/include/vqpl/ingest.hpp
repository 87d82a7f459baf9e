// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vqpl/geom.hpp"

namespace vqpl::ingest {

/// Residue tokens: 0..19 are the standard amino acids in the order of
/// kAlphabet, followed by the special tokens.
inline constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kNumAminoAcids = 20;
inline constexpr int kUnk = 20;
inline constexpr int kMask = 21;
inline constexpr int kPad = 22;
inline constexpr int kVocabSize = 23;

int residue_from_three_letter(std::string_view name);
std::string_view three_letter(int token);
char one_letter(int token);  // 'X' for UNK, '#' for MASK, '-' for PAD
int residue_from_one_letter(char c);
std::string sequence_to_string(const std::vector<int>& tokens);
std::vector<int> sequence_from_string(std::string_view s);

struct BackboneRecord {
  std::string id;
  std::vector<int> sequence;
  geom::Coords coords;
};

struct ParseOptions {
  std::optional<char> chain;  // default: first chain with a CA atom
  std::string id;             // default: HEADER id code if present
};

struct ParsedBackbone {
  BackboneRecord record;
  std::size_t malformed_lines = 0;
};

/// CA-only parse of legacy PDB text: first model, one chain, first altLoc.
ParsedBackbone parse_backbone(std::string_view text, const ParseOptions& options = {});

/// Writes a CA-only PDB (occupancy 1.00, B-factor 0.00).
std::string write_ca_pdb(const BackboneRecord& record, char chain = 'A');

struct Ratios {
  double train = 95;
  double val = 2;
  double test = 3;
};

/// Parses "95,2,3" (or "0.95,0.02,0.03").
Ratios parse_ratios(std::string_view text);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded Fisher-Yates shuffle then partition by floored ratios with the
/// remainder going to train. When group keys are given, whole groups are
/// shuffled and assigned so no group straddles two partitions.
SplitIndices split_indices(std::size_t count, const Ratios& ratios, std::uint64_t seed,
                           const std::vector<std::string>& groups = {});

template <class T>
struct Split {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

template <class T>
Split<T> split_dataset(const std::vector<T>& items, const Ratios& ratios, std::uint64_t seed,
                       const std::vector<std::string>& groups = {}) {
  const auto idx = split_indices(items.size(), ratios, seed, groups);
  Split<T> out;
  for (auto i : idx.train) out.train.push_back(items[i]);
  for (auto i : idx.val) out.val.push_back(items[i]);
  for (auto i : idx.test) out.test.push_back(items[i]);
  return out;
}

struct CorruptionConfig {
  double mask_ratio = 0.15;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Structure entries at masked residues are replaced by this sentinel; r = 0
/// can never occur in a real triple.
inline constexpr geom::Triple kMaskTriple{0.0, 0.0, 0.0};
inline bool is_mask_sentinel(const geom::Triple& t) { return t.r == 0.0; }

struct Corrupted {
  std::vector<int> masked_sequence;
  geom::AngleSequence angles;            // n + 2 entries; residue i is entry i + 1
  std::vector<std::size_t> mask_positions;  // sorted residue indices
  geom::Coords noisy_coords;
};

/// Number of masked residues: round-half-to-even(mask_ratio * n).
std::size_t mask_count(double mask_ratio, std::size_t n);

/// Masks residues in sequence and structure at the same positions and adds
/// Gaussian noise to the Cartesian coordinates before parameterization.
Corrupted corrupt(const BackboneRecord& record, const CorruptionConfig& cfg);

/// Seed streams used by corrupt; exposed so replays can be checked.
std::uint64_t mask_stream_seed(std::uint64_t seed);
std::uint64_t noise_stream_seed(std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string path;
  std::optional<char> chain;
};

/// JSON-lines manifest of {"id", "path", "chain"}.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Parses every file in the manifest; relative paths resolve against the
/// manifest's directory.
std::vector<BackboneRecord> load_records(const std::filesystem::path& manifest_path);
BackboneRecord load_record(const ManifestEntry& entry, const std::filesystem::path& base_dir);

/// Protein JSON line {"id", "sequence", "coords"}; coordinates as [x, y, z]
/// triples.
std::string protein_line(const BackboneRecord& record);
BackboneRecord parse_protein_line(const std::string& line);

/// Protein JSON lines. Lines with "path" instead of "coords" are manifest
/// entries and are parsed from the referenced PDB file.
std::vector<BackboneRecord> read_proteins(const std::filesystem::path& path);
void write_proteins(const std::filesystem::path& path, const std::vector<BackboneRecord>& records);

}  // namespace vqpl::ingest
