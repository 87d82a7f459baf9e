// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "vqpl/error.hpp"
#include "vqpl/ingest.hpp"

using namespace vqpl;
using namespace vqpl::ingest;

namespace {

std::string ca_line(int serial, const char* res, char chain, int seq, double x, double y, double z, char alt = ' ') {
  char buf[100];
  std::snprintf(buf, sizeof(buf), "ATOM  %5d  CA %c%3s %c%4d    %8.3f%8.3f%8.3f  1.00  0.00           C\n", serial, alt,
                res, chain, seq, x, y, z);
  return buf;
}

BackboneRecord chain_record(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BackboneRecord r;
  r.id = "chain" + std::to_string(seed);
  r.coords = fixtures::random_chain(n, rng);
  for (std::size_t i = 0; i < n; ++i) r.sequence.push_back(static_cast<int>(rng.below(kNumAminoAcids)));
  return r;
}

}  // namespace

TEST_CASE("residue alphabet") {
  CHECK(residue_from_three_letter("GLY") == residue_from_one_letter('G'));
  CHECK(residue_from_three_letter("HOH") == kUnk);
  CHECK(three_letter(residue_from_one_letter('W')) == "TRP");
  CHECK(sequence_to_string(sequence_from_string("ACDY")) == "ACDY");
  CHECK(one_letter(kMask) == '#');
}

TEST_CASE("parse_backbone: five CA residues") {
  std::string text;
  const char* names[] = {"GLY", "ALA", "SER", "THR", "VAL"};
  for (int i = 0; i < 5; ++i) text += ca_line(i + 1, names[i], 'A', i + 1, 3.8 * i, (i % 2) * 1.5, 0.2 * i * i);
  const auto parsed = parse_backbone(text);
  CHECK(sequence_to_string(parsed.record.sequence) == "GASTV");
  REQUIRE(parsed.record.coords.size() == 5);
  CHECK(parsed.record.coords[3].x() == doctest::Approx(11.4));
  CHECK(parsed.malformed_lines == 0);
}

TEST_CASE("parse_backbone: full backbone keeps CA only") {
  const auto text = fixtures::read_file(fixtures::data_dir() / "fixtures/five_residues_full.pdb");
  const auto parsed = parse_backbone(text);
  CHECK(parsed.record.id == "SYN1");
  CHECK(parsed.record.coords.size() == 5);
  CHECK(sequence_to_string(parsed.record.sequence) == "GASTV");
  CHECK(parsed.record.coords[1].x() == doctest::Approx(3.8));
}

TEST_CASE("parse_backbone: malformed coordinate is skipped and counted") {
  const auto text = fixtures::read_file(fixtures::data_dir() / "fixtures/malformed_coordinate.pdb");
  const auto parsed = parse_backbone(text);
  CHECK(parsed.malformed_lines == 1);
  CHECK(sequence_to_string(parsed.record.sequence) == "GATV");
}

TEST_CASE("parse_backbone: chains, models and altLoc") {
  std::string text;
  for (int i = 0; i < 4; ++i) text += ca_line(i + 1, "ALA", 'A', i + 1, 3.8 * i, (i % 2) * 1.5, 0);
  // altLoc B of residue 2 must be ignored
  text += ca_line(10, "GLY", 'A', 2, 99, 99, 99, 'B');
  text += "TER\n";
  for (int i = 0; i < 5; ++i) text += ca_line(20 + i, "LYS", 'B', i + 1, 3.8 * i, 0, (i % 2) * 1.5);
  const auto first = parse_backbone(text);
  CHECK(sequence_to_string(first.record.sequence) == "AAAA");
  CHECK(first.record.coords[1].x() == doctest::Approx(3.8));

  ParseOptions opt;
  opt.chain = 'B';
  CHECK(sequence_to_string(parse_backbone(text, opt).record.sequence) == "KKKKK");

  std::string models = "MODEL        1\n";
  for (int i = 0; i < 4; ++i) models += ca_line(i + 1, "ALA", 'A', i + 1, 3.8 * i, (i % 2) * 1.5, 0);
  models += "ENDMDL\nMODEL        2\n";
  for (int i = 0; i < 4; ++i) models += ca_line(i + 1, "ALA", 'A', i + 1, 50 + 3.8 * i, (i % 2) * 1.5, 0);
  models += "ENDMDL\n";
  const auto m = parse_backbone(models);
  CHECK(m.record.coords.size() == 4);
  CHECK(m.record.coords[0].x() == doctest::Approx(0.0));
}

TEST_CASE("parse_backbone errors") {
  std::string text;
  for (int i = 0; i < 3; ++i) text += ca_line(i + 1, "ALA", 'A', i + 1, 3.8 * i, 0, 0);
  try {
    parse_backbone(text);
    FAIL("expected NoBackbone");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::no_backbone);
  }
  std::string bad = "ATOM      1  CA  ALA A   1       x.xxx   0.000   0.000\n";
  try {
    parse_backbone(bad);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::malformed_record);
  }
}

TEST_CASE("write_ca_pdb parses back") {
  const auto rec = chain_record(7, 3);
  const auto back = parse_backbone(write_ca_pdb(rec)).record;
  CHECK(back.sequence == rec.sequence);
  for (std::size_t i = 0; i < rec.coords.size(); ++i) CHECK((back.coords[i] - rec.coords[i]).norm() < 1e-3);
}

TEST_CASE("split_dataset sizes and determinism") {
  std::vector<int> items(1000);
  for (int i = 0; i < 1000; ++i) items[i] = i;
  const auto s = split_dataset(items, Ratios{95, 2, 3}, 42);
  CHECK(s.train.size() == 950);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 30);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 1000);

  const auto again = split_dataset(items, Ratios{0.95, 0.02, 0.03}, 42);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);
  CHECK(again.test == s.test);

  const auto other = split_dataset(items, Ratios{95, 2, 3}, 43);
  CHECK(other.val != s.val);

  const auto all_train = split_dataset(items, Ratios{100, 0, 0}, 1);
  CHECK(all_train.train.size() == 1000);
  CHECK(all_train.val.empty());
  CHECK(all_train.test.empty());
}

TEST_CASE("split_dataset: remainder goes to train, groups stay together") {
  std::vector<int> items(7);
  const auto s = split_dataset(items, Ratios{50, 25, 25}, 1);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);
  CHECK(s.train.size() == 5);

  std::vector<std::string> groups;
  for (int i = 0; i < 100; ++i) groups.push_back("g" + std::to_string(i / 4));
  const auto idx = split_indices(100, Ratios{80, 10, 10}, 5, groups);
  auto group_set = [&](const std::vector<std::size_t>& v) {
    std::set<std::string> g;
    for (auto i : v) g.insert(groups[i]);
    return g;
  };
  const auto tr = group_set(idx.train), va = group_set(idx.val), te = group_set(idx.test);
  for (const auto& g : va) CHECK(tr.count(g) == 0);
  for (const auto& g : te) CHECK(tr.count(g) == 0);
  for (const auto& g : te) CHECK(va.count(g) == 0);
  CHECK(idx.train.size() + idx.val.size() + idx.test.size() == 100);
}

TEST_CASE("split_dataset bad ratios") {
  std::vector<int> items(10);
  CHECK_THROWS_AS(split_dataset(items, Ratios{50, 20, 20}, 1), Error);
  CHECK_THROWS_AS(split_dataset(items, Ratios{-5, 50, 55}, 1), Error);
  CHECK_THROWS_AS(split_dataset(std::vector<int>{}, Ratios{}, 1), Error);
  CHECK(parse_ratios("95,2,3").train == 95);
  CHECK_THROWS_AS(parse_ratios("95,2"), Error);
}

TEST_CASE("mask_count rounds half to even") {
  CHECK(mask_count(0.15, 100) == 15);
  CHECK(mask_count(0.15, 10) == 2);   // 1.5
  CHECK(mask_count(0.25, 10) == 2);   // 2.5
  CHECK(mask_count(0.5, 7) == 4);     // 3.5
  CHECK(mask_count(0.0, 50) == 0);
}

TEST_CASE("corrupt: mask count, shared positions, lengths") {
  const auto rec = chain_record(100, 7);
  CorruptionConfig cfg;
  cfg.seed = 11;
  const auto c = corrupt(rec, cfg);
  CHECK(c.mask_positions.size() == 15);
  CHECK(c.masked_sequence.size() == 100);
  CHECK(c.angles.triples.size() == 102);
  std::size_t seq_masked = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const bool in_mask = std::binary_search(c.mask_positions.begin(), c.mask_positions.end(), i);
    CHECK((c.masked_sequence[i] == kMask) == in_mask);
    CHECK(is_mask_sentinel(c.angles.triples[i + 1]) == in_mask);
    seq_masked += c.masked_sequence[i] == kMask;
  }
  CHECK(seq_masked == 15);
  CHECK(std::set<std::size_t>(c.mask_positions.begin(), c.mask_positions.end()).size() == 15);
}

TEST_CASE("corrupt: identity configuration") {
  const auto rec = chain_record(30, 8);
  const auto c = corrupt(rec, CorruptionConfig{0.0, 0.0, 5});
  CHECK(c.masked_sequence == rec.sequence);
  CHECK(c.mask_positions.empty());
  const auto ref = geom::torsion_parametrize(rec.coords);
  REQUIRE(c.angles.triples.size() == ref.triples.size());
  for (std::size_t i = 0; i < ref.triples.size(); ++i) CHECK(c.angles.triples[i] == ref.triples[i]);
}

TEST_CASE("corrupt: noise replays bit-exactly from the seeded stream") {
  const auto rec = chain_record(25, 9);
  const CorruptionConfig cfg{0.15, 0.1, 1234};
  const auto c = corrupt(rec, cfg);
  Rng replay(noise_stream_seed(cfg.seed));
  for (std::size_t i = 0; i < rec.coords.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      const double expected = rec.coords[i][axis] + 0.1 * replay.normal();
      CHECK(c.noisy_coords[i][axis] == expected);
    }
  }
  const auto again = corrupt(rec, cfg);
  CHECK(again.mask_positions == c.mask_positions);
  for (std::size_t i = 0; i < c.angles.triples.size(); ++i) CHECK(again.angles.triples[i] == c.angles.triples[i]);
}

TEST_CASE("manifest roundtrip and load_records") {
  const auto dir = fixtures::temp_dir("manifest");
  {
    std::ofstream out(dir / "a.pdb");
    out << write_ca_pdb(chain_record(9, 1));
  }
  write_manifest(dir / "m.jsonl", {{"a", "a.pdb", 'A'}});
  const auto entries = read_manifest(dir / "m.jsonl");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].chain == 'A');
  const auto recs = load_records(dir / "m.jsonl");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].id == "a");
  CHECK(recs[0].coords.size() == 9);
  CHECK_THROWS_AS(read_manifest(dir / "missing.jsonl"), Error);
}
