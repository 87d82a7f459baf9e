// SPDX-License-Identifier: Apache-2.0
#include "vqpl/checkpoint.hpp"

#include <cstdio>

#include "vqpl/binio.hpp"
#include "vqpl/error.hpp"

namespace vqpl::checkpoint {

namespace {
constexpr std::string_view kMagic = "VQPT";
constexpr std::uint32_t kVersion = 1;
}  // namespace

const grad::Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw Error(Errc::format_error, "checkpoint has no tensor " + name);
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::string to_bytes(const Container& c) {
  binio::Writer w;
  w.bytes(kMagic);
  w.u32(kVersion);
  const std::string meta = c.meta.dump();
  w.u64(meta.size());
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (double v : t.data) w.f64(v);
  }
  return w.str();
}

Container from_bytes(const std::string& bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4) != kMagic) throw Error(Errc::format_error, "not a checkpoint file");
  if (const auto v = r.u32(); v != kVersion) throw Error(Errc::format_error, "checkpoint version " + std::to_string(v));
  Container c;
  const auto meta_len = r.u64();
  try {
    c.meta = nlohmann::ordered_json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.bytes(r.u32()));
    grad::Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    grad::Tensor t(shape);
    for (auto& v : t.data) v = r.f64();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(Errc::format_error, "trailing bytes in checkpoint");
  return c;
}

void save(const std::filesystem::path& path, const Container& c) { binio::write_file(path, to_bytes(c)); }

Container load(const std::filesystem::path& path) { return from_bytes(binio::read_file(path)); }

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vqpl::checkpoint
