#include "gazefl/checkpoint.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace gazefl {
namespace {

constexpr std::string_view kMagicLine = "gazefl-checkpoint 1";

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (std::size_t i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) return false;
  v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

std::uint64_t parse_u64(const std::string& key, std::string_view text, int base = 10) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v, base);
  if (ec != std::errc() || ptr != end) {
    throw CheckpointError("checkpoint header: bad value for " + key + ": '" +
                          std::string(text) + "'");
  }
  return v;
}

}  // namespace

void write_param_vector(std::ostream& out, std::span<const float> params) {
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (float p : params) put_u32(out, std::bit_cast<std::uint32_t>(p));
  if (!out) throw CheckpointError("failed writing parameter vector");
}

std::vector<float> read_param_vector(std::istream& in) {
  std::uint32_t n = 0;
  if (!get_u32(in, n)) throw CheckpointError("parameter vector: missing length prefix");
  std::vector<float> params(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    if (!get_u32(in, bits)) {
      throw CheckpointError("parameter vector truncated: expected " + std::to_string(n) +
                            " values, got " + std::to_string(i));
    }
    params[i] = std::bit_cast<float>(bits);
  }
  return params;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(ckpt.header.config_hash));
  out << kMagicLine << "\n"
      << "mode=" << ckpt.header.mode << "\n"
      << "round=" << ckpt.header.round << "\n"
      << "seed=" << ckpt.header.seed << "\n"
      << "config_hash=" << hash << "\n";
  if (ckpt.header.participant) out << "participant=" << *ckpt.header.participant << "\n";
  out << "\n";
  write_param_vector(out, ckpt.params);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) {
    throw CheckpointError("not a gazefl checkpoint (bad first line)");
  }
  Checkpoint ckpt;
  while (std::getline(in, line) && !line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint header: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "mode") {
      ckpt.header.mode = std::string(value);
    } else if (key == "round") {
      ckpt.header.round = parse_u64(key, value);
    } else if (key == "seed") {
      ckpt.header.seed = parse_u64(key, value);
    } else if (key == "config_hash") {
      ckpt.header.config_hash = parse_u64(key, value, 16);
    } else if (key == "participant") {
      ckpt.header.participant = static_cast<std::uint32_t>(parse_u64(key, value));
    } else {
      throw CheckpointError("checkpoint header: unknown key '" + key + "'");
    }
  }
  ckpt.params = read_param_vector(in);
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gazefl
