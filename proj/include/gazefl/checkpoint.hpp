#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gazefl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// u32 little-endian length followed by that many little-endian f32 values.
void write_param_vector(std::ostream& out, std::span<const float> params);
std::vector<float> read_param_vector(std::istream& in);

struct CheckpointHeader {
  std::string mode;
  std::uint64_t round = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::optional<std::uint32_t> participant;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<float> params;
};

// Text header lines ("key=value"), a blank line, then the parameter vector.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace gazefl
