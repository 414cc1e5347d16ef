#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "gazefl/data.hpp"

namespace gazefl {
namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

void put_f32(std::ostream& out, float value) {
  put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(value));
}

template <typename U>
U get_le(const unsigned char* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

float get_f32(const unsigned char* p) {
  return std::bit_cast<float>(get_le<std::uint32_t>(p));
}

// Reads up to n bytes; returns the count actually read.
std::size_t read_some(std::istream& in, unsigned char* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

}  // namespace

GzflParseError::GzflParseError(std::string message, std::uint64_t offset)
    : std::runtime_error("GZFL parse error at byte " + std::to_string(offset) + ": " +
                         message),
      offset_(offset) {}

GzflTruncatedError::GzflTruncatedError(std::uint32_t expected, std::uint32_t actual,
                                       std::uint64_t offset)
    : GzflParseError("truncated: header declares " + std::to_string(expected) +
                         " samples, file holds " + std::to_string(actual),
                     offset),
      expected_(expected),
      actual_(actual) {}

void write_participant(std::ostream& out, const ParticipantDataset& ds) {
  out.write("GZFL", 4);
  put_le<std::uint16_t>(out, kGzflVersion);
  put_le<std::uint16_t>(out, ds.id);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    if (s.eye.size() != kEyePixels) {
      throw std::invalid_argument("sample eye image must hold 2160 pixels");
    }
    for (float p : s.eye) put_f32(out, p);
    put_f32(out, s.head_pitch);
    put_f32(out, s.head_yaw);
    put_f32(out, s.gaze_yaw);
    put_f32(out, s.gaze_pitch);
  }
  if (!out) throw std::runtime_error("failed writing GZFL stream");
}

void write_participant(const std::filesystem::path& path, const ParticipantDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_participant(out, ds);
}

ParticipantDataset read_participant(std::istream& in) {
  std::array<unsigned char, kGzflHeaderBytes> header{};
  const std::size_t got = read_some(in, header.data(), header.size());
  if (got >= 4 && std::memcmp(header.data(), "GZFL", 4) != 0) {
    throw GzflParseError("bad magic (expected \"GZFL\")", 0);
  }
  if (got < header.size()) {
    throw GzflParseError("file ends inside the 12-byte header", got);
  }
  const auto version = get_le<std::uint16_t>(header.data() + 4);
  if (version != kGzflVersion) {
    throw GzflParseError("unsupported version " + std::to_string(version), 4);
  }
  ParticipantDataset ds;
  ds.id = get_le<std::uint16_t>(header.data() + 6);
  ds.provenance = Provenance::Loaded;
  const auto count = get_le<std::uint32_t>(header.data() + 8);

  std::vector<unsigned char> record(kGzflRecordBytes);
  std::uint64_t offset = kGzflHeaderBytes;
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t n = read_some(in, record.data(), record.size());
    if (n < record.size()) throw GzflTruncatedError(count, i, offset + n);
    Sample s;
    const unsigned char* p = record.data();
    for (std::size_t k = 0; k < kEyePixels; ++k, p += 4) s.eye[k] = get_f32(p);
    s.head_pitch = get_f32(p);
    s.head_yaw = get_f32(p + 4);
    s.gaze_yaw = get_f32(p + 8);
    s.gaze_pitch = get_f32(p + 12);
    ds.samples.push_back(std::move(s));
    offset += record.size();
  }
  unsigned char extra = 0;
  if (read_some(in, &extra, 1) != 0) {
    throw GzflParseError("trailing bytes after " + std::to_string(count) + " samples",
                         offset);
  }
  try {
    validate(ds);
  } catch (const std::invalid_argument& e) {
    throw GzflParseError(e.what(), kGzflHeaderBytes);
  }
  return ds;
}

ParticipantDataset load_participant(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_participant(in);
}

std::vector<ParticipantDataset> load_federation(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".gzfl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<ParticipantDataset> federation;
  for (const auto& f : files) federation.push_back(load_participant(f));
  std::sort(federation.begin(), federation.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < federation.size(); ++i) {
    if (federation[i].id == federation[i - 1].id) {
      throw std::invalid_argument("duplicate participant id " +
                                  std::to_string(federation[i].id) + " in " + dir.string());
    }
  }
  if (federation.empty()) throw std::invalid_argument("no .gzfl files in " + dir.string());
  return federation;
}

}  // namespace gazefl
