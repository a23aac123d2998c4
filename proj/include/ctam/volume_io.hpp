#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/image.hpp"

namespace ctam {

namespace detail {

// Little-endian scalar codecs. The on-disk formats are pinned to LE
// regardless of host order.

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Bounds-checked cursor over a byte buffer; running past the end raises a
// truncation error naming the reader.
struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::string context;

  bool exhausted() const { return pos >= bytes.size(); }
  std::size_t remaining() const { return bytes.size() - pos; }

  void need(std::size_t count) {
    if (remaining() < count)
      throw IoError(IoError::Kind::truncated,
                    context + ": truncated, needed " + std::to_string(count) +
                        " more bytes at offset " + std::to_string(pos));
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t count) {
    need(count);
    std::string s = bytes.substr(pos, count);
    pos += count;
    return s;
  }
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Kind::open_failed, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::write_failed, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Kind::write_failed, "short write to '" + path.string() + "'");
}

}  // namespace detail

// Volume container layout (all integers little-endian):
//   "SVOL" | u32 version=1 | u32 height | u32 width | u32 slice_count |
//   slice_count * height * width f32 pixels, slice-major then row-major.
inline constexpr std::uint32_t kVolumeVersion = 1;
inline constexpr std::uint32_t kMaxVolumeDim = 16384;
inline constexpr std::uint64_t kMaxVolumeElements = 1ull << 28;

inline void write_volume(const Volume& volume, const std::filesystem::path& path) {
  validate_volume(volume);
  const std::uint32_t h = static_cast<std::uint32_t>(volume.slices.front().height);
  const std::uint32_t w = static_cast<std::uint32_t>(volume.slices.front().width);
  const std::uint32_t n = static_cast<std::uint32_t>(volume.slices.size());

  std::string bytes;
  bytes.reserve(20 + static_cast<std::size_t>(h) * w * n * 4);
  bytes += "SVOL";
  detail::put_u32(bytes, kVolumeVersion);
  detail::put_u32(bytes, h);
  detail::put_u32(bytes, w);
  detail::put_u32(bytes, n);
  for (const Image& slice : volume.slices)
    for (double p : slice.pixels)
      detail::put_f32(bytes, static_cast<float>(std::clamp(p, 0.0, 1.0)));
  detail::write_file_bytes(path, bytes);
}

inline Volume read_volume(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader reader{bytes, 0, "volume '" + path.string() + "'"};

  if (bytes.size() < 4 || bytes.substr(0, 4) != "SVOL")
    throw IoError(IoError::Kind::bad_magic,
                  "volume '" + path.string() + "': bad magic, expected SVOL");
  reader.pos = 4;
  const std::uint32_t version = reader.u32();
  if (version != kVolumeVersion)
    throw IoError(IoError::Kind::bad_version, "volume '" + path.string() +
                                                  "': unsupported version " +
                                                  std::to_string(version));
  const std::uint32_t h = reader.u32();
  const std::uint32_t w = reader.u32();
  const std::uint32_t n = reader.u32();
  if (h == 0 || w == 0 || n == 0)
    throw IoError(IoError::Kind::corrupt,
                  "volume '" + path.string() + "': zero-sized dimension in header");
  if (h > kMaxVolumeDim || w > kMaxVolumeDim || n > kMaxVolumeDim ||
      static_cast<std::uint64_t>(h) * w * n > kMaxVolumeElements)
    throw IoError(IoError::Kind::dim_overflow,
                  "volume '" + path.string() + "': header claims " + std::to_string(n) + "x" +
                      std::to_string(h) + "x" + std::to_string(w) +
                      ", beyond supported bounds");

  const std::uint64_t count = static_cast<std::uint64_t>(h) * w * n;
  if (reader.remaining() < count * 4)
    throw IoError(IoError::Kind::truncated,
                  "volume '" + path.string() + "': payload holds " +
                      std::to_string(reader.remaining() / (static_cast<std::uint64_t>(h) * w * 4)) +
                      " full slices, header claims " + std::to_string(n));
  if (reader.remaining() > count * 4)
    throw IoError(IoError::Kind::corrupt,
                  "volume '" + path.string() + "': trailing bytes after payload");

  Volume volume;
  volume.patient_id = path.stem().string();
  volume.slices.reserve(n);
  for (std::uint32_t s = 0; s < n; ++s) {
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < img.size(); ++i)
      img.pixels[i] = std::clamp(static_cast<double>(reader.f32()), 0.0, 1.0);
    volume.slices.push_back(std::move(img));
  }
  return volume;
}

// patient_id -> binary label, loaded from a CSV with the exact header
// "patient_id,label". Ordered by id for deterministic iteration.
struct LabelTable {
  std::map<std::string, int> entries;

  bool contains(const std::string& id) const { return entries.count(id) > 0; }
  int at(const std::string& id) const {
    auto it = entries.find(id);
    detail::require(it != entries.end(), "no label for patient '" + id + "'");
    return it->second;
  }
  std::size_t size() const { return entries.size(); }
};

inline LabelTable load_labels(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line))
    throw IoError(IoError::Kind::bad_header, "labels '" + path.string() + "': empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "patient_id,label")
    throw IoError(IoError::Kind::bad_header,
                  "labels '" + path.string() + "': first line must be 'patient_id,label', got '" +
                      line + "'");

  LabelTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError(IoError::Kind::bad_label, "labels '" + path.string() + "' line " +
                                                  std::to_string(line_no) + ": missing comma");
    const std::string id = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    if (value != "0" && value != "1")
      throw IoError(IoError::Kind::bad_label,
                    "labels '" + path.string() + "' line " + std::to_string(line_no) +
                        ": label '" + value + "' for patient '" + id + "' must be 0 or 1");
    if (table.entries.count(id))
      throw IoError(IoError::Kind::duplicate_id,
                    "labels '" + path.string() + "': duplicate patient_id '" + id + "'");
    table.entries[id] = value == "1" ? 1 : 0;
  }
  return table;
}

inline void write_labels(const LabelTable& table, const std::filesystem::path& path) {
  std::string bytes = "patient_id,label\n";
  for (const auto& [id, label] : table.entries)
    bytes += id + "," + std::to_string(label) + "\n";
  detail::write_file_bytes(path, bytes);
}

}  // namespace ctam
