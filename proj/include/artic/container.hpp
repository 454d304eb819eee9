#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "artic/corpus.hpp"

namespace artic {

// RTMV video container:
//   magic "RTMV" | version u16 LE | T,H,W u32 LE | fps f32 LE | T*H*W f32 LE
// Alignment sidecar: TSV rows `phoneme \t start_frame \t end_frame`.
// Feature tensors reuse the layout with magic "RTMF" and a kind field.

inline constexpr std::uint16_t kContainerVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw FormatError("truncated payload", off);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string(), 0);
}

}  // namespace detail

inline void write_video(const FrameSequence& frames, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(16 + frames.data.size() * 4);
  buf.append("RTMV", 4);
  detail::put_le<std::uint16_t>(buf, kContainerVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(frames.T));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(frames.H));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(frames.W));
  detail::put_le<float>(buf, frames.fps);
  for (float v : frames.data) detail::put_le<float>(buf, v);
  detail::write_file(path, buf);
}

inline FrameSequence read_video(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  std::size_t off = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "RTMV") != 0)
    throw FormatError("bad magic, expected RTMV", 0);
  off = 4;
  auto version = detail::get_le<std::uint16_t>(buf, off);
  if (version != kContainerVersion)
    throw FormatError("unsupported RTMV version " + std::to_string(version), 4);
  FrameSequence f;
  f.T = detail::get_le<std::uint32_t>(buf, off);
  f.H = detail::get_le<std::uint32_t>(buf, off);
  f.W = detail::get_le<std::uint32_t>(buf, off);
  f.fps = detail::get_le<float>(buf, off);
  const std::uint64_t count = static_cast<std::uint64_t>(f.T) * f.H * f.W;
  if (count > (1ull << 32)) throw FormatError("dimension overflow", 6);
  if (buf.size() - off != count * 4)
    throw FormatError("payload size mismatch: want " + std::to_string(count * 4) + " bytes, have " +
                          std::to_string(buf.size() - off),
                      off);
  f.data.resize(count);
  std::memcpy(f.data.data(), buf.data() + off, count * 4);
  return f;
}

inline void write_alignment(const Alignment& alignment, const PhonemeInventory& inv,
                            const std::filesystem::path& path) {
  std::string buf;
  for (const auto& seg : alignment.segments) {
    buf += inv.labels[static_cast<std::size_t>(seg.phoneme)];
    buf += '\t';
    buf += std::to_string(seg.begin);
    buf += '\t';
    buf += std::to_string(seg.end);
    buf += '\n';
  }
  detail::write_file(path, buf);
}

inline Alignment read_alignment(const std::filesystem::path& path, const PhonemeInventory& inv) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  Alignment a;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string label;
    std::size_t b, e;
    if (!(ss >> label >> b >> e))
      throw FormatError("bad alignment row " + std::to_string(lineno), 0);
    int idx = inv.index_of(label);
    if (idx <= 0) throw FormatError("unknown phoneme '" + label + "' in alignment", 0);
    a.segments.push_back({idx, b, e});
  }
  return a;
}

inline void write_inventory(const PhonemeInventory& inv, const std::filesystem::path& path) {
  std::string buf;
  for (const auto& l : inv.labels) {
    buf += l;
    buf += '\n';
  }
  detail::write_file(path, buf);
}

inline PhonemeInventory read_inventory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  PhonemeInventory inv;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) inv.labels.push_back(line);
  inv.validate();
  return inv;
}

// Corpus directory layout: one <id>.rtmv + <id>.align.tsv per utterance,
// plus inventory.txt.
inline void write_container(const std::vector<Utterance>& utterances, const PhonemeInventory& inv,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_inventory(inv, dir / "inventory.txt");
  for (const auto& u : utterances) {
    write_video(u.frames, dir / (u.id + ".rtmv"));
    write_alignment(u.alignment, inv, dir / (u.id + ".align.tsv"));
  }
}

inline std::vector<Utterance> read_container(const std::filesystem::path& dir,
                                             PhonemeInventory* inv_out = nullptr) {
  PhonemeInventory inv = read_inventory(dir / "inventory.txt");
  std::vector<std::filesystem::path> videos;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".rtmv") videos.push_back(entry.path());
  std::sort(videos.begin(), videos.end());
  std::vector<Utterance> out;
  for (const auto& v : videos) {
    Utterance u;
    u.id = v.stem().string();
    u.frames = read_video(v);
    u.alignment = read_alignment(dir / (u.id + ".align.tsv"), inv);
    u.targets = u.alignment.label_sequence();
    u.validate();
    out.push_back(std::move(u));
  }
  if (inv_out) *inv_out = inv;
  return out;
}

// Feature container "RTMF": magic | version u16 | kind u16 | T,C,H,W u32 | fps f32 | payload.
// 1-D feature streams (ROI traces) use H=W=1.
enum class FeatureFileKind : std::uint16_t { Roi = 0, Raw = 1, Flow = 2 };

inline void write_feature(const std::vector<float>& data, FeatureFileKind kind, std::size_t T,
                          std::size_t C, std::size_t H, std::size_t W, float fps,
                          const std::filesystem::path& path) {
  if (data.size() != T * C * H * W) throw ShapeError("feature payload size mismatch");
  std::string buf;
  buf.reserve(26 + data.size() * 4);
  buf.append("RTMF", 4);
  detail::put_le<std::uint16_t>(buf, kContainerVersion);
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(kind));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(T));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(C));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(H));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(W));
  detail::put_le<float>(buf, fps);
  for (float v : data) detail::put_le<float>(buf, v);
  detail::write_file(path, buf);
}

struct FeatureFile {
  FeatureFileKind kind;
  std::size_t T, C, H, W;
  float fps;
  std::vector<float> data;
};

inline FeatureFile read_feature(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  if (buf.size() < 4 || buf.compare(0, 4, "RTMF") != 0)
    throw FormatError("bad magic, expected RTMF", 0);
  std::size_t off = 4;
  auto version = detail::get_le<std::uint16_t>(buf, off);
  if (version != kContainerVersion)
    throw FormatError("unsupported RTMF version " + std::to_string(version), 4);
  FeatureFile f;
  f.kind = static_cast<FeatureFileKind>(detail::get_le<std::uint16_t>(buf, off));
  f.T = detail::get_le<std::uint32_t>(buf, off);
  f.C = detail::get_le<std::uint32_t>(buf, off);
  f.H = detail::get_le<std::uint32_t>(buf, off);
  f.W = detail::get_le<std::uint32_t>(buf, off);
  f.fps = detail::get_le<float>(buf, off);
  const std::uint64_t count = static_cast<std::uint64_t>(f.T) * f.C * f.H * f.W;
  if (count > (1ull << 32)) throw FormatError("dimension overflow", 8);
  if (buf.size() - off != count * 4) throw FormatError("payload size mismatch", off);
  f.data.resize(count);
  std::memcpy(f.data.data(), buf.data() + off, count * 4);
  return f;
}

}  // namespace artic
