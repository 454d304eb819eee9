#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "artic/container.hpp"
#include "artic/features.hpp"
#include "artic/model.hpp"

namespace artic {

// Checkpoint file: magic "ACKP" | u32 LE manifest length | UTF-8 manifest |
// flat f32 LE tensor payload. The manifest records the model config, the
// training-split normalization stats, and name/shape/offset per tensor.

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, FeatureStats> stats;  // keyed "roi" / "raw" / "flow"
  std::vector<std::string> tensor_names;
  std::map<std::string, std::vector<float>> tensors;
};

namespace detail {

inline std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

inline std::string config_to_text(const ModelConfig& c) {
  std::ostringstream out;
  out << "inputs";
  for (auto k : c.inputs) out << ' ' << feature_name(k);
  out << '\n';
  out << "roi_channels " << c.roi_channels << '\n';
  out << "conv1d " << c.conv1d_c1 << ' ' << c.conv1d_c2 << ' ' << c.conv1d_kernel << '\n';
  out << "conv2d " << c.conv2d_channels[0] << ' ' << c.conv2d_channels[1] << ' '
      << c.conv2d_channels[2] << ' ' << c.conv2d_kernel << ' ' << c.conv2d_stride << '\n';
  out << "hidden " << c.hidden << '\n';
  out << "n_classes " << c.n_classes << '\n';
  out << "frame " << c.frame_h << ' ' << c.frame_w << '\n';
  out << "seed " << c.seed << '\n';
  return out.str();
}

inline void config_line(ModelConfig& c, const std::string& key, std::istringstream& ss) {
  if (key == "inputs") {
    c.inputs.clear();
    std::string k;
    while (ss >> k) c.inputs.push_back(parse_feature(k));
  } else if (key == "roi_channels") {
    ss >> c.roi_channels;
  } else if (key == "conv1d") {
    ss >> c.conv1d_c1 >> c.conv1d_c2 >> c.conv1d_kernel;
  } else if (key == "conv2d") {
    ss >> c.conv2d_channels[0] >> c.conv2d_channels[1] >> c.conv2d_channels[2] >> c.conv2d_kernel >>
        c.conv2d_stride;
  } else if (key == "hidden") {
    ss >> c.hidden;
  } else if (key == "n_classes") {
    ss >> c.n_classes;
  } else if (key == "frame") {
    ss >> c.frame_h >> c.frame_w;
  } else if (key == "seed") {
    ss >> c.seed;
  } else {
    throw FormatError("unknown checkpoint config key '" + key + "'", 0);
  }
}

}  // namespace detail

inline void save_checkpoint(const Network& net, const std::map<std::string, FeatureStats>& stats,
                            const std::filesystem::path& path) {
  std::ostringstream manifest;
  manifest << "config\n" << detail::config_to_text(net.config()) << "endconfig\n";
  for (const auto& [key, s] : stats) {
    manifest << "stats " << key;
    for (float v : s.mean) manifest << ' ' << detail::fmt_float(v);
    manifest << " /";
    for (float v : s.std) manifest << ' ' << detail::fmt_float(v);
    manifest << '\n';
  }
  const auto& store = net.params();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto& p = store[i];
    manifest << "tensor " << p.name << ' ' << p.shape.size();
    for (int d : p.shape) manifest << ' ' << d;
    manifest << ' ' << offset << '\n';
    offset += p.size() * 4;
  }

  std::string body = manifest.str();
  std::string buf;
  buf.reserve(8 + body.size() + offset);
  buf.append("ACKP", 4);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(body.size()));
  buf += body;
  for (std::size_t i = 0; i < store.count(); ++i)
    for (float v : store[i].w) detail::put_le<float>(buf, v);
  detail::write_file(path, buf);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, "ACKP") != 0)
    throw FormatError("bad magic, expected ACKP", 0);
  std::size_t off = 4;
  auto mlen = detail::get_le<std::uint32_t>(buf, off);
  if (off + mlen > buf.size()) throw FormatError("truncated manifest", off);
  std::istringstream manifest(buf.substr(off, mlen));
  const std::size_t payload_start = off + mlen;

  Checkpoint ck;
  std::string line;
  bool in_config = false;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> entries;  // name, count, offset
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "config") {
      in_config = true;
    } else if (key == "endconfig") {
      in_config = false;
    } else if (in_config) {
      detail::config_line(ck.config, key, ss);
    } else if (key == "stats") {
      std::string stream, tok;
      ss >> stream;
      FeatureStats s;
      bool second = false;
      while (ss >> tok) {
        if (tok == "/") {
          second = true;
          continue;
        }
        (second ? s.std : s.mean).push_back(std::stof(tok));
      }
      ck.stats[stream] = s;
    } else if (key == "tensor") {
      std::string name;
      std::size_t ndims;
      ss >> name >> ndims;
      std::size_t count = 1;
      for (std::size_t i = 0; i < ndims; ++i) {
        std::size_t d;
        ss >> d;
        count *= d;
      }
      std::size_t t_off;
      ss >> t_off;
      if (!ss) throw FormatError("bad tensor line: " + line, payload_start);
      entries.emplace_back(name, count, t_off);
    } else {
      throw FormatError("unknown manifest key '" + key + "'", off);
    }
  }
  for (auto& [name, count, t_off] : entries) {
    std::size_t pos = payload_start + t_off;
    if (pos + count * 4 > buf.size())
      throw FormatError("truncated tensor payload for " + name, pos);
    std::vector<float> w(count);
    std::memcpy(w.data(), buf.data() + pos, count * 4);
    ck.tensor_names.push_back(name);
    ck.tensors[name] = std::move(w);
  }
  return ck;
}

// Builds a network from a checkpoint; every tensor must match by name and
// element count or the offending tensor is named in the error.
inline Network network_from_checkpoint(const Checkpoint& ck) {
  Network net(ck.config);
  auto& store = net.params();
  for (std::size_t i = 0; i < store.count(); ++i) {
    auto& p = store[i];
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end())
      throw ConfigError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second.size() != p.size())
      throw ConfigError("checkpoint tensor '" + p.name + "' has " +
                        std::to_string(it->second.size()) + " elements, model expects " +
                        std::to_string(p.size()));
    p.w = it->second;
  }
  if (ck.tensors.size() != store.count())
    for (const auto& [name, w] : ck.tensors)
      if (!store.find(name))
        throw ConfigError("checkpoint tensor '" + name + "' has no home in this model config");
  return net;
}

}  // namespace artic
