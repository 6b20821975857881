#pragma once

// Versioned text checkpoint: a sorted key -> matrix map. Each entry is a
// "<key> <rows> <cols>" header followed by one line per row of hexadecimal
// floating-point values, so a write/read cycle is bit-exact.

#include "wbt/error.hpp"
#include "wbt/model.hpp"
#include "wbt/types.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace wbt {

using Checkpoint = std::map<std::string, Matrix>;

inline constexpr const char* kCheckpointMagic = "wbt-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << "entries " << ckpt.size() << '\n';
  char buf[64];
  for (const auto& [key, m] : ckpt) {
    if (key.empty() || key.find_first_of(" \t\n") != std::string::npos)
      throw ValidationError("checkpoint key must be non-empty without whitespace: '" + key + "'");
    out << key << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, m(i, j), std::chars_format::hex);
        if (j > 0) out << ' ';
        out.write(buf, ptr - buf);
      }
      out << '\n';
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<stream>") {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic)
    throw ValidationError(source + ": not a checkpoint file");
  if (version != kCheckpointVersion)
    throw ValidationError(source + ": unsupported checkpoint version " + std::to_string(version));
  std::string label;
  std::size_t entries = 0;
  if (!(in >> label >> entries) || label != "entries") throw ValidationError(source + ": missing entry count");
  Checkpoint ckpt;
  std::string token;
  for (std::size_t e = 0; e < entries; ++e) {
    std::string key;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> key >> rows >> cols) || rows < 0 || cols < 0)
      throw ValidationError(source + ": malformed header for entry " + std::to_string(e));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!(in >> token)) throw ValidationError(source + ": truncated values for '" + key + "'");
      std::string_view s = token;
      bool negative = false;
      if (!s.empty() && s.front() == '-') {
        negative = true;
        s.remove_prefix(1);
      }
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x, std::chars_format::hex);
      if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError(source + ": bad value '" + token + "' in '" + key + "'");
      m.data()[i] = negative ? -x : x;
    }
    if (!ckpt.emplace(key, std::move(m)).second) throw ValidationError(source + ": duplicate key '" + key + "'");
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(ckpt, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  return read_checkpoint(in, path);
}

/// Flattens model, decoder and scalar metadata into one checkpoint.
inline Checkpoint to_checkpoint(const ModelState& state, const DecoderParams* decoder,
                                const std::map<std::string, double>& meta = {}) {
  Checkpoint ckpt;
  auto put = [&](const std::string& name, const Matrix& m) { ckpt[name] = m; };
  visit_params(state.online, "online.", put);
  visit_params(state.target, "target.", put);
  if (decoder != nullptr) visit_decoder(*decoder, "decoder.", put);
  ckpt["meta.tau"] = Matrix::Constant(1, 1, state.tau);
  for (const auto& [k, v] : meta) ckpt["meta." + k] = Matrix::Constant(1, 1, v);
  return ckpt;
}

namespace detail {

inline const Matrix& require_key(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.find(key);
  if (it == ckpt.end()) throw ValidationError("checkpoint is missing '" + key + "'");
  return it->second;
}

inline Network network_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  Network net;
  std::size_t layers = 0;
  while (ckpt.contains(prefix + "encoder.layers." + std::to_string(layers) + ".weight")) ++layers;
  if (layers == 0) throw ValidationError("checkpoint has no encoder layers under '" + prefix + "'");
  net.encoder.layers.resize(layers);
  visit_params(net, prefix, [&](const std::string& name, Matrix& m) { m = require_key(ckpt, name); });
  return net;
}

}  // namespace detail

inline ModelState state_from_checkpoint(const Checkpoint& ckpt) {
  ModelState s;
  s.online = detail::network_from_checkpoint(ckpt, "online.");
  s.target = detail::network_from_checkpoint(ckpt, "target.");
  s.tau = detail::require_key(ckpt, "meta.tau")(0, 0);
  return s;
}

inline DecoderParams decoder_from_checkpoint(const Checkpoint& ckpt) {
  DecoderParams dec;
  std::size_t layers = 0;
  while (ckpt.contains("decoder.layers." + std::to_string(layers) + ".weight")) ++layers;
  if (layers == 0) throw ValidationError("checkpoint has no decoder");
  dec.layers.resize(layers);
  visit_decoder(dec, "decoder.", [&](const std::string& name, Matrix& m) { m = detail::require_key(ckpt, name); });
  return dec;
}

inline std::optional<double> checkpoint_meta(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.find("meta." + key);
  if (it == ckpt.end()) return std::nullopt;
  return it->second(0, 0);
}

}  // namespace wbt
