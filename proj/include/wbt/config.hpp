#pragma once

// Typed key-value configuration for VariantConfig.
//
// File format, one entry per line, '#' starts a comment:
//   <type> <key> = <value>
// where <type> is bool, int, double, list (comma-separated ints) or string.
// The declared type must match the field's type.

#include "wbt/error.hpp"
#include "wbt/graph.hpp"
#include "wbt/trainer.hpp"

#include "json.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace wbt {

struct ConfigField {
  std::string name;
  std::string type;
  std::function<void(VariantConfig&, const std::string&)> set;
  std::function<nlohmann::json(const VariantConfig&)> get;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ValidationError("config '" + key + "': expected a bool, got '" + s + "'");
}

inline Index parse_index(const std::string& key, const std::string& s) {
  unsigned long long v = 0;
  if (!parse_number(trim(s), v)) throw ValidationError("config '" + key + "': expected an integer, got '" + s + "'");
  return static_cast<Index>(v);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  if (!parse_number(trim(s), v) || !std::isfinite(v))
    throw ValidationError("config '" + key + "': expected a number, got '" + s + "'");
  return v;
}

inline std::vector<Index> parse_list(const std::string& key, const std::string& s) {
  std::vector<Index> out;
  for (std::string_view part : split_csv(s))
    if (!part.empty()) out.push_back(parse_index(key, std::string(part)));
  return out;
}

inline HitsMode parse_hits_mode(const std::string& s) {
  if (s == "negative_pool") return HitsMode::NegativePool;
  if (s == "top_k_of_all") return HitsMode::TopKOfAll;
  throw ValidationError("config 'hits_mode': expected negative_pool or top_k_of_all, got '" + s + "'");
}

inline std::string hits_mode_name(HitsMode m) {
  return m == HitsMode::NegativePool ? "negative_pool" : "top_k_of_all";
}

}  // namespace detail

/// Every configurable VariantConfig field, in a fixed order.
inline const std::vector<ConfigField>& config_fields() {
  using nlohmann::json;
#define WBT_BOOL(field) \
  ConfigField{#field, "bool", [](VariantConfig& c, const std::string& s) { c.field = detail::parse_bool(#field, s); }, \
              [](const VariantConfig& c) { return json(c.field); }}
#define WBT_INT(field) \
  ConfigField{#field, "int", [](VariantConfig& c, const std::string& s) { c.field = detail::parse_index(#field, s); }, \
              [](const VariantConfig& c) { return json(c.field); }}
#define WBT_DOUBLE(field)                                                                                     \
  ConfigField{#field, "double",                                                                               \
              [](VariantConfig& c, const std::string& s) { c.field = detail::parse_double(#field, s); },      \
              [](const VariantConfig& c) { return json(c.field); }}
  static const std::vector<ConfigField> fields = {
      WBT_BOOL(wp),
      WBT_BOOL(wb),
      WBT_DOUBLE(lambda),
      WBT_DOUBLE(tau),
      WBT_INT(input_dim),
      WBT_INT(hidden_dim),
      WBT_INT(output_dim),
      WBT_INT(num_layers),
      WBT_INT(head_hidden_dim),
      ConfigField{"decoder_hidden", "list",
                  [](VariantConfig& c, const std::string& s) { c.decoder_hidden = detail::parse_list("decoder_hidden", s); },
                  [](const VariantConfig& c) { return json(c.decoder_hidden); }},
      WBT_DOUBLE(dropout),
      WBT_DOUBLE(lr),
      WBT_DOUBLE(weight_decay),
      WBT_INT(batch_size),
      WBT_INT(pretrain_epochs),
      WBT_INT(decoder_epochs),
      WBT_INT(patience),
      WBT_DOUBLE(feature_drop_p),
      WBT_DOUBLE(edge_base_keep),
      WBT_DOUBLE(unk_rate),
      WBT_DOUBLE(monitor_fraction),
      WBT_INT(monitor_negative_factor),
      WBT_DOUBLE(test_negative_ratio),
      WBT_INT(hits_k),
      ConfigField{"hits_mode", "string",
                  [](VariantConfig& c, const std::string& s) { c.hits_mode = detail::parse_hits_mode(s); },
                  [](const VariantConfig& c) { return json(detail::hits_mode_name(c.hits_mode)); }},
      WBT_DOUBLE(threshold),
      WBT_BOOL(relu_on_output),
      WBT_BOOL(loss_on_raw_embeddings),
      WBT_BOOL(symmetrize),
  };
#undef WBT_BOOL
#undef WBT_INT
#undef WBT_DOUBLE
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const ConfigField& f : config_fields())
    if (f.name == key) return f;
  throw ValidationError("unknown config key '" + key + "'");
}

inline void set_config_value(VariantConfig& cfg, const std::string& key, const std::string& value) {
  config_field(key).set(cfg, value);
}

/// Applies every entry of a config text on top of `cfg`.
inline void apply_config_text(VariantConfig& cfg, std::istream& in, const std::string& source = "<config>") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, lineno, "expected '<type> <key> = <value>'");
    std::istringstream lhs{std::string(body.substr(0, eq))};
    std::string type, key, extra;
    if (!(lhs >> type >> key) || (lhs >> extra)) throw ParseError(source, lineno, "expected '<type> <key> = <value>'");
    const std::string value(detail::trim(body.substr(eq + 1)));
    const ConfigField* field = nullptr;
    try {
      field = &config_field(key);
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
    if (field->type != type)
      throw ParseError(source, lineno, "key '" + key + "' has type " + field->type + ", not " + type);
    try {
      field->set(cfg, value);
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
}

inline void apply_config_file(VariantConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  apply_config_text(cfg, in, path);
}

inline nlohmann::json config_to_json(const VariantConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const ConfigField& f : config_fields()) j[f.name] = f.get(cfg);
  j["split_fractions"] = {cfg.fractions.train, cfg.fractions.val, cfg.fractions.test};
  j["variant"] = cfg.variant_name();
  return j;
}

/// Renders a config in the file format; reading it back reproduces `cfg`.
inline std::string config_to_text(const VariantConfig& cfg) {
  std::ostringstream out;
  for (const ConfigField& f : config_fields()) {
    const nlohmann::json v = f.get(cfg);
    out << f.type << ' ' << f.name << " = ";
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i].get<Index>();
    } else if (v.is_string()) {
      out << v.get<std::string>();
    } else if (v.is_number_float()) {
      out << detail::format_double(v.get<double>());
    } else {
      out << v.dump();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace wbt
