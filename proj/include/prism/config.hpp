#pragma once

// Flat key=value run configuration. One key per line, '#' starts a comment,
// whitespace around keys and values is ignored. Unknown or repeated keys are
// parse errors. Keys left out keep their defaults and are reported back so
// the caller can log them. K and seed feed both data generation and training.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prism/data.hpp"
#include "prism/errors.hpp"
#include "prism/experiment.hpp"
#include "prism/rng.hpp"
#include "prism/training.hpp"

namespace prism {

struct RunConfig {
  ExperimentConfig exp;
  std::uint64_t seed = 7;
  std::string data_dir = "data";
  std::string checkpoint = "model.prsm";
  std::string out_dir = "out";

  // Sub-seeds follow the per-purpose offsets; fit() derives its own from the
  // training seed.
  SynthConfig synth() const {
    auto s = exp.synth;
    s.seed = seed + seed_offset::kData;
    return s;
  }
  TrainConfig train() const {
    auto t = exp.train;
    t.seed = seed;
    return t;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_real(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty())
    throw ParseError("bad value for '" + key + "': '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("bad value for '" + key + "': '" + value + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  if (value.empty() || value == "none") return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

inline std::string format_sizes(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Ordered so that to_text() is stable.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  using S = std::size_t;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto real = [&t](std::string k, auto member) {
      t.push_back({k, {[k, member](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(k, v); },
                       [member](const RunConfig& c) { return format_real(member(const_cast<RunConfig&>(c))); }}});
    };
    auto count = [&t](std::string k, auto member) {
      t.push_back({k, {[k, member](RunConfig& c, const std::string& v) { member(c) = parse_number<S>(k, v); },
                       [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }}});
    };
    auto text = [&t](std::string k, auto member) {
      t.push_back({k, {[member](RunConfig& c, const std::string& v) { member(c) = v; },
                       [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }}});
    };

    t.push_back({"seed", {[](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                          [](const RunConfig& c) { return std::to_string(c.seed); }}});
    t.push_back({"K", {[](RunConfig& c, const std::string& v) {
                         c.exp.synth.classes = c.exp.train.classes = parse_number<S>("K", v);
                       },
                       [](const RunConfig& c) { return std::to_string(c.exp.train.classes); }}});
    count("D", [](RunConfig& c) -> S& { return c.exp.synth.input_dim; });
    count("n_per_class", [](RunConfig& c) -> S& { return c.exp.synth.n_per_class; });
    real("id_mean_scale", [](RunConfig& c) -> double& { return c.exp.synth.id_mean_scale; });
    real("cluster_std", [](RunConfig& c) -> double& { return c.exp.synth.cluster_std; });
    count("n_ood_clusters", [](RunConfig& c) -> S& { return c.exp.synth.n_ood_clusters; });
    real("ood_shift", [](RunConfig& c) -> double& { return c.exp.synth.ood_shift; });

    real("lambda", [](RunConfig& c) -> double& { return c.exp.train.lambda; });
    count("M", [](RunConfig& c) -> S& { return c.exp.train.pseudo_labels; });
    t.push_back({"hidden", {[](RunConfig& c, const std::string& v) { c.exp.train.hidden = parse_sizes("hidden", v); },
                            [](const RunConfig& c) { return format_sizes(c.exp.train.hidden); }}});
    count("embed", [](RunConfig& c) -> S& { return c.exp.train.embed; });
    count("epochs", [](RunConfig& c) -> S& { return c.exp.train.epochs; });
    count("batch_size", [](RunConfig& c) -> S& { return c.exp.train.batch_size; });
    real("lr_theta", [](RunConfig& c) -> double& { return c.exp.train.lr_theta; });
    real("lr_B", [](RunConfig& c) -> double& { return c.exp.train.lr_B; });
    real("momentum", [](RunConfig& c) -> double& { return c.exp.train.momentum; });
    real("weight_decay_theta", [](RunConfig& c) -> double& { return c.exp.train.weight_decay_theta; });
    real("weight_decay_B", [](RunConfig& c) -> double& { return c.exp.train.weight_decay_B; });
    t.push_back({"optimizer_B", {[](RunConfig& c, const std::string& v) {
                                   if (v == "sgd") c.exp.train.optimizer_B = OptimizerKind::sgd;
                                   else if (v == "adam") c.exp.train.optimizer_B = OptimizerKind::adam;
                                   else throw ParseError("bad value for 'optimizer_B': '" + v + "'");
                                 },
                                 [](const RunConfig& c) {
                                   return std::string(c.exp.train.optimizer_B == OptimizerKind::sgd ? "sgd" : "adam");
                                 }}});
    t.push_back({"inversion", {[](RunConfig& c, const std::string& v) {
                                 if (v == "exact") c.exp.train.inversion.kind = Inversion::Kind::exact;
                                 else if (v == "neumann") c.exp.train.inversion.kind = Inversion::Kind::neumann;
                                 else throw ParseError("bad value for 'inversion': '" + v + "'");
                               },
                               [](const RunConfig& c) {
                                 return std::string(c.exp.train.inversion.kind == Inversion::Kind::exact ? "exact"
                                                                                                         : "neumann");
                               }}});
    count("neumann_order", [](RunConfig& c) -> S& { return c.exp.train.inversion.order; });
    t.push_back({"init_variant",
                 {[](RunConfig& c, const std::string& v) {
                    c.exp.train.init_variant = parse_init_variant(v);
                  },
                  [](const RunConfig& c) { return std::string(to_string(c.exp.train.init_variant)); }}});
    t.push_back({"freeze_B_in_reg",
                 {[](RunConfig& c, const std::string& v) { c.exp.train.freeze_B_in_reg = parse_bool("freeze_B_in_reg", v); },
                  [](const RunConfig& c) { return std::string(c.exp.train.freeze_B_in_reg ? "true" : "false"); }}});

    count("k", [](RunConfig& c) -> S& { return c.exp.k; });
    real("tpr_level", [](RunConfig& c) -> double& { return c.exp.tpr; });
    text("data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; });
    text("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; });
    text("out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; });
    return t;
  }();
  return table;
}

inline const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ParseError("unknown config key '" + key + "'");
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : detail::fields()) out.push_back(k);
  return out;
}

// Sets one key. Used for both file lines and command-line overrides.
inline void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  detail::field(key).set(cfg, detail::trim(value));
}

inline std::string get_key(const RunConfig& cfg, const std::string& key) { return detail::field(key).get(cfg); }

struct ParsedConfig {
  RunConfig config;
  std::vector<std::string> defaulted;  // keys absent from the text
};

inline ParsedConfig parse_config(std::string_view text) {
  ParsedConfig out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected key=value");
    const auto key = detail::trim(std::string_view(body).substr(0, eq));
    if (!seen.insert(key).second) throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      set_key(out.config, key, body.substr(eq + 1));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& key : config_keys())
    if (!seen.count(key)) out.defaulted.push_back(key);
  return out;
}

inline ParsedConfig load_config(const std::string& path) { return parse_config(detail::read_file(path)); }

// Every key in table order; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + "=" + f.get(cfg) + "\n";
  return out;
}

}  // namespace prism
