#include "hmhi/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace hmhi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw ConfigError(key + ": not a number: '" + text + "'");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + text + "'");
  }
  return v;
}

int to_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  int v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw ConfigError(key + ": not an integer: '" + text + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "on") return true;
  if (t == "false" || t == "0" || t == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + text + "'");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Ordered so format_config groups keys by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto dbl = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[getter](const RunConfig& c) { return fmt_double(getter(const_cast<RunConfig&>(c))); },
                    [getter, key](RunConfig& c, const std::string& v) { getter(c) = to_double(key, v); }}});
    };
    auto boolean = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[getter](const RunConfig& c) { return std::string(getter(const_cast<RunConfig&>(c)) ? "true" : "false"); },
                    [getter, key](RunConfig& c, const std::string& v) { getter(c) = to_bool(key, v); }}});
    };
    auto count = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[getter](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); },
                    [getter, key](RunConfig& c, const std::string& v) {
                      getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(to_u64(key, v));
                    }}});
    };

    count("model.side", [](RunConfig& c) -> std::size_t& { return c.pyramid.side; });
    t.push_back({"model.channels",
                 {[](const RunConfig& c) {
                    std::string s;
                    for (std::size_t i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(c.pyramid.channels[i]);
                    return s;
                  },
                  [](RunConfig& c, const std::string& v) {
                    std::stringstream ss(v);
                    std::string item;
                    std::vector<std::size_t> vals;
                    while (std::getline(ss, item, ',')) vals.push_back(to_u64("model.channels", item));
                    if (vals.size() != 4) throw ConfigError("model.channels: expected four comma-separated values");
                    for (std::size_t i = 0; i < 4; ++i) c.pyramid.channels[i] = vals[i];
                  }}});
    count("model.heads", [](RunConfig& c) -> std::size_t& { return c.attention.heads; });
    boolean("model.out_proj", [](RunConfig& c) -> bool& { return c.attention.out_proj; });
    count("model.ffn_ratio", [](RunConfig& c) -> std::size_t& { return c.ffn_ratio; });
    boolean("model.share_towers", [](RunConfig& c) -> bool& { return c.share_towers; });
    boolean("model.self_attn_residual", [](RunConfig& c) -> bool& { return c.self_attn_residual; });

    count("memory.capacity", [](RunConfig& c) -> std::size_t& { return c.memory_capacity; });
    count("memory.stride", [](RunConfig& c) -> std::size_t& { return c.memory_stride; });
    t.push_back({"memory.levels",
                 {[](const RunConfig& c) { return format_levels(c.memory_levels); },
                  [](RunConfig& c, const std::string& v) { c.memory_levels = parse_levels(v); }}});
    boolean("memory.detach", [](RunConfig& c) -> bool& { return c.detach_memory; });

    t.push_back({"interaction.mode",
                 {[](const RunConfig& c) { return to_string(c.interaction); },
                  [](RunConfig& c, const std::string& v) { c.interaction = parse_interaction_mode(trim(v)); }}});
    t.push_back({"input.mode",
                 {[](const RunConfig& c) { return to_string(c.input_mode); },
                  [](RunConfig& c, const std::string& v) { c.input_mode = parse_input_mode(trim(v)); }}});

    count("train.sequence_length", [](RunConfig& c) -> std::size_t& { return c.sequence_length; });
    count("train.steps", [](RunConfig& c) -> std::size_t& { return c.steps; });
    count("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    dbl("train.lr", [](RunConfig& c) -> double& { return c.optim.lr; });
    dbl("train.beta1", [](RunConfig& c) -> double& { return c.optim.beta1; });
    dbl("train.beta2", [](RunConfig& c) -> double& { return c.optim.beta2; });
    dbl("train.adam_eps", [](RunConfig& c) -> double& { return c.optim.eps; });
    dbl("train.weight_decay", [](RunConfig& c) -> double& { return c.optim.weight_decay; });

    dbl("loss.w_bce", [](RunConfig& c) -> double& { return c.loss.w_bce; });
    dbl("loss.w_focal", [](RunConfig& c) -> double& { return c.loss.w_focal; });
    dbl("loss.w_dice", [](RunConfig& c) -> double& { return c.loss.w_dice; });
    dbl("loss.gamma", [](RunConfig& c) -> double& { return c.loss.focal_gamma; });
    dbl("loss.dice_eps", [](RunConfig& c) -> double& { return c.loss.dice_eps; });

    dbl("eval.threshold", [](RunConfig& c) -> double& { return c.threshold; });
    t.push_back({"eval.boundary_tolerance",
                 {[](const RunConfig& c) { return std::to_string(c.boundary_tolerance); },
                  [](RunConfig& c, const std::string& v) { c.boundary_tolerance = to_int("eval.boundary_tolerance", v); }}});
    return t;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  pyramid.validate();
  if (attention.heads == 0) throw ConfigError("model.heads must be positive");
  for (std::size_t c : pyramid.channels) {
    if (c % attention.heads != 0) throw ConfigError("every channel width must be divisible by model.heads");
  }
  if (ffn_ratio == 0) throw ConfigError("model.ffn_ratio must be positive");
  if (memory_capacity == 0) throw ConfigError("memory.capacity must be positive");
  if (memory_stride == 0) throw ConfigError("memory.stride must be positive");
  if (sequence_length == 0) throw ConfigError("train.sequence_length must be positive");
  for (int l : memory_levels) {
    if (l < 1 || l > 4) throw ConfigError("memory.levels must be a subset of {1,2,3,4}");
  }
  loss.validate();
  if (optim.lr < 0) throw ConfigError("train.lr must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("eval.threshold must be in (0, 1)");
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  find_field(trim(key)).set(config, value);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: '" + assignment + "'");
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (!body.data().empty()) apply_override(base, section, body.data());
      continue;
    }
    for (const auto& [key, value] : body) apply_override(base, section + "." + key, value.data());
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get(config) << '\n';
  }
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

std::string format_levels(const std::set<int>& levels) {
  std::string s;
  for (int l : levels) s += (s.empty() ? "" : ",") + std::to_string(l);
  return s;
}

std::set<int> parse_levels(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const int l = to_int("memory.levels", item);
    if (l < 1 || l > 4) throw ConfigError("memory.levels: level " + item + " outside 1..4");
    out.insert(l);
  }
  return out;
}

}  // namespace hmhi
