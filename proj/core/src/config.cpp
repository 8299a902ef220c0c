#include "scca/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "scca/csv.hpp"

namespace scca::train {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: invalid value '" + value + "' for key '" + key + "'");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v);
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) bad_value(key, v);
  return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

#define SIZE_FIELD(name, member)                                                              \
  {name, {[](const TrainConfig& c) { return std::to_string(c.member); },                     \
          [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }}}
#define DOUBLE_FIELD(name, member)                                                            \
  {name, {[](const TrainConfig& c) { return format_double(c.member); },                      \
          [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }}}
#define BOOL_FIELD(name, member)                                                              \
  {name, {[](const TrainConfig& c) { return from_bool(c.member); },                          \
          [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data", {[](const TrainConfig& c) { return c.data; },
                [](TrainConfig& c, const std::string&, const std::string& v) { c.data = v; }}},
      SIZE_FIELD("val_count", val_count),
      SIZE_FIELD("image_size", image_size),
      {"channels", {[](const TrainConfig& c) { return from_list(c.channels); },
                    [](TrainConfig& c, const std::string& k, const std::string& v) { c.channels = to_list(k, v); }}},
      SIZE_FIELD("blocks_per_stage", blocks_per_stage),
      {"head", {[](const TrainConfig& c) { return net::to_string(c.head); },
                [](TrainConfig& c, const std::string&, const std::string& v) { c.head = net::parse_head_kind(v); }}},
      {"attention",
       {[](const TrainConfig& c) { return net::to_string(c.attention); },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.attention = net::parse_attention_mode(v); }}},
      SIZE_FIELD("k", k),
      BOOL_FIELD("dynamic", dynamic),
      SIZE_FIELD("expansion", expansion),
      SIZE_FIELD("hidden", hidden),
      SIZE_FIELD("graph_blocks", graph_blocks),
      SIZE_FIELD("node_kernel", node_kernel),
      SIZE_FIELD("fc_hidden", fc_hidden),
      SIZE_FIELD("batch_size", batch_size),
      SIZE_FIELD("epochs", epochs),
      DOUBLE_FIELD("lr", lr),
      DOUBLE_FIELD("lr_drop", lr_drop),
      SIZE_FIELD("lr_period", lr_period),
      DOUBLE_FIELD("momentum", momentum),
      DOUBLE_FIELD("weight_decay", weight_decay),
      {"loss", {[](const TrainConfig& c) { return loss::to_string(c.loss.kind); },
                [](TrainConfig& c, const std::string&, const std::string& v) { c.loss.kind = loss::parse_loss_kind(v); }}},
      DOUBLE_FIELD("omega", loss.omega),
      DOUBLE_FIELD("omega1", loss.omega1),
      DOUBLE_FIELD("omega2", loss.omega2),
      DOUBLE_FIELD("epsilon", loss.epsilon),
      BOOL_FIELD("visibility_mask", visibility_mask),
      BOOL_FIELD("augment", augment),
      DOUBLE_FIELD("aug_rotation", augmentation.max_rotation_deg),
      DOUBLE_FIELD("aug_translation", augmentation.max_translation),
      DOUBLE_FIELD("aug_flip", augmentation.flip_prob),
      DOUBLE_FIELD("aug_rescale", augmentation.max_rescale),
      DOUBLE_FIELD("aug_occlusion", augmentation.occlusion_prob),
      DOUBLE_FIELD("aug_occlusion_fraction", augmentation.occlusion_fraction),
      {"seed", {[](const TrainConfig& c) { return std::to_string(c.seed); },
                [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }}},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr / std::pow(cfg.lr_drop, static_cast<double>(epoch / cfg.lr_period));
}

TrainConfig reference_config() {
  TrainConfig c;
  c.image_size = 256;
  c.channels = {64, 64, 128, 256, 512};
  c.hidden = 128;
  c.batch_size = 64;
  c.epochs = 300;
  c.lr_period = 100;
  return c;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config: " + key + " " + why);
  };
  if (!(c.lr > 0)) fail("lr", "must be positive");
  if (!(c.lr_drop > 1)) fail("lr_drop", "must be greater than 1");
  if (c.lr_period == 0) fail("lr_period", "must be positive");
  if (!(c.momentum >= 0 && c.momentum < 1)) fail("momentum", "must lie in [0, 1)");
  if (!(c.weight_decay >= 0)) fail("weight_decay", "must be non-negative");
  if (c.batch_size < 2) fail("batch_size", "must be at least 2 (batch normalisation)");
  if (c.epochs == 0) fail("epochs", "must be positive");
  if (c.k == 0) fail("k", "must be positive");
  const auto& a = c.augmentation;
  if (!(a.flip_prob >= 0 && a.flip_prob <= 1)) fail("aug_flip", "must lie in [0, 1]");
  if (!(a.occlusion_prob >= 0 && a.occlusion_prob <= 1)) fail("aug_occlusion", "must lie in [0, 1]");
  if (!(a.occlusion_fraction > 0 && a.occlusion_fraction < 1)) fail("aug_occlusion_fraction", "must lie in (0, 1)");
  if (!(a.max_rescale >= 0 && a.max_rescale < 1)) fail("aug_rescale", "must lie in [0, 1)");
  c.loss.validate();
  const net::ModelConfig mc = model_config(c);
  net::validate(mc.backbone);
  net::validate(mc.scc);
}

net::ModelConfig model_config(const TrainConfig& c) {
  net::ModelConfig m;
  m.backbone.channels = c.channels;
  m.backbone.blocks_per_stage = c.blocks_per_stage;
  m.backbone.image_size = c.image_size;
  m.attention = c.attention;
  m.head = c.head;
  m.scc.expansion = c.expansion;
  m.scc.hidden = c.hidden;
  m.scc.blocks = c.graph_blocks;
  m.scc.node_kernel = c.node_kernel;
  m.scc.dynamic = c.dynamic;
  m.fc_hidden = c.fc_hidden;
  return m;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

std::map<std::string, std::string> to_key_values(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [name, f] : fields()) out[name] = f.get(cfg);
  return out;
}

void apply_key_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(cfg) + "\n";
  return out;
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    apply_key_value(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace scca::train
