#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "caeav/errors.hpp"
#include "caeav/harness.hpp"

namespace caeav {

double TrainConfig::lr(int epoch) const {
  if (epoch < 0) throw UsageError("lr: negative epoch");
  return lr0 * std::pow(1.0 - lr_decay, std::floor(static_cast<double>(epoch) / decay_every));
}

void TrainConfig::resolve() {
  model.c_visual = data.c_visual;
  model.c_audio = data.c_audio;
  model.c_text = data.c_text;
  model.n_classes = data.n_classes;
  data.seed = seed;
}

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (!(lr_decay >= 0 && lr_decay < 1)) throw ConfigError("train.lr_decay must lie in [0, 1)");
  if (decay_every < 1) throw ConfigError("train.decay_every must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_episodes == 0) throw ConfigError("train.batch_episodes must be >= 1");
  if (n_train == 0 || n_test == 0) throw ConfigError("data.n_train and data.n_test must be >= 1");
  if (loss.alpha < 0 || loss.beta < 0 || loss.gamma < 0) throw ConfigError("loss weights must be nonnegative");
  if (!(loss.tau > 0)) throw ConfigError("loss.tau must be positive");
  if (loss.entropy_sign != 1 && loss.entropy_sign != -1) throw ConfigError("loss.entropy_sign must be +1 or -1");
  if (loss.gamma_warmup_epochs < 0) throw ConfigError("loss.gamma_warmup_epochs must be >= 0");
  if (ablation_seeds.empty()) throw ConfigError("ablate.seeds must list at least one seed");
}

PresetValues preset_values(TaskPreset p) {
  switch (p) {
    case TaskPreset::Avqa: return {1e-4, 0.08, 0.03, 0.005, 5};
    case TaskPreset::AvsS4: return {3e-4, 0.10, 0.05, 0.005, 15};
    case TaskPreset::AvsMs3: return {1.5e-4, 0.10, 0.05, 0.005, 8};
    case TaskPreset::Ave: return {5e-4, 0.10, 0.05, 0.003, 5};
    case TaskPreset::Avvp: return {3e-4, 0.10, 0.05, 0.003, 5};
    case TaskPreset::Synthetic: return {0.2, 0.10, 0.05, 0.003, 5};
  }
  throw ConfigError("unknown preset");
}

void apply_preset(TrainConfig& cfg, TaskPreset p) {
  cfg.preset = p;
  cfg.model.apply_preset(p);
  const PresetValues v = preset_values(p);
  cfg.lr0 = v.lr0;
  cfg.loss.alpha = v.alpha;
  cfg.loss.beta = v.beta;
  cfg.loss.gamma = v.gamma;
  cfg.loss.gamma_warmup_epochs = v.warmup;
}

namespace {

std::string fmt_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* b = s.data();
  const char* e = b + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError("config: bad value '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean '" + s + "' for " + key);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(static_cast<unsigned long long>(xs[i]));
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

Field size_field(std::string key, std::size_t& r) {
  return {key, [&r, key](const std::string& s) { r = parse_number<std::size_t>(key, s); },
          [&r] { return std::to_string(r); }};
}
Field int_field(std::string key, int& r) {
  return {key, [&r, key](const std::string& s) { r = parse_number<int>(key, s); }, [&r] { return std::to_string(r); }};
}
Field u64_field(std::string key, std::uint64_t& r) {
  return {key, [&r, key](const std::string& s) { r = parse_number<std::uint64_t>(key, s); },
          [&r] { return std::to_string(r); }};
}
Field double_field(std::string key, double& r) {
  return {key, [&r, key](const std::string& s) { r = parse_number<double>(key, s); }, [&r] { return fmt_double(r); }};
}
Field bool_field(std::string key, bool& r) {
  return {key, [&r, key](const std::string& s) { r = parse_bool(key, s); },
          [&r] { return std::string(r ? "true" : "false"); }};
}

// TrainConfig is taken by non-const reference so one table serves both directions.
std::vector<Field> fields(TrainConfig& c) {
  ModelConfig& m = c.model;
  GenConfig& d = c.data;
  LossWeights& l = c.loss;
  return {
      {"train.preset", [&c](const std::string& s) { c.preset = preset_from_string(s); },
       [&c] { return to_string(c.preset); }},
      u64_field("train.seed", c.seed),
      int_field("train.epochs", c.epochs),
      double_field("train.lr0", c.lr0),
      double_field("train.lr_decay", c.lr_decay),
      int_field("train.decay_every", c.decay_every),
      size_field("train.batch_episodes", c.batch_episodes),
      {"train.caption_file", [&c](const std::string& s) { c.caption_file = s; }, [&c] { return c.caption_file; }},
      {"ablate.seeds", [&c](const std::string& s) { c.ablation_seeds = parse_list<std::uint64_t>("ablate.seeds", s); },
       [&c] { return join(c.ablation_seeds); }},
      size_field("data.n_train", c.n_train),
      size_field("data.n_test", c.n_test),
      size_field("data.n_classes", d.n_classes),
      size_field("data.frames", d.frames),
      size_field("data.tokens_visual", d.tokens_visual),
      size_field("data.tokens_audio", d.tokens_audio),
      size_field("data.c_visual", d.c_visual),
      size_field("data.c_audio", d.c_audio),
      size_field("data.c_text", d.c_text),
      size_field("data.caption_tokens", d.caption_tokens),
      double_field("data.noise_sigma", d.noise_sigma),
      double_field("data.misalign_fraction", d.misalign_fraction),
      size_field("data.offscreen_span", d.offscreen_span),
      size_field("model.layers", m.layers),
      size_field("model.heads", m.heads),
      size_field("model.n_unimodal_experts", m.n_unimodal_experts),
      size_field("model.n_crossmodal_experts", m.n_crossmodal_experts),
      size_field("model.expert_bottleneck", m.expert_bottleneck),
      size_field("model.ffn_mult", m.ffn_mult),
      size_field("model.embed_dim", m.embed_dim),
      {"model.insertion_location",
       [&m](const std::string& s) { m.insertion_location = location_from_string(s); },
       [&m] { return to_string(m.insertion_location); }},
      bool_field("model.enable_caste", m.enable_caste),
      bool_field("model.enable_case", m.enable_case),
      bool_field("model.enable_aux_losses", m.enable_aux_losses),
      {"model.caste_layer_mask",
       [&m](const std::string& s) {
         m.caste_layer_mask.clear();
         for (auto v : parse_list<unsigned>("model.caste_layer_mask", s)) {
           if (v > 1) throw ConfigError("config: model.caste_layer_mask entries must be 0 or 1");
           m.caste_layer_mask.push_back(static_cast<std::uint8_t>(v));
         }
       },
       [&m] { return join(m.caste_layer_mask); }},
      double_field("model.rho", m.rho),
      double_field("model.rho_case", m.rho_case),
      size_field("model.conv_k", m.conv_k),
      size_field("model.caste_shared_dim", m.caste_shared_dim),
      size_field("model.caste_mlp_hidden", m.caste_mlp_hidden),
      double_field("model.gate_init", m.gate_init),
      double_field("model.case_gate_init", m.case_gate_init),
      double_field("loss.alpha", l.alpha),
      double_field("loss.beta", l.beta),
      double_field("loss.gamma", l.gamma),
      int_field("loss.gamma_warmup_epochs", l.gamma_warmup_epochs),
      double_field("loss.tau", l.tau),
      int_field("loss.entropy_sign", l.entropy_sign),
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config(const std::string& text, std::optional<TaskPreset> preset_override) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::optional<int> schema;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + key);
    if (key == "schema_version") {
      schema = parse_number<int>(key, value);
      continue;
    }
    entries.emplace_back(key, value);
  }
  if (!schema) throw ConfigError("config: missing schema_version");
  if (*schema != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(*schema));

  TrainConfig cfg;
  std::vector<Field> table = fields(cfg);
  auto find = [&](const std::string& key) -> Field& {
    for (Field& f : table)
      if (f.key == key) return f;
    throw ConfigError("config: unknown key '" + key + "'");
  };
  TaskPreset preset = TaskPreset::Synthetic;
  for (auto& [k, v] : entries) {
    find(k);  // reject unknown keys before anything is applied
    if (k == "train.preset") preset = preset_from_string(v);
  }
  apply_preset(cfg, preset_override.value_or(preset));
  for (auto& [k, v] : entries)
    if (k != "train.preset") find(k).set(v);
  cfg.resolve();
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path, std::optional<TaskPreset> preset_override) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), preset_override);
}

std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields(copy)) out.emplace_back(f.key, f.get());
  return out;
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
  for (auto& [k, v] : config_items(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace caeav
