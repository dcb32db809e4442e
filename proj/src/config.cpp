#include "laneptq/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

namespace laneptq {

namespace {

enum class KeyType { integer, real, text, real_list };

struct KeyDesc {
  const char* name;  // "section.key"
  KeyType type;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt_double(v[i]);
  }
  return out + "]";
}

int64_t parse_int(const std::string& key, const std::string& raw) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + raw + "'");
  }
}

double parse_real(const std::string& key, const std::string& raw) {
  try {
    size_t pos = 0;
    double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + raw + "'");
  }
}

std::string strip(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

std::vector<double> parse_list(const std::string& key, const std::string& raw) {
  std::string t = strip(raw);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']')
    throw ConfigError("config: key '" + key + "' expects [numbers], got '" + raw + "'");
  std::vector<double> out;
  std::string body = t.substr(1, t.size() - 2);
  std::istringstream is(body);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = strip(item);
    if (item.empty()) continue;
    out.push_back(parse_real(key, item));
  }
  return out;
}

#define INT_KEY(keyname, field)                                                    \
  KeyDesc{keyname, KeyType::integer,                                               \
          [](const ExperimentConfig& c) { return std::to_string(c.field); },       \
          [](ExperimentConfig& c, const std::string& v) { c.field = parse_int(keyname, v); }}
#define REAL_KEY(keyname, field)                                                   \
  KeyDesc{keyname, KeyType::real,                                                  \
          [](const ExperimentConfig& c) { return fmt_double(c.field); },           \
          [](ExperimentConfig& c, const std::string& v) { c.field = parse_real(keyname, v); }}
#define TEXT_KEY(keyname, field)                                                   \
  KeyDesc{keyname, KeyType::text,                                                  \
          [](const ExperimentConfig& c) { return "\"" + c.field + "\""; },         \
          [](ExperimentConfig& c, const std::string& v) { c.field = unquote(strip(v)); }}
#define LIST_KEY(keyname, field)                                                   \
  KeyDesc{keyname, KeyType::real_list,                                             \
          [](const ExperimentConfig& c) { return fmt_list(c.field); },             \
          [](ExperimentConfig& c, const std::string& v) { c.field = parse_list(keyname, v); }}

const std::vector<KeyDesc>& registry() {
  static const std::vector<KeyDesc> keys = {
      TEXT_KEY("data.dir", data_dir),
      TEXT_KEY("data.out_dir", out_dir),
      INT_KEY("data.train_scenes", train_scenes),
      INT_KEY("data.val_scenes", val_scenes),
      INT_KEY("data.calib_images", calib_images),
      INT_KEY("data.master_seed", master_seed),
      INT_KEY("data.min_lanes", min_lanes),
      INT_KEY("data.max_lanes", max_lanes),
      REAL_KEY("data.noise_sigma", noise_sigma),
      INT_KEY("model.seed", model_seed),
      INT_KEY("model.pretrain_epochs", pretrain_epochs),
      REAL_KEY("model.pretrain_lr", pretrain_lr),
      INT_KEY("model.pretrain_batch", pretrain_batch),
      REAL_KEY("model.threshold", threshold),
      REAL_KEY("model.cluster_radius", cluster_radius),
      REAL_KEY("model.f1_iou", f1_iou),
      REAL_KEY("model.f1_width", f1_width),
      TEXT_KEY("quant.bits", bits),
      INT_KEY("quant.grid_points", grid_points),
      REAL_KEY("quant.ema_momentum", ema_momentum),
      INT_KEY("quant.calib_batch", calib_batch),
      INT_KEY("tune.iterations", iterations),
      REAL_KEY("tune.lr", lr),
      INT_KEY("tune.batch", batch),
      REAL_KEY("tune.beta1", beta1),
      REAL_KEY("tune.beta2", beta2),
      REAL_KEY("tune.adam_eps", adam_eps),
      INT_KEY("tune.log_every", log_every),
      INT_KEY("tune.seed", tune_seed),
      INT_KEY("tune.ablate_seeds", ablate_seeds),
      INT_KEY("tune.threads", threads),
      REAL_KEY("focus.lambda", lambda),
      TEXT_KEY("focus.objective", objective),
      INT_KEY("selection.k", k),
      INT_KEY("selection.refresh_interval", refresh_interval),
      LIST_KEY("selection.noise_levels", noise_levels),
      INT_KEY("selection.reruns", reruns),
      INT_KEY("selection.curve_images", curve_images),
      INT_KEY("selection.probe_batch", probe_batch),
      REAL_KEY("selection.score_v", score_v),
      REAL_KEY("selection.score_pair_iou", score_pair_iou),
  };
  return keys;
}

#undef INT_KEY
#undef REAL_KEY
#undef TEXT_KEY
#undef LIST_KEY

const KeyDesc* find_key(const std::string& dotted) {
  for (const auto& k : registry()) {
    if (dotted == k.name) return &k;
  }
  return nullptr;
}

}  // namespace

void ExperimentConfig::apply_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) {
      // keep # inside quotes intact
      bool in_quote = false;
      size_t cut = std::string::npos;
      for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_quote = !in_quote;
        if (line[i] == '#' && !in_quote) {
          cut = i;
          break;
        }
      }
      if (cut != std::string::npos) line = line.substr(0, cut);
    }
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section at " + path + ":" + std::to_string(lineno));
      section = strip(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at " + path + ":" + std::to_string(lineno));
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' outside any section at " + path + ":" +
                        std::to_string(lineno));
    apply_override(section + "." + key, value);
  }
}

void ExperimentConfig::apply_override(const std::string& dotted_key, const std::string& value) {
  const KeyDesc* k = find_key(dotted_key);
  if (!k) throw ConfigError("config: unknown key '" + dotted_key + "'");
  k->set(*this, value);
}

void ExperimentConfig::validate() const {
  BitConfig::parse(bits);
  FocusConfig::parse_objective(objective);
  if (train_scenes < 1 || val_scenes < 0 || calib_images < 1)
    throw ConfigError("config: data sizes out of range");
  if (calib_images > train_scenes)
    throw ConfigError("config: calib_images cannot exceed train_scenes");
  if (iterations < 0 || batch < 1 || log_every < 1)
    throw ConfigError("config: tune settings out of range");
  if (k < 1 || k > static_cast<int64_t>(semantic_head_ids().size()))
    throw ConfigError("config: selection.k out of range");
  selection_config().validate();
  scene_params().validate();
  focus_config().validate();
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& k : registry()) {
    out += k.name;
    out += " = ";
    out += k.get(*this);
    out += "\n";
  }
  return out;
}

uint64_t ExperimentConfig::hash() const {
  const std::string text = canonical();
  uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string ExperimentConfig::describe_keys() {
  ExperimentConfig defaults;
  std::string out;
  for (const auto& k : registry()) {
    out += "  --";
    out += k.name;
    out += "=<value>  (default ";
    out += k.get(defaults);
    out += ")\n";
  }
  return out;
}

SceneParams ExperimentConfig::scene_params() const {
  SceneParams p;
  p.min_lanes = static_cast<int>(min_lanes);
  p.max_lanes = static_cast<int>(max_lanes);
  p.noise_sigma = noise_sigma;
  return p;
}

DecodeConfig ExperimentConfig::decode_config() const {
  DecodeConfig d;
  d.threshold = threshold;
  d.stride = LaneNet::kStride;
  d.cluster_radius = cluster_radius;
  return d;
}

DistortionConfig ExperimentConfig::distortion_config() const {
  DistortionConfig d;
  d.v = score_v;
  d.pair_iou = score_pair_iou;
  return d;
}

SelectionConfig ExperimentConfig::selection_config() const {
  SelectionConfig s;
  s.k = static_cast<int>(k);
  s.refresh_interval = static_cast<int>(refresh_interval);
  s.noise_levels = noise_levels;
  s.reruns = static_cast<int>(reruns);
  s.curve_images = static_cast<int>(curve_images);
  s.seed = static_cast<uint64_t>(master_seed);
  return s;
}

PretrainConfig ExperimentConfig::pretrain_config() const {
  PretrainConfig p;
  p.epochs = static_cast<int>(pretrain_epochs);
  p.lr = pretrain_lr;
  p.batch = static_cast<int>(pretrain_batch);
  p.seed = static_cast<uint64_t>(model_seed);
  p.threads = static_cast<int>(threads);
  return p;
}

CalibConfig ExperimentConfig::calib_config() const { return calib_config(bit_config()); }

CalibConfig ExperimentConfig::calib_config(const BitConfig& bc) const {
  CalibConfig c;
  c.bits = bc;
  c.grid_points = static_cast<int>(grid_points);
  c.ema_momentum = ema_momentum;
  c.batch = static_cast<int>(calib_batch);
  c.threads = static_cast<int>(threads);
  return c;
}

TuneConfig ExperimentConfig::tune_config() const {
  TuneConfig t;
  t.iterations = static_cast<int>(iterations);
  t.lr = lr;
  t.batch = static_cast<int>(batch);
  t.beta1 = beta1;
  t.beta2 = beta2;
  t.eps = adam_eps;
  t.log_every = static_cast<int>(log_every);
  t.probe_batch = static_cast<int>(probe_batch);
  t.seed = static_cast<uint64_t>(tune_seed);
  t.threads = static_cast<int>(threads);
  return t;
}

FocusConfig ExperimentConfig::focus_config() const {
  FocusConfig f;
  f.lambda = lambda;
  f.objective = FocusConfig::parse_objective(objective);
  return f;
}

BitConfig ExperimentConfig::bit_config() const { return BitConfig::parse(bits); }

}  // namespace laneptq
