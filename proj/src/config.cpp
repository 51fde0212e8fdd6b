#include "lsn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "lsn/errors.hpp"

namespace lsn {
namespace {

using Member = std::variant<std::size_t ExperimentConfig::*, double ExperimentConfig::*,
                            std::string ExperimentConfig::*>;
static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed is stored as a size_t field");

struct Field {
  const char* name;
  Member member;
  bool hashed;
};

// BevExtent members are reached through small adapters below.
struct ExtentField {
  const char* name;
  double BevExtent::*member;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f{
      {"backbone", &C::backbone, true},
      {"image_channels", &C::image_channels, true},
      {"image_height", &C::image_height, true},
      {"image_width", &C::image_width, true},
      {"embed_dim", &C::embed_dim, true},
      {"encoder_heads", &C::encoder_heads, true},
      {"decoder_heads", &C::decoder_heads, true},
      {"sample_points", &C::sample_points, true},
      {"pillar_heights", &C::pillar_heights, true},
      {"pillar_z_min", &C::pillar_z_min, true},
      {"pillar_z_max", &C::pillar_z_max, true},
      {"encoder_layers", &C::encoder_layers, true},
      {"decoder_layers", &C::decoder_layers, true},
      {"num_queries", &C::num_queries, true},
      {"points_per_lane", &C::points_per_lane, true},
      {"ffn_dim", &C::ffn_dim, true},
      {"bev_rows", &C::bev_rows, true},
      {"bev_cols", &C::bev_cols, true},
      {"lambda_cls", &C::lambda_cls, true},
      {"lambda_pts", &C::lambda_pts, true},
      {"lambda_bnd", &C::lambda_bnd, true},
      {"background_weight", &C::background_weight, true},
      {"lr", &C::lr, true},
      {"beta1", &C::beta1, true},
      {"beta2", &C::beta2, true},
      {"adam_eps", &C::adam_eps, true},
      {"weight_decay", &C::weight_decay, true},
      {"grad_clip", &C::grad_clip, true},
      {"warmup_steps", &C::warmup_steps, true},
      {"epochs", &C::epochs, false},
      {"batch_size", &C::batch_size, true},
      {"seed", &C::seed, true},
      {"dataset_dir", &C::dataset_dir, false},
      {"checkpoint_dir", &C::checkpoint_dir, false},
      {"checkpoint_every", &C::checkpoint_every, false},
  };
  return f;
}

const std::vector<ExtentField>& extent_fields() {
  static const std::vector<ExtentField> f{
      {"bev_x_min", &BevExtent::x_min},
      {"bev_x_max", &BevExtent::x_max},
      {"bev_y_min", &BevExtent::y_min},
      {"bev_y_max", &BevExtent::y_max},
  };
  return f;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError("key '" + key + "' needs a finite number, got '" + text + "'");
  }
  return v;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
  T v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "' needs a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.emplace_back(f.name);
    for (const ExtentField& f : extent_fields()) out.emplace_back(f.name);
    return out;
  }();
  return k;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key != f.name) continue;
    std::visit(
        [&](auto m) {
          using T = std::remove_reference_t<decltype(this->*m)>;
          if constexpr (std::is_same_v<T, std::string>) {
            if (value.empty()) throw ConfigError("key '" + key + "' needs a value");
            this->*m = value;
          } else if constexpr (std::is_same_v<T, double>) {
            this->*m = parse_double(key, value);
          } else {
            this->*m = parse_unsigned<T>(key, value);
          }
        },
        f.member);
    return;
  }
  for (const ExtentField& f : extent_fields()) {
    if (key == f.name) {
      extent.*f.member = parse_double(key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string ExperimentConfig::get(const std::string& key) const {
  for (const Field& f : fields()) {
    if (key != f.name) continue;
    return std::visit(
        [&](auto m) -> std::string {
          using T = std::remove_cvref_t<decltype(this->*m)>;
          if constexpr (std::is_same_v<T, std::string>) {
            return this->*m;
          } else if constexpr (std::is_same_v<T, double>) {
            return format_double(this->*m);
          } else {
            return std::to_string(this->*m);
          }
        },
        f.member);
  }
  for (const ExtentField& f : extent_fields()) {
    if (key == f.name) return format_double(extent.*f.member);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void ExperimentConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive("image_channels", image_channels);
  positive("image_height", image_height);
  positive("image_width", image_width);
  positive("embed_dim", embed_dim);
  positive("encoder_heads", encoder_heads);
  positive("decoder_heads", decoder_heads);
  positive("sample_points", sample_points);
  positive("pillar_heights", pillar_heights);
  positive("encoder_layers", encoder_layers);
  positive("decoder_layers", decoder_layers);
  positive("num_queries", num_queries);
  positive("ffn_dim", ffn_dim);
  positive("bev_rows", bev_rows);
  positive("bev_cols", bev_cols);
  positive("batch_size", batch_size);
  if (points_per_lane < 2) throw ConfigError("points_per_lane must be at least 2");
  if (embed_dim % encoder_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by encoder_heads " +
                      std::to_string(encoder_heads));
  }
  if (embed_dim % decoder_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by decoder_heads " +
                      std::to_string(decoder_heads));
  }
  if (!(extent.x_max > extent.x_min) || !(extent.y_max > extent.y_min)) {
    throw ConfigError("BEV extent is empty");
  }
  if (pillar_heights > 1 && !(pillar_z_max > pillar_z_min)) {
    throw ConfigError("pillar_z_max must exceed pillar_z_min");
  }
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
  if (background_weight < 0 || lambda_cls < 0 || lambda_pts < 0 || lambda_bnd < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  for (const std::string& k : keys()) os << k << " = " << get(k) << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::hash() const {
  std::string canon;
  for (const Field& f : fields()) {
    if (!f.hashed) continue;
    canon += f.name;
    canon += '=';
    canon += get(f.name);
    canon += '\n';
  }
  for (const ExtentField& f : extent_fields()) {
    canon += f.name;
    canon += '=';
    canon += get(f.name);
    canon += '\n';
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::vector<std::string>& experiment_preset_names() {
  static const std::vector<std::string> names{"baseline-3:6", "shallow-backbone", "2:4", "4:8"};
  return names;
}

ExperimentConfig experiment_preset(const std::string& name, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  if (name == "baseline-3:6") {
    cfg.backbone = "toy-bottleneck";
    cfg.encoder_layers = 3;
    cfg.decoder_layers = 6;
  } else if (name == "shallow-backbone") {
    cfg.backbone = "toy-basic";
    cfg.encoder_layers = 3;
    cfg.decoder_layers = 6;
  } else if (name == "2:4") {
    cfg.backbone = "toy-bottleneck";
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 4;
  } else if (name == "4:8") {
    cfg.backbone = "toy-bottleneck";
    cfg.encoder_layers = 4;
    cfg.decoder_layers = 8;
  } else {
    std::string valid;
    for (const auto& n : experiment_preset_names()) valid += " " + n;
    throw ConfigError("unknown experiment preset '" + name + "'; valid:" + valid);
  }
  return cfg;
}

}  // namespace lsn
