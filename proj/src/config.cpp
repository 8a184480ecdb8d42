#include "hpgan/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace hpgan::train {

ConfigLevel parse_level(const std::string& text) {
  if (text.size() == 1 && text[0] >= 'A' && text[0] <= 'E') return static_cast<ConfigLevel>(text[0] - 'A');
  throw std::invalid_argument("config_level must be one of A, B, C, D, E; got '" + text + "'");
}

std::string level_name(ConfigLevel level) { return std::string(1, static_cast<char>('A' + static_cast<int>(level))); }

std::string format_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string default_out_root() {
  const char* env = std::getenv("HPGAN_OUT_DIR");
  return env && *env ? std::string(env) : std::string("runs");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw std::invalid_argument("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) bad_value(key, v, "an integer");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  const std::int64_t x = to_int(key, v);
  if (x < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::uint64_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno != 0) bad_value(key, v, "a real number");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

// Shortest text that parses back to the same double.
std::string real_str(double x) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

struct Field {
  const char* key;
  bool digest;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(const char* key, bool digest, T TrainConfig::*m) {
  return {key, digest, [m](const TrainConfig& c) { return std::to_string(c.*m); },
          [m, key](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_unsigned_v<T>) c.*m = to_uint(key, v);
            else c.*m = static_cast<T>(to_int(key, v));
          }};
}

Field real_field(const char* key, bool digest, double TrainConfig::*m) {
  return {key, digest, [m](const TrainConfig& c) { return real_str(c.*m); },
          [m, key](TrainConfig& c, const std::string& v) { c.*m = to_real(key, v); }};
}

Field weight_field(const char* key, double losses::LossWeights::*m) {
  return {key, false, [m](const TrainConfig& c) { return real_str(c.weights.*m); },
          [m, key](TrainConfig& c, const std::string& v) { c.weights.*m = to_real(key, v); }};
}

Field bool_field(const char* key, bool digest, bool TrainConfig::*m) {
  return {key, digest, [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m, key](TrainConfig& c, const std::string& v) { c.*m = to_bool(key, v); }};
}

Field string_field(const char* key, bool digest, std::string TrainConfig::*m) {
  return {key, digest, [m](const TrainConfig& c) { return c.*m; },
          [m](TrainConfig& c, const std::string& v) { c.*m = v; }};
}

Field feature_field(const char* key, features::FeatureNetworkSpec TrainConfig::*m) {
  return {key, true, [m](const TrainConfig& c) { return (c.*m).to_string(); },
          [m, key](TrainConfig& c, const std::string& v) {
            try {
              c.*m = features::FeatureNetworkSpec::parse(v);
            } catch (const std::exception& e) {
              throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
            }
          }};
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      int_field("resolution", true, &TrainConfig::resolution),
      int_field("z_dim", true, &TrainConfig::z_dim),
      int_field("z_dim_large", true, &TrainConfig::z_dim_large),
      int_field("batch", false, &TrainConfig::batch),
      int_field("total_images", false, &TrainConfig::total_images),
      real_field("blur_sigma", false, &TrainConfig::blur_sigma),
      int_field("blur_images", false, &TrainConfig::blur_images),
      bool_field("blur_ramp", false, &TrainConfig::blur_ramp),
      weight_field("lambda_d_fake", &losses::LossWeights::d_fake),
      weight_field("lambda_d_real", &losses::LossWeights::d_real),
      weight_field("lambda_g", &losses::LossWeights::g),
      weight_field("lambda_f", &losses::LossWeights::f),
      weight_field("lambda1", &losses::LossWeights::lambda1),
      real_field("l1", false, &TrainConfig::l1),
      {"config_level", true, [](const TrainConfig& c) { return level_name(c.level); },
       [](TrainConfig& c, const std::string& v) { c.level = parse_level(v); }},
      {"feature_pair", true,
       [](const TrainConfig& c) { return std::string(c.feature_pair == FeaturePair::CnnVit ? "cnn_vit" : "cnn_cnn"); },
       [](TrainConfig& c, const std::string& v) {
         if (v == "cnn_vit") c.feature_pair = FeaturePair::CnnVit;
         else if (v == "cnn_cnn") c.feature_pair = FeaturePair::CnnCnn;
         else bad_value("feature_pair", v, "cnn_vit or cnn_cnn");
       }},
      feature_field("feature1", &TrainConfig::feature1),
      feature_field("feature2", &TrainConfig::feature2),
      int_field("projector_seed", true, &TrainConfig::projector_seed),
      {"ssl_objective", false, [](const TrainConfig& c) { return ssl::objective_name(c.ssl_objective); },
       [](TrainConfig& c, const std::string& v) {
         try {
           c.ssl_objective = ssl::parse_objective(v);
         } catch (const std::exception& e) {
           throw std::invalid_argument(std::string("config key 'ssl_objective': ") + e.what());
         }
       }},
      real_field("ssl_temperature", false, &TrainConfig::ssl_temperature),
      {"augment", false, [](const TrainConfig& c) { return c.augment.ops_string(); },
       [](TrainConfig& c, const std::string& v) {
         try {
           c.augment = augment::AugmentPolicy::parse(v);
         } catch (const std::exception& e) {
           throw std::invalid_argument(std::string("config key 'augment': ") + e.what());
         }
       }},
      int_field("g_base_channels", true, &TrainConfig::g_base_channels),
      int_field("g_min_channels", true, &TrainConfig::g_min_channels),
      int_field("d_hidden", true, &TrainConfig::d_hidden),
      int_field("d_raw_base", true, &TrainConfig::d_raw_base),
      int_field("head_width", true, &TrainConfig::head_width),
      real_field("lr_g", false, &TrainConfig::lr_g),
      real_field("lr_d", false, &TrainConfig::lr_d),
      real_field("lr_head", false, &TrainConfig::lr_head),
      real_field("beta1", false, &TrainConfig::beta1),
      real_field("beta2", false, &TrainConfig::beta2),
      real_field("ema_decay", false, &TrainConfig::ema_decay),
      int_field("seed", false, &TrainConfig::seed),
      int_field("seed_weights", false, &TrainConfig::seed_weights),
      int_field("seed_data", false, &TrainConfig::seed_data),
      int_field("seed_augment", false, &TrainConfig::seed_augment),
      int_field("seed_latent", false, &TrainConfig::seed_latent),
      int_field("eval_interval", false, &TrainConfig::eval_interval),
      int_field("checkpoint_interval", false, &TrainConfig::checkpoint_interval),
      int_field("eval_samples", false, &TrainConfig::eval_samples),
      int_field("eval_seed", false, &TrainConfig::eval_seed),
      int_field("embed_dim", false, &TrainConfig::embed_dim),
      int_field("embed_seed", false, &TrainConfig::embed_seed),
      int_field("pr_k", false, &TrainConfig::pr_k),
      real_field("ppl_eps", false, &TrainConfig::ppl_eps),
      int_field("ppl_paths", false, &TrainConfig::ppl_paths),
      string_field("dataset", false, &TrainConfig::dataset),
      int_field("subset", false, &TrainConfig::subset),
      bool_field("xflip", false, &TrainConfig::xflip),
      string_field("out_dir", false, &TrainConfig::out_dir),
  };
  return fields;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : schema())
    if (key == f.key) return f;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw std::invalid_argument("config key '" + key + "': " + what);
}

}  // namespace

features::FeatureNetworkSpec TrainConfig::default_feature(int which) {
  features::FeatureNetworkSpec s;
  if (which == 2) {
    s.kind = features::NetworkKind::PatchAttention;
    s.seed = 2;
  }
  return s;
}

void TrainConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, trim(value)); }

void TrainConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& f : schema()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      c.set_assignment(line);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : schema()) out.emplace_back(f.key);
  return out;
}

std::uint64_t TrainConfig::digest() const {
  std::string text;
  for (const auto& f : schema())
    if (f.digest) text += std::string(f.key) + "=" + f.get(*this) + "\n";
  return RngStream::hash(text);
}

void TrainConfig::validate() const {
  require(resolution >= 32 && resolution % 32 == 0 && (resolution & (resolution - 1)) == 0, "resolution",
          "must be a power of two >= 32");
  require(z_dim > 0, "z_dim", "must be positive");
  require(z_dim_large > 0, "z_dim_large", "must be positive");
  require(batch >= 2, "batch", "must be >= 2");
  require(total_images > 0, "total_images", "must be positive");
  require(total_images % batch == 0, "total_images", "must be a multiple of batch");
  require(blur_sigma >= 0, "blur_sigma", "must be >= 0");
  require(blur_images >= -1, "blur_images", "must be >= 0 or -1");
  require(l1 >= 0, "l1", "must be >= 0");
  weights.validate();
  require(ssl_temperature > 0, "ssl_temperature", "must be positive");
  augment.validate();
  feature1.validate();
  feature2.validate();
  require(g_base_channels > 0 && g_min_channels > 0, "g_base_channels", "channels must be positive");
  require(d_hidden > 0 && d_raw_base > 0, "d_hidden", "widths must be positive");
  require(head_width > 0, "head_width", "must be positive");
  require(lr_g > 0 && lr_d > 0 && lr_head > 0, "lr_g", "learning rates must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "beta1", "betas must be in [0, 1)");
  require(ema_decay >= 0 && ema_decay < 1, "ema_decay", "must be in [0, 1)");
  require(eval_interval > 0, "eval_interval", "must be positive");
  require(checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0");
  require(eval_samples >= 0, "eval_samples", "must be >= 0");
  require(embed_dim > 0, "embed_dim", "must be positive");
  require(pr_k >= 1, "pr_k", "must be >= 1");
  require(ppl_eps > 0, "ppl_eps", "must be positive");
  require(ppl_paths >= 0, "ppl_paths", "must be >= 0");
  require(subset >= 0, "subset", "must be >= 0");
}

augment::BlurSchedule TrainConfig::blur_schedule() const {
  augment::BlurSchedule s;
  s.sigma_max = blur_enabled() ? blur_sigma : 0.0;
  s.images = blur_enabled() ? effective_blur_images() : 0;
  s.ramp = blur_ramp;
  return s;
}

ssl::ObjectiveSpec TrainConfig::objective() const {
  ssl::ObjectiveSpec o;
  o.kind = ssl_objective;
  o.lambda1 = weights.lambda1;
  o.temperature = ssl_temperature;
  return o;
}

std::vector<features::FeatureNetworkSpec> TrainConfig::feature_specs() const {
  std::vector<features::FeatureNetworkSpec> out;
  if (!projected()) return out;
  out.push_back(feature1);
  if (two_networks()) {
    features::FeatureNetworkSpec second = feature2;
    if (feature_pair == FeaturePair::CnnCnn) {
      second = feature1;
      second.seed = feature2.seed;
    }
    out.push_back(second);
  }
  return out;
}

std::uint64_t TrainConfig::stream_seed(const char* purpose) const {
  const std::string p = purpose;
  std::int64_t explicit_seed = -1;
  if (p == "weights") explicit_seed = seed_weights;
  else if (p == "data") explicit_seed = seed_data;
  else if (p == "augment") explicit_seed = seed_augment;
  else if (p == "latent") explicit_seed = seed_latent;
  else throw std::invalid_argument("unknown seed purpose '" + p + "'");
  if (explicit_seed >= 0) return static_cast<std::uint64_t>(explicit_seed);
  return RngStream(seed).derive(p).seed();
}

}  // namespace hpgan::train
