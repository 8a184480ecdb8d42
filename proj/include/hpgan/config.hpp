#pragma once

#include "hpgan/augment.hpp"
#include "hpgan/features.hpp"
#include "hpgan/losses.hpp"
#include "hpgan/ssl.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hpgan::train {

/// Cumulative ablation ladder: A raw single discriminator, B projected with one network,
/// C second network + small z + blur, D + discriminator consistency, E + FakeTwins.
enum class ConfigLevel { A, B, C, D, E };

ConfigLevel parse_level(const std::string& text);
std::string level_name(ConfigLevel level);

enum class FeaturePair { CnnVit, CnnCnn };

struct TrainConfig {
  Index resolution = 32;
  Index z_dim = 64;
  Index z_dim_large = 256;  // used below level C
  Index batch = 32;
  std::int64_t total_images = 200000;

  double blur_sigma = 2.0;
  std::int64_t blur_images = -1;  // -1: total_images / 100
  bool blur_ramp = false;

  losses::LossWeights weights;
  double l1 = 0.1;

  ConfigLevel level = ConfigLevel::E;
  FeaturePair feature_pair = FeaturePair::CnnVit;
  features::FeatureNetworkSpec feature1 = default_feature(1);
  features::FeatureNetworkSpec feature2 = default_feature(2);
  std::uint64_t projector_seed = 17;

  ssl::Objective ssl_objective = ssl::Objective::BarlowTwins;
  double ssl_temperature = 0.5;
  augment::AugmentPolicy augment;

  Index g_base_channels = 32;
  Index g_min_channels = 8;
  Index d_hidden = 16;
  Index d_raw_base = 16;
  Index head_width = 512;

  double lr_g = 2e-4, lr_d = 2e-4, lr_head = 2e-4;
  double beta1 = 0.0, beta2 = 0.99;
  double ema_decay = 0.999;

  std::uint64_t seed = 0;
  std::int64_t seed_weights = -1, seed_data = -1, seed_augment = -1, seed_latent = -1;  // -1: derived

  std::int64_t eval_interval = 10000;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  Index eval_samples = 0;                // 0: max(5000, dataset size)
  std::uint64_t eval_seed = 12345;
  Index embed_dim = 64;
  std::uint64_t embed_seed = 7;
  int pr_k = 3;
  double ppl_eps = 1e-4;
  Index ppl_paths = 10000;

  std::string dataset;
  Index subset = 0;  // 0: whole dataset
  bool xflip = true;
  std::string out_dir;

  static features::FeatureNetworkSpec default_feature(int which);

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// Applies one `key = value` assignment with typed parsing.
  void set(const std::string& key, const std::string& value);
  void set_assignment(const std::string& assignment);

  /// Flat `key = value` text, one key per line, schema order.
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
  static std::vector<std::string> keys();

  /// FNV-1a over the keys that shape networks and frozen weights.
  std::uint64_t digest() const;

  // Level-derived switches.
  bool projected() const { return level >= ConfigLevel::B; }
  bool two_networks() const { return level >= ConfigLevel::C; }
  bool blur_enabled() const { return level >= ConfigLevel::C && blur_sigma > 0; }
  bool consistency() const { return level >= ConfigLevel::D; }
  bool faketwins() const { return level >= ConfigLevel::E; }
  Index effective_z_dim() const { return level >= ConfigLevel::C ? z_dim : z_dim_large; }
  std::int64_t effective_blur_images() const { return blur_images >= 0 ? blur_images : total_images / 100; }
  augment::BlurSchedule blur_schedule() const;
  ssl::ObjectiveSpec objective() const;

  /// Specs of the frozen feature networks in use at this level.
  std::vector<features::FeatureNetworkSpec> feature_specs() const;

  std::uint64_t stream_seed(const char* purpose) const;
};

/// Default output root: $HPGAN_OUT_DIR when set, else "runs".
std::string default_out_root();

std::string format_hex(std::uint64_t v);

}  // namespace hpgan::train
