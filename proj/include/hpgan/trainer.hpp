#pragma once

#include "hpgan/checkpoint.hpp"
#include "hpgan/config.hpp"
#include "hpgan/io.hpp"
#include "hpgan/losses.hpp"
#include "hpgan/metrics.hpp"
#include "hpgan/networks.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hpgan::train {

using Real = float;  // training precision

/// Everything a training step mutates, plus the frozen projectors it reads.
class TrainState {
 public:
  explicit TrainState(const TrainConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  const TrainConfig& config() const { return cfg_; }
  losses::ProjectorSet<Real> projector_set() const;
  const std::vector<std::unique_ptr<features::Projector<Real>>>& projectors() const { return projectors_; }

  nn::Generator<Real> generator;
  nn::Generator<Real> ema;
  nn::DiscriminatorBank<Real> disc;
  std::optional<nn::LinearHead<Real>> head;  // FakeTwins levels only
  nn::Adam<Real> opt_g;
  nn::Adam<Real> opt_d;
  std::optional<nn::Adam<Real>> opt_head;
  std::int64_t images_seen = 0;
  std::int64_t step = 0;
  /// Loop bookkeeping carried through checkpoints verbatim (names start with "train.").
  std::vector<std::pair<std::string, Tensor<double>>> aux;

  /// Named tensors of every mutable component, in checkpoint order.
  nn::TensorRefs<Real> tensors();

  ckpt::Checkpoint to_checkpoint();
  /// Restores from a checkpoint written for a config with the same digest.
  void restore(const ckpt::Checkpoint& c);

 private:
  TrainConfig cfg_;
  std::vector<std::unique_ptr<features::Projector<Real>>> projectors_;
};

struct StepStats {
  double d_loss = 0, g_loss = 0;
  double hinge_d = 0, hinge_g = 0;
  double dc_real = 0, dc_fake = 0, dc_g = 0;
  double ft = 0;
  double blur_sigma = 0;
};

/// Latent batch [n, z_dim] of standard normals.
Tensor<Real> draw_latents(Index n, Index z_dim, RngStream& rng);

/// Real batch for the step that starts at `images_seen`: epoch e visits a permutation seeded by
/// (seed, e), and batches run across epoch boundaries.
Tensor<Real> batch_at(const Tensor<Real>& images, std::int64_t images_seen, Index batch, std::uint64_t seed);

/// One discriminator update then one generator (+ head) update, EMA, counters.
StepStats train_step(TrainState& state, const Tensor<Real>& real);

/// Cached real-side embeddings for repeated evaluation against one dataset.
struct EvalReference {
  metrics::Matrix embeddings;
  metrics::EmbeddingStats stats;
  static EvalReference build(const io::Dataset& data, const TrainConfig& cfg);
};

/// EMA samples vs the dataset; discriminator logits of the real images give the signed fraction.
metrics::MetricsReport evaluate_state(TrainState& state, const io::Dataset& data, const EvalReference& ref);

Index effective_eval_samples(const TrainConfig& cfg, Index dataset_size);

struct TrainOptions {
  std::string resume;       // checkpoint path, empty for a fresh run
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::string out_dir;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::string metrics_csv;
  double best_fid = 0;
  std::int64_t best_images = 0;
  std::vector<metrics::MetricsReport> rows;
};

/// Full run: metrics CSV rows every eval_interval images plus a final row, checkpoints every
/// checkpoint_interval images, final.hpg, best.hpg (lowest FID) and summary.json.
TrainResult train(const TrainConfig& cfg, const TrainOptions& options = {});
TrainResult train(const TrainConfig& cfg, const io::Dataset& data, const TrainOptions& options = {});

/// Loads a checkpoint into a fresh state; the checkpoint digest must match `cfg`.
std::unique_ptr<TrainState> load_state(const std::string& path, const TrainConfig& cfg);

/// Config stored in a checkpoint header.
TrainConfig checkpoint_config(const std::string& path);

metrics::MetricsReport evaluate(const std::string& checkpoint, const io::Dataset& data, const TrainConfig& cfg);

/// n EMA samples from latents seeded by `seed`, written as a PNG grid.
void sample(const std::string& checkpoint, Index n, std::uint64_t seed, const std::string& out_path);

struct ProbeSet {
  std::string name;
  Tensor<Real> images;  // [N, 3, R, R]
  bool blur_ladder = false;  // judged for nondecreasing loss over the blur levels
};

struct ProbeRow {
  std::string set;
  double sigma = 0;
  double mean_loss = 0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  std::vector<std::pair<std::string, bool>> verdicts;
  double mean(const std::string& set, double sigma) const;
  bool all_pass() const;
  std::string table() const;
};

/// Bundled sets: color squares and procedural textures, each as N copies of one image and as N
/// distinct images. The distinct texture set carries the blur ladder; flat color squares have no
/// detail for blur to remove.
std::vector<ProbeSet> bundled_probe_sets(Index resolution, Index n, std::uint64_t seed);

/// Mean FakeTwins loss of two augmented views per set and blur sigma, averaged over `draws`
/// seeded augmentation draws through frozen projectors and a frozen random head.
ProbeReport probe_batch_diversity(const TrainConfig& cfg, const std::vector<ProbeSet>& sets,
                                  const std::vector<double>& sigmas, int draws, std::uint64_t seed);

}  // namespace hpgan::train
