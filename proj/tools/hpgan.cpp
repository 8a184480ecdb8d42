#include "hpgan/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using hpgan::train::TrainConfig;

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "override one config key (key=value), repeatable");
  app->add_option("--out", f.out, "output location");
  app->add_option("--seed", f.seed, "master seed");
}

TrainConfig build_config(const CommonFlags& f, std::optional<TrainConfig> base = std::nullopt) {
  TrainConfig cfg = f.config.empty() ? base.value_or(TrainConfig{}) : TrainConfig::load(f.config);
  for (const auto& s : f.sets) cfg.set_assignment(s);
  if (f.seed) cfg.seed = *f.seed;
  return cfg;
}

std::string under_root(const std::string& leaf) { return (std::filesystem::path(hpgan::train::default_out_root()) / leaf).string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hpgan: desk-scale projected GAN with discriminator consistency and FakeTwins"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string resume;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_flags);
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  CommonFlags eval_flags;
  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against its dataset");
  add_common(eval, eval_flags);
  eval->add_option("checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);

  CommonFlags sample_flags;
  std::string sample_ckpt;
  hpgan::Index sample_n = 16;
  auto* sample = app.add_subcommand("sample", "write a PNG grid of EMA samples");
  add_common(sample, sample_flags);
  sample->add_option("checkpoint", sample_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  sample->add_option("-n,--count", sample_n, "number of images");

  CommonFlags probe_flags;
  int probe_draws = 100;
  hpgan::Index probe_batch = 16;
  auto* probe = app.add_subcommand("probe", "FakeTwins loss on identical vs distinct batches and blur levels");
  add_common(probe, probe_flags);
  probe->add_option("--draws", probe_draws, "augmentation draws per cell");
  probe->add_option("--batch", probe_batch, "images per probe batch");

  CommonFlags synth_flags;
  hpgan::Index synth_count = 500, synth_res = 32;
  auto* synth = app.add_subcommand("make-synth", "write the two-mode Gaussian blob dataset");
  add_common(synth, synth_flags);
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--resolution", synth_res, "image size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      TrainConfig cfg = build_config(train_flags);
      if (!train_flags.out.empty()) cfg.out_dir = train_flags.out;
      if (cfg.out_dir.empty()) cfg.out_dir = under_root("train");
      hpgan::train::TrainOptions opts;
      opts.resume = resume;
      opts.log = &std::cout;
      const auto result = hpgan::train::train(cfg, opts);
      std::cout << "best fid " << hpgan::metrics::format_number(result.best_fid) << " at " << result.best_images
                << " images; final checkpoint " << result.final_checkpoint << '\n';
    } else if (*eval) {
      const TrainConfig cfg = build_config(eval_flags, hpgan::train::checkpoint_config(eval_ckpt));
      const auto data = hpgan::io::load_dataset(cfg.dataset, cfg.resolution, cfg.subset, cfg.stream_seed("data"), cfg.xflip);
      const auto report = hpgan::train::evaluate(eval_ckpt, data, cfg);
      const std::string text = hpgan::metrics::MetricsReport::csv_header() + "\n" + report.csv_row() + "\n";
      std::cout << text;
      if (!eval_flags.out.empty()) std::ofstream(eval_flags.out, std::ios::trunc) << text;
    } else if (*sample) {
      const std::string out = sample_flags.out.empty() ? under_root("samples.png") : sample_flags.out;
      std::filesystem::path parent = std::filesystem::path(out).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
      hpgan::train::sample(sample_ckpt, sample_n, sample_flags.seed.value_or(0), out);
      std::cout << "wrote " << out << '\n';
    } else if (*probe) {
      const TrainConfig cfg = build_config(probe_flags);
      const std::uint64_t seed = cfg.seed;
      const auto sets = hpgan::train::bundled_probe_sets(cfg.resolution, probe_batch, seed);
      const auto report = hpgan::train::probe_batch_diversity(cfg, sets, {0.0, 1.0, 2.0, 4.0}, probe_draws, seed);
      std::cout << report.table();
      if (!probe_flags.out.empty()) std::ofstream(probe_flags.out, std::ios::trunc) << report.table();
    } else if (*synth) {
      const std::string out = synth_flags.out.empty() ? under_root("synth") : synth_flags.out;
      const auto files = hpgan::io::make_synth(out, synth_count, synth_res, synth_flags.seed.value_or(0));
      std::cout << "wrote " << files.size() << " images to " << out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
