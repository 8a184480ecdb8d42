#include "hpgan/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hpgan::train {

namespace fs = std::filesystem;

namespace {

constexpr Index kChunk = 250;

nn::GeneratorSpec generator_spec(const TrainConfig& cfg) {
  nn::GeneratorSpec s;
  s.z_dim = cfg.effective_z_dim();
  s.resolution = cfg.resolution;
  s.base_channels = cfg.g_base_channels;
  s.min_channels = cfg.g_min_channels;
  return s;
}

nn::DiscriminatorSpec discriminator_spec(const TrainConfig& cfg) {
  nn::DiscriminatorSpec s;
  s.projected = cfg.projected();
  for (const auto& f : cfg.feature_specs()) s.widths.push_back(f.widths);
  s.hidden = cfg.d_hidden;
  s.raw_base = cfg.d_raw_base;
  return s;
}

nn::AdamOptions adam_options(const TrainConfig& cfg, double lr) {
  nn::AdamOptions o;
  o.lr = lr;
  o.beta1 = cfg.beta1;
  o.beta2 = cfg.beta2;
  return o;
}

std::uint64_t weight_seed(const TrainConfig& cfg, const char* what) {
  return RngStream(cfg.stream_seed("weights")).derive(what).seed();
}

bool finite(double x) { return std::isfinite(x); }

double value_or_zero(const ag::Variable<Real>& v) { return v.defined() ? static_cast<double>(v.item()) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------------------------

TrainState::TrainState(const TrainConfig& cfg)
    : generator(generator_spec(cfg), weight_seed(cfg, "generator")),
      ema(generator_spec(cfg), weight_seed(cfg, "generator")),
      disc(discriminator_spec(cfg), cfg.resolution, weight_seed(cfg, "discriminator")),
      opt_g(generator.parameters(), adam_options(cfg, cfg.lr_g)),
      opt_d(disc.parameters(), adam_options(cfg, cfg.lr_d)),
      cfg_(cfg) {
  cfg_.validate();
  nn::set_requires_grad(ema.parameters(), false);
  const auto specs = cfg_.feature_specs();
  Index pooled = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    projectors_.push_back(std::make_unique<features::Projector<Real>>(specs[i], cfg_.projector_seed + i));
    for (Index w : specs[i].widths) pooled += w;
  }
  if (cfg_.faketwins()) {
    head.emplace(pooled, cfg_.head_width, weight_seed(cfg_, "head"));
    opt_head.emplace(head->parameters(), adam_options(cfg_, cfg_.lr_head));
  }
}

losses::ProjectorSet<Real> TrainState::projector_set() const {
  losses::ProjectorSet<Real> out;
  for (const auto& p : projectors_) out.push_back(p.get());
  return out;
}

nn::TensorRefs<Real> TrainState::tensors() {
  nn::TensorRefs<Real> out = nn::tensor_refs(generator.parameters());
  auto append = [&out](nn::TensorRefs<Real> more) { out.insert(out.end(), more.begin(), more.end()); };
  append(nn::tensor_refs(ema.parameters(), "ema."));
  append(disc.state());
  if (head) append(head->state());
  append(opt_g.state("adam_g."));
  append(opt_d.state("adam_d."));
  if (opt_head) append(opt_head->state("adam_head."));
  return out;
}

ckpt::Checkpoint TrainState::to_checkpoint() {
  ckpt::Checkpoint c;
  c.digest = cfg_.digest();
  c.seed = cfg_.seed;
  TrainConfig stored = cfg_;
  stored.out_dir.clear();
  c.config = stored.serialize();
  c.counters = {{"images_seen", images_seen}, {"step", step}, {"adam_g.t", opt_g.steps()}, {"adam_d.t", opt_d.steps()}};
  if (opt_head) c.counters.emplace_back("adam_head.t", opt_head->steps());
  for (const auto& [name, t] : tensors()) c.add(name, *t);
  for (const auto& [name, t] : aux) c.add(name, t);
  return c;
}

void TrainState::restore(const ckpt::Checkpoint& c) {
  if (c.digest != cfg_.digest()) {
    throw std::runtime_error("config digest mismatch: checkpoint " + format_hex(c.digest) + ", config " +
                             format_hex(cfg_.digest()));
  }
  for (const auto& [name, t] : tensors()) c.restore(name, *t);
  images_seen = c.counter("images_seen");
  step = c.counter("step");
  opt_g.set_steps(c.counter("adam_g.t"));
  opt_d.set_steps(c.counter("adam_d.t"));
  if (opt_head) opt_head->set_steps(c.counter("adam_head.t"));
  aux.clear();
  for (const auto& t : c.tensors) {
    if (t.name.rfind("train.", 0) != 0) continue;
    const auto* d = std::get_if<Tensor<double>>(&t.tensor);
    if (!d) throw std::runtime_error("checkpoint tensor '" + t.name + "' has the wrong dtype");
    aux.emplace_back(t.name, *d);
  }
}

// ---------------------------------------------------------------------------------------------

Tensor<Real> draw_latents(Index n, Index z_dim, RngStream& rng) {
  Tensor<Real> z({n, z_dim});
  for (Index i = 0; i < z.size(); ++i) z.data[i] = static_cast<Real>(rng.normal());
  return z;
}

namespace {

std::vector<Index> epoch_permutation(Index n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  RngStream rng = RngStream(seed).derive("epoch").derive(static_cast<std::uint64_t>(epoch));
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace

Tensor<Real> batch_at(const Tensor<Real>& images, std::int64_t images_seen, Index batch, std::uint64_t seed) {
  const Index n = images.dim(0);
  if (n <= 0) throw std::invalid_argument("empty dataset");
  const Index per = images.size() / n;
  Shape shape = images.shape;
  shape[0] = batch;
  Tensor<Real> out(shape);
  std::int64_t cached_epoch = -1;
  std::vector<Index> perm;
  for (Index i = 0; i < batch; ++i) {
    const std::int64_t k = images_seen + i;
    const std::int64_t epoch = k / n;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(n, seed, epoch);
      cached_epoch = epoch;
    }
    const Index src = perm[static_cast<std::size_t>(k % n)];
    out.data.segment(i * per, per) = images.data.segment(src * per, per);
  }
  return out;
}

namespace {

nn::LogitSet<Real> judge(TrainState& s, const ag::Variable<Real>& images, bool update_sn) {
  if (!s.config().projected()) return s.disc.forward_raw(images, update_sn);
  std::vector<features::Stages<Real>> pyramids;
  for (const auto* p : s.projector_set()) pyramids.push_back((*p)(images));
  return s.disc.forward(pyramids, update_sn);
}

ag::Variable<Real> prepare(const ag::Variable<Real>& x, double sigma, const augment::AugmentPolicy& policy,
                           RngStream& rng) {
  const ag::Variable<Real> blurred = sigma > 0 ? augment::gaussian_blur(x, sigma) : x;
  return augment::diff_augment(blurred, policy, rng);
}

[[noreturn]] void diverged(const TrainState& s, const char* phase, const StepStats& st) {
  std::ostringstream os;
  os << "divergence in " << phase << " phase at step " << s.step << " (images_seen " << s.images_seen
     << "): d_loss=" << st.d_loss << " g_loss=" << st.g_loss << " hinge_d=" << st.hinge_d
     << " hinge_g=" << st.hinge_g << " dc_real=" << st.dc_real << " dc_fake=" << st.dc_fake << " ft=" << st.ft;
  throw std::runtime_error(os.str());
}

}  // namespace

StepStats train_step(TrainState& s, const Tensor<Real>& real) {
  const TrainConfig& cfg = s.config();
  if (real.rank() != 4 || real.dim(1) != 3 || real.dim(2) != cfg.resolution || real.dim(3) != cfg.resolution) {
    throw std::invalid_argument("train_step: real batch must be [N, 3, R, R], got " + shape_string(real.shape));
  }
  const Index n = real.dim(0);
  const Index z_dim = cfg.effective_z_dim();
  const auto tag = static_cast<std::uint64_t>(s.step);
  RngStream latent = RngStream(cfg.stream_seed("latent")).derive(tag);
  RngStream aug = RngStream(cfg.stream_seed("augment")).derive(tag);
  StepStats st;
  st.blur_sigma = augment::blur_sigma(s.images_seen, cfg.blur_schedule());
  const losses::LossWeights& w = cfg.weights;

  // Discriminator phase.
  {
    const Tensor<Real> z = draw_latents(n, z_dim, latent);
    Tensor<Real> fake;
    {
      ag::NoGradGuard guard;
      fake = s.generator(ag::constant(z)).value();
    }
    s.opt_d.zero_grad();
    const auto real_logits = judge(s, prepare(ag::constant(real), st.blur_sigma, cfg.augment, aug), true);
    const auto fake_logits = judge(s, prepare(ag::constant(fake), st.blur_sigma, cfg.augment, aug), false);
    const auto hinge = losses::hinge_d_loss(real_logits, fake_logits);
    ag::Variable<Real> dc_real, dc_fake;
    if (cfg.consistency()) {
      dc_real = losses::discriminator_consistency(real_logits);
      dc_fake = losses::discriminator_consistency(fake_logits);
    }
    const auto loss = losses::total_d_loss(hinge, dc_fake, dc_real, w);
    st.hinge_d = hinge.item();
    st.dc_real = value_or_zero(dc_real);
    st.dc_fake = value_or_zero(dc_fake);
    st.d_loss = loss.item();
    if (!finite(st.d_loss)) diverged(s, "discriminator", st);
    ag::backward(loss);
    s.opt_d.step();
  }

  // Generator phase; discriminator weights are held fixed.
  auto d_params = s.disc.parameters();
  nn::set_requires_grad(d_params, false);
  try {
    const Tensor<Real> z = draw_latents(n, z_dim, latent);
    s.opt_g.zero_grad();
    if (s.opt_head) s.opt_head->zero_grad();
    const auto fake = s.generator(ag::constant(z));
    const auto logits = judge(s, prepare(fake, st.blur_sigma, cfg.augment, aug), false);
    const auto hinge = losses::hinge_g_loss(logits);
    ag::Variable<Real> dc, ft;
    if (cfg.consistency()) dc = losses::discriminator_consistency(logits);
    if (cfg.faketwins()) {
      const Tensor<Real> z2 = augment::latent_perturb(z, cfg.l1, latent);
      const auto twin = s.generator(ag::constant(z2));
      ft = losses::faketwins_views(fake, twin, s.projector_set(), *s.head, cfg.augment, aug, cfg.objective());
    }
    const auto loss = losses::total_g_loss(hinge, dc, ft, w);
    st.hinge_g = hinge.item();
    st.dc_g = value_or_zero(dc);
    st.ft = value_or_zero(ft);
    st.g_loss = loss.item();
    if (!finite(st.g_loss)) diverged(s, "generator", st);
    ag::backward(loss);
    s.opt_g.step();
    if (s.opt_head) s.opt_head->step();
  } catch (...) {
    nn::set_requires_grad(d_params, true);
    throw;
  }
  nn::set_requires_grad(d_params, true);
  nn::zero_grad(d_params);

  nn::ema_update(s.ema.parameters(), s.generator.parameters(), cfg.ema_decay);
  s.images_seen += n;
  s.step += 1;
  return st;
}

// ---------------------------------------------------------------------------------------------

Index effective_eval_samples(const TrainConfig& cfg, Index dataset_size) {
  return cfg.eval_samples > 0 ? cfg.eval_samples : std::max<Index>(5000, dataset_size);
}

namespace {

metrics::Matrix embed_all(const metrics::Embedder& e, const Tensor<Real>& images) {
  const Index n = images.dim(0), per = images.size() / n;
  metrics::Matrix out(n, e.dim());
  for (Index s = 0; s < n; s += kChunk) {
    const Index m = std::min(kChunk, n - s);
    Shape shape = images.shape;
    shape[0] = m;
    Tensor<Real> chunk(shape, images.data.segment(s * per, m * per));
    out.middleRows(s, m) = e(chunk);
  }
  return out;
}

}  // namespace

EvalReference EvalReference::build(const io::Dataset& data, const TrainConfig& cfg) {
  ag::NoGradGuard guard;
  EvalReference r;
  r.embeddings = embed_all(metrics::Embedder(cfg.embed_dim, cfg.embed_seed), data.images);
  r.stats = metrics::EmbeddingStats::from(r.embeddings);
  return r;
}

metrics::MetricsReport evaluate_state(TrainState& s, const io::Dataset& data, const EvalReference& ref) {
  ag::NoGradGuard guard;
  const TrainConfig& cfg = s.config();
  const metrics::Embedder embedder(cfg.embed_dim, cfg.embed_seed);
  const Index z_dim = cfg.effective_z_dim();
  const Index n_fake = effective_eval_samples(cfg, data.size());

  RngStream zr = RngStream(cfg.eval_seed).derive("samples");
  const Tensor<Real> z = draw_latents(n_fake, z_dim, zr);
  metrics::Matrix fake(n_fake, embedder.dim());
  for (Index st = 0; st < n_fake; st += kChunk) {
    const Index m = std::min(kChunk, n_fake - st);
    Tensor<Real> zc({m, z_dim}, z.data.segment(st * z_dim, m * z_dim));
    fake.middleRows(st, m) = embedder(s.ema(ag::constant(zc)).value());
  }

  metrics::MetricsReport r;
  r.step = s.step;
  r.images_seen = s.images_seen;
  r.fid = metrics::frechet_distance(ref.stats, metrics::EmbeddingStats::from(fake));
  r.kid = metrics::kernel_distance(ref.embeddings, fake);
  const auto pr = metrics::precision_recall(ref.embeddings, fake, cfg.pr_k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  if (cfg.ppl_paths > 0) {
    const auto g = nn::cast_generator<double>(s.ema);
    const metrics::LatentFeatureFn f = [&](const metrics::Matrix& lat) {
      return embedder(g(ag::constant(Tensor<double>::from_matrix(lat))).value());
    };
    RngStream full = RngStream(cfg.eval_seed).derive("ppl-full");
    RngStream end = RngStream(cfg.eval_seed).derive("ppl-end");
    r.ppl_full = metrics::perceptual_path_length(f, z_dim, cfg.ppl_eps, cfg.ppl_paths, metrics::PplMode::Full, full);
    r.ppl_end = metrics::perceptual_path_length(f, z_dim, cfg.ppl_eps, cfg.ppl_paths, metrics::PplMode::End, end);
  } else {
    r.ppl_full = r.ppl_end = std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<double> signed_logits;
  const Index n_real = data.size(), per = data.images.size() / std::max<Index>(n_real, 1);
  // Balanced chunks: the discriminator normalizes with batch statistics.
  const Index chunks = (n_real + kChunk - 1) / kChunk;
  for (Index c = 0, st = 0, m = 0; c < chunks; ++c, st += m) {
    m = (n_real - st) / (chunks - c);
    Shape shape = data.images.shape;
    shape[0] = m;
    Tensor<Real> chunk(shape, data.images.data.segment(st * per, m * per));
    const auto logits = judge(s, ag::constant(chunk), false);
    Eigen::ArrayXd total = Eigen::ArrayXd::Zero(m);
    for (std::size_t k = 0; k < logits.size(); ++k) total += logits.scalar(k).value().data.cast<double>();
    signed_logits.insert(signed_logits.end(), total.begin(), total.end());
  }
  r.signed_logit_fraction = metrics::signed_logit_fraction(signed_logits);
  r.real_count = n_real;
  r.fake_count = n_fake;
  r.embed_seed = cfg.embed_seed;
  return r;
}

// ---------------------------------------------------------------------------------------------

namespace {

constexpr int kReportFields = 17;
constexpr int kAccFields = 6;  // count, d_loss, g_loss, dc_real, dc_fake, ft

std::vector<double> report_values(const metrics::MetricsReport& r) {
  return {static_cast<double>(r.step), static_cast<double>(r.images_seen), r.fid, r.kid, r.precision, r.recall,
          r.ppl_full, r.ppl_end, r.signed_logit_fraction, r.d_loss, r.g_loss, r.dc_real, r.dc_fake, r.ft_loss,
          static_cast<double>(r.real_count), static_cast<double>(r.fake_count), static_cast<double>(r.embed_seed)};
}

metrics::MetricsReport report_from(const double* v) {
  metrics::MetricsReport r;
  r.step = static_cast<std::int64_t>(v[0]);
  r.images_seen = static_cast<std::int64_t>(v[1]);
  r.fid = v[2];
  r.kid = v[3];
  r.precision = v[4];
  r.recall = v[5];
  r.ppl_full = v[6];
  r.ppl_end = v[7];
  r.signed_logit_fraction = v[8];
  r.d_loss = v[9];
  r.g_loss = v[10];
  r.dc_real = v[11];
  r.dc_fake = v[12];
  r.ft_loss = v[13];
  r.real_count = static_cast<Index>(v[14]);
  r.fake_count = static_cast<Index>(v[15]);
  r.embed_seed = static_cast<std::uint64_t>(v[16]);
  return r;
}

// Loop bookkeeping that must survive a resume.
struct LoopState {
  std::vector<metrics::MetricsReport> rows;
  std::array<double, kAccFields> acc{};
  double best_fid = std::numeric_limits<double>::infinity();
  std::int64_t best_images = -1;

  void store(TrainState& s) const {
    Tensor<double> table({static_cast<Index>(rows.size()), kReportFields});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto v = report_values(rows[i]);
      for (int j = 0; j < kReportFields; ++j) table.data[static_cast<Index>(i) * kReportFields + j] = v[static_cast<std::size_t>(j)];
    }
    Tensor<double> a({kAccFields});
    for (int j = 0; j < kAccFields; ++j) a.data[j] = acc[static_cast<std::size_t>(j)];
    Tensor<double> best({2});
    best.data << best_fid, static_cast<double>(best_images);
    s.aux = {{"train.rows", table}, {"train.acc", a}, {"train.best", best}};
  }

  void load(const TrainState& s) {
    for (const auto& [name, t] : s.aux) {
      if (name == "train.rows") {
        rows.clear();
        for (Index i = 0; i < t.dim(0); ++i) rows.push_back(report_from(t.ptr() + i * kReportFields));
      } else if (name == "train.acc") {
        for (int j = 0; j < kAccFields; ++j) acc[static_cast<std::size_t>(j)] = t.data[j];
      } else if (name == "train.best") {
        best_fid = t.data[0];
        best_images = static_cast<std::int64_t>(t.data[1]);
      }
    }
  }

  void accumulate(const StepStats& st) {
    acc[0] += 1;
    acc[1] += st.d_loss;
    acc[2] += st.g_loss;
    acc[3] += st.dc_real;
    acc[4] += st.dc_fake;
    acc[5] += st.ft;
  }

  void fill_losses(metrics::MetricsReport& r) {
    const double n = std::max(acc[0], 1.0);
    r.d_loss = acc[1] / n;
    r.g_loss = acc[2] / n;
    r.dc_real = acc[3] / n;
    r.dc_fake = acc[4] / n;
    r.ft_loss = acc[5] / n;
    acc.fill(0.0);
  }
};

void write_csv(const std::string& path, const std::vector<metrics::MetricsReport>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << metrics::MetricsReport::csv_header() << '\n';
  for (const auto& r : rows) out << r.csv_row() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path + "' (disk full?)");
}

std::string checkpoint_name(std::int64_t images) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%010lld.hpg", static_cast<long long>(images));
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (cfg.dataset.empty()) throw std::invalid_argument("config key 'dataset' is required for training");
  const io::Dataset data =
      io::load_dataset(cfg.dataset, cfg.resolution, cfg.subset, cfg.stream_seed("data"), cfg.xflip);
  return train(cfg, data, options);
}

TrainResult train(const TrainConfig& cfg, const io::Dataset& data, const TrainOptions& options) {
  cfg.validate();
  TrainResult result;
  result.out_dir = cfg.out_dir.empty() ? default_out_root() : cfg.out_dir;
  fs::create_directories(result.out_dir);
  const fs::path out(result.out_dir);
  {
    std::ofstream c(out / "config.txt", std::ios::trunc);
    c << cfg.serialize();
  }
  result.metrics_csv = (out / "metrics.csv").string();
  result.final_checkpoint = (out / "final.hpg").string();
  result.best_checkpoint = (out / "best.hpg").string();

  TrainState state(cfg);
  LoopState loop;
  if (!options.resume.empty()) {
    state.restore(ckpt::load(options.resume));
    loop.load(state);
  }
  const EvalReference ref = EvalReference::build(data, cfg);
  const std::uint64_t data_seed = cfg.stream_seed("data");
  auto log = [&](const std::string& line) {
    if (options.log) *options.log << line << std::endl;
  };

  auto record = [&](metrics::MetricsReport r) {
    loop.fill_losses(r);
    loop.rows.push_back(r);
    if (r.fid < loop.best_fid) {
      loop.best_fid = r.fid;
      loop.best_images = r.images_seen;
      loop.store(state);
      ckpt::save(result.best_checkpoint, state.to_checkpoint());
    }
    write_csv(result.metrics_csv, loop.rows);
    std::ostringstream os;
    os << "images " << r.images_seen << " fid " << metrics::format_number(r.fid) << " kid "
       << metrics::format_number(r.kid) << " pr " << metrics::format_number(r.precision) << '/'
       << metrics::format_number(r.recall) << " sign " << metrics::format_number(r.signed_logit_fraction)
       << " d " << metrics::format_number(r.d_loss) << " g " << metrics::format_number(r.g_loss);
    log(os.str());
  };

  while (state.images_seen < cfg.total_images) {
    const std::int64_t before = state.images_seen;
    const StepStats st = train_step(state, batch_at(data.images, before, cfg.batch, data_seed));
    loop.accumulate(st);
    if (state.images_seen / cfg.eval_interval > before / cfg.eval_interval) {
      record(evaluate_state(state, data, ref));
    }
    if (cfg.checkpoint_interval > 0 && state.images_seen / cfg.checkpoint_interval > before / cfg.checkpoint_interval &&
        state.images_seen < cfg.total_images) {
      loop.store(state);
      ckpt::save((out / checkpoint_name(state.images_seen)).string(), state.to_checkpoint());
    }
  }

  if (!loop.rows.empty() && loop.rows.back().images_seen == state.images_seen) {
    loop.rows.push_back(loop.rows.back());
    write_csv(result.metrics_csv, loop.rows);
  } else {
    record(evaluate_state(state, data, ref));
  }
  loop.store(state);
  ckpt::save(result.final_checkpoint, state.to_checkpoint());

  result.rows = loop.rows;
  result.best_fid = loop.best_fid;
  result.best_images = loop.best_images;
  double sign_mean = 0;
  for (const auto& r : loop.rows) sign_mean += r.signed_logit_fraction / static_cast<double>(loop.rows.size());
  nlohmann::json summary = {{"config_level", level_name(cfg.level)},
                            {"digest", format_hex(cfg.digest())},
                            {"images_seen", state.images_seen},
                            {"best_fid", loop.best_fid},
                            {"best_images", loop.best_images},
                            {"final_fid", loop.rows.back().fid},
                            {"mean_signed_logit_fraction", sign_mean},
                            {"rows", loop.rows.size()}};
  std::ofstream(out / "summary.json", std::ios::trunc) << summary.dump(2) << '\n';
  return result;
}

// ---------------------------------------------------------------------------------------------

std::unique_ptr<TrainState> load_state(const std::string& path, const TrainConfig& cfg) {
  auto state = std::make_unique<TrainState>(cfg);
  state->restore(ckpt::load(path));
  return state;
}

TrainConfig checkpoint_config(const std::string& path) { return TrainConfig::parse(ckpt::load(path).config); }

metrics::MetricsReport evaluate(const std::string& checkpoint, const io::Dataset& data, const TrainConfig& cfg) {
  auto state = load_state(checkpoint, cfg);
  return evaluate_state(*state, data, EvalReference::build(data, cfg));
}

void sample(const std::string& checkpoint, Index n, std::uint64_t seed, const std::string& out_path) {
  if (n <= 0) throw std::invalid_argument("sample count must be positive");
  const TrainConfig cfg = checkpoint_config(checkpoint);
  auto state = load_state(checkpoint, cfg);
  ag::NoGradGuard guard;
  const Index z_dim = cfg.effective_z_dim();
  RngStream rng(seed);
  const Tensor<Real> z = draw_latents(n, z_dim, rng);
  Tensor<Real> images({n, 3, cfg.resolution, cfg.resolution});
  const Index per = 3 * cfg.resolution * cfg.resolution;
  for (Index s = 0; s < n; s += kChunk) {
    const Index m = std::min(kChunk, n - s);
    Tensor<Real> zc({m, z_dim}, z.data.segment(s * z_dim, m * z_dim));
    images.data.segment(s * per, m * per) = state->ema(ag::constant(zc)).value().data;
  }
  io::write_png(out_path, io::make_grid(images));
}

// ---------------------------------------------------------------------------------------------

double ProbeReport::mean(const std::string& set, double sigma) const {
  for (const auto& r : rows)
    if (r.set == set && r.sigma == sigma) return r.mean_loss;
  throw std::invalid_argument("probe report has no row for " + set);
}

bool ProbeReport::all_pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.second; });
}

std::string ProbeReport::table() const {
  std::ostringstream os;
  os << "set,sigma,mean_ft_loss\n";
  for (const auto& r : rows) os << r.set << ',' << r.sigma << ',' << metrics::format_number(r.mean_loss) << '\n';
  for (const auto& [name, ok] : verdicts) os << (ok ? "PASS " : "FAIL ") << name << '\n';
  return os.str();
}

std::vector<ProbeSet> bundled_probe_sets(Index resolution, Index n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("probe sets need at least 2 images");
  const Index r = resolution;
  RngStream rng = RngStream(seed).derive("probe-sets");
  auto color_square = [r](const std::array<double, 3>& color) {
    Tensor<Real> img({1, 3, r, r});
    img.data.setConstant(-1.0f);
    for (Index c = 0; c < 3; ++c)
      for (Index y = r / 4; y < 3 * r / 4; ++y)
        for (Index x = r / 4; x < 3 * r / 4; ++x) img.at(0, c, y, x) = static_cast<Real>(color[static_cast<std::size_t>(c)]);
    return img;
  };
  auto texture = [r](double freq, double angle, double phase, const std::array<double, 3>& color) {
    Tensor<Real> img({1, 3, r, r});
    const double kx = std::cos(angle) * freq, ky = std::sin(angle) * freq;
    for (Index y = 0; y < r; ++y)
      for (Index x = 0; x < r; ++x) {
        const double v = std::sin(2 * M_PI * (kx * static_cast<double>(x) + ky * static_cast<double>(y)) / static_cast<double>(r) + phase);
        for (Index c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<Real>(v * color[static_cast<std::size_t>(c)]);
      }
    return img;
  };
  auto stack = [n, r](const std::vector<Tensor<Real>>& parts) {
    Tensor<Real> out({n, 3, r, r});
    const Index per = 3 * r * r;
    for (Index i = 0; i < n; ++i) out.data.segment(i * per, per) = parts[static_cast<std::size_t>(i) % parts.size()].data;
    return out;
  };
  auto random_color = [&rng] {
    return std::array<double, 3>{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  };
  std::vector<Tensor<Real>> squares, textures;
  for (Index i = 0; i < n; ++i) {
    squares.push_back(color_square(random_color()));
    const double freq = rng.uniform(1, 6), angle = rng.uniform(0, M_PI), phase = rng.uniform(0, 2 * M_PI);
    textures.push_back(texture(freq, angle, phase, random_color()));
  }
  return {{"color_identical", stack({squares[0]})},
          {"color_distinct", stack(squares)},
          {"texture_identical", stack({textures[0]})},
          {"texture_distinct", stack(textures), true}};
}

ProbeReport probe_batch_diversity(const TrainConfig& cfg, const std::vector<ProbeSet>& sets,
                                  const std::vector<double>& sigmas, int draws, std::uint64_t seed) {
  if (sets.size() < 2) throw std::invalid_argument("probe needs at least two image sets");
  if (sigmas.empty() || draws <= 0) throw std::invalid_argument("probe needs blur levels and a positive draw count");
  TrainConfig c = cfg;
  c.level = ConfigLevel::E;
  std::vector<std::unique_ptr<features::Projector<Real>>> owned;
  losses::ProjectorSet<Real> projectors;
  Index pooled = 0;
  const auto specs = c.feature_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    owned.push_back(std::make_unique<features::Projector<Real>>(specs[i], c.projector_seed + i));
    projectors.push_back(owned.back().get());
    for (Index w : specs[i].widths) pooled += w;
  }
  nn::LinearHead<Real> head(pooled, c.head_width, RngStream(seed).derive("probe-head").seed());
  ag::NoGradGuard guard;
  ProbeReport report;
  for (const auto& set : sets) {
    for (double sigma : sigmas) {
      const auto blurred = augment::gaussian_blur(ag::constant(set.images), sigma);
      double total = 0;
      for (int d = 0; d < draws; ++d) {
        RngStream rng = RngStream(seed).derive("probe-draw").derive(static_cast<std::uint64_t>(d));
        total += losses::faketwins_views(blurred, blurred, projectors, head, c.augment, rng, c.objective()).item();
      }
      report.rows.push_back({set.name, sigma, total / draws});
    }
  }
  const double base = sigmas.front();
  for (const auto& set : sets) {
    const std::string suffix = "_identical";
    if (set.name.size() <= suffix.size() || set.name.compare(set.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    const std::string family = set.name.substr(0, set.name.size() - suffix.size());
    const std::string distinct = family + "_distinct";
    if (std::none_of(sets.begin(), sets.end(), [&](const ProbeSet& p) { return p.name == distinct; })) continue;
    report.verdicts.emplace_back(family + ": identical > distinct",
                                 report.mean(set.name, base) > report.mean(distinct, base));
  }
  for (const auto& set : sets) {
    if (!set.blur_ladder) continue;
    bool ok = true;
    for (std::size_t i = 1; i < sigmas.size(); ++i) ok = ok && report.mean(set.name, sigmas[i]) >= report.mean(set.name, sigmas[i - 1]);
    report.verdicts.emplace_back(set.name + ": nondecreasing in sigma", ok);
  }
  return report;
}

}  // namespace hpgan::train
