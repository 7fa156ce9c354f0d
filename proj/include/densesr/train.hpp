#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "densesr/checkpoint.hpp"
#include "densesr/config.hpp"
#include "densesr/dataset.hpp"
#include "densesr/image_ops.hpp"
#include "densesr/losses.hpp"
#include "densesr/models.hpp"
#include "densesr/optimizer.hpp"
#include "densesr/png_io.hpp"
#include "densesr/psnr.hpp"
#include "json.hpp"

namespace densesr {

// ---------------------------------------------------------------------------
// PSNR reporting
// ---------------------------------------------------------------------------

struct PsnrRow {
  std::string method;  // nearest | bicubic | model
  std::vector<PsnrValue> per_chip;
  double mean_db = 0.0;  // arithmetic mean over non-capped chips
  int capped = 0;
};

struct PsnrReport {
  int scale = 0;
  int chips = 0;
  std::vector<PsnrRow> rows;

  const PsnrRow& row(const std::string& method) const {
    for (const PsnrRow& r : rows) {
      if (r.method == method) return r;
    }
    fail_config("no such method in report: ", method);
  }
};

namespace detail {

inline void finalize_row(PsnrRow& row) {
  double sum = 0.0;
  int finite = 0;
  row.capped = 0;
  for (const PsnrValue& v : row.per_chip) {
    if (v.capped) {
      ++row.capped;
    } else {
      sum += v.db;
      ++finite;
    }
  }
  // All-capped means every chip was reconstructed exactly; report the cap.
  row.mean_db = finite > 0 ? sum / finite : kPsnrCapDb;
}

}  // namespace detail

// PSNR of the three methods over the validation split of `pairs`.
template <typename S>
PsnrReport evaluate(Generator<S>& gen, const std::vector<ChipPair<S>>& pairs, int scale) {
  if (gen.spec().scale != scale) {
    fail_config("checkpoint scale ", gen.spec().scale, " does not match requested scale ",
                scale);
  }
  PsnrRow nearest{"nearest", {}, 0.0, 0};
  PsnrRow bicubic{"bicubic", {}, 0.0, 0};
  PsnrRow model{"model", {}, 0.0, 0};
  int chips = 0;
  for (const ChipPair<S>& pair : pairs) {
    if (pair.split != "val") continue;
    if (pair.scale != scale) {
      fail_config("pair at scale ", pair.scale, " in an evaluation at scale ", scale);
    }
    ++chips;
    nearest.per_chip.push_back(psnr(nn_upsample(pair.lr, scale), pair.hr));
    bicubic.per_chip.push_back(psnr(bicubic_upsample(pair.lr, scale), pair.hr));
    Var<S> out = gen.forward(constant(pair.lr), ForwardCtx<S>{nullptr, Mode::kEval, false});
    model.per_chip.push_back(psnr(out.value, pair.hr));
  }
  if (chips == 0) fail_config("no validation chips to evaluate");
  detail::finalize_row(nearest);
  detail::finalize_row(bicubic);
  detail::finalize_row(model);
  return PsnrReport{scale, chips, {nearest, bicubic, model}};
}

inline std::string format_report(const PsnrReport& report) {
  std::string out = "method    mean dB   chips  capped\n";
  char line[96];
  for (const PsnrRow& row : report.rows) {
    std::snprintf(line, sizeof(line), "%-9s %7.3f  %6d  %6d\n", row.method.c_str(),
                  row.mean_db, report.chips, row.capped);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scale study (fixed HR set, each scale's model on its own degradation)
// ---------------------------------------------------------------------------

struct ScaleStudyEntry {
  int scale = 0;
  bool available = false;
  PsnrReport report;
};

namespace detail {

template <typename S>
std::uint64_t fnv1a_bytes(const std::vector<Tensor<S>>& chips) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor<S>& t : chips) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(S); ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace detail

// Degrades the same HR chips at each factor and scores every method. A
// missing model is skipped with a warning; scales outside {2,4,8} are
// rejected before this is called (config validation).
template <typename S>
std::vector<ScaleStudyEntry> scale_study(const std::vector<Tensor<S>>& hr_chips,
                                         std::map<int, Generator<S>*> models) {
  if (hr_chips.empty()) fail_config("scale study needs at least one HR chip");
  for (const auto& [scale, gen] : models) {
    if (scale != 2 && scale != 4 && scale != 8) {
      fail_config("scale study supports scales {2,4,8}, got ", scale);
    }
    if (gen == nullptr) fail_config("null model for scale ", scale);
  }
  for (const Tensor<S>& hr : hr_chips) {
    const Shape s = hr.shape();
    if (s.h % 8 != 0 || s.w % 8 != 0) {
      fail_config("HR chips must be divisible by 8 for the scale study, got ", s.str());
    }
  }

  const std::uint64_t reference_hash = detail::fnv1a_bytes(hr_chips);
  std::vector<ScaleStudyEntry> entries;
  for (int scale : {2, 4, 8}) {
    ScaleStudyEntry entry;
    entry.scale = scale;
    auto it = models.find(scale);
    if (it == models.end()) {
      log_warn("scale study: no model for scale ", scale, ", skipping");
      entries.push_back(std::move(entry));
      continue;
    }
    // Protocol integrity: the same HR set must be used at every factor.
    if (detail::fnv1a_bytes(hr_chips) != reference_hash) {
      fail_runtime("HR set changed between scales in the scale study");
    }
    std::vector<ChipPair<S>> pairs;
    for (const Tensor<S>& hr : hr_chips) {
      ChipPair<S> p;
      p.hr = hr;
      p.lr = nn_downsample(hr, scale);
      p.scale = scale;
      p.split = "val";
      pairs.push_back(std::move(p));
    }
    entry.available = true;
    entry.report = evaluate(*it->second, pairs, scale);
    entries.push_back(std::move(entry));
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// nearest | bicubic | model panels separated by 2-pixel white gutters.
template <typename S>
Tensor<S> compose_grid(const std::vector<Tensor<S>>& panels) {
  const int sep = 2;
  const Shape s = panels.at(0).shape();
  for (const Tensor<S>& p : panels) {
    if (p.shape() != s) fail_config("grid panels must share one shape");
  }
  const int total_w = static_cast<int>(panels.size()) * s.w +
                      (static_cast<int>(panels.size()) - 1) * sep;
  Tensor<S> grid(Shape{1, s.c, s.h, total_w}, S(1));
  int x0 = 0;
  for (const Tensor<S>& p : panels) {
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) grid.at(0, c, y, x0 + x) = p.at(0, c, y, x);
    x0 += s.w + sep;
  }
  return grid;
}

// Super-resolves one PNG. When grid_path is non-empty, also writes the
// nearest | bicubic | model comparison strip.
template <typename S>
Tensor<S> infer_png(Generator<S>& gen, const std::string& input_path,
                    const std::string& output_path, const std::string& grid_path = "") {
  Tensor<S> lr = load_png<S>(input_path);
  if (lr.shape().c != gen.spec().channels) {
    fail_config("input has ", lr.shape().c, " channels but the model expects ",
                gen.spec().channels);
  }
  Var<S> out = gen.forward(constant(lr), ForwardCtx<S>{nullptr, Mode::kEval, false});
  save_png(out.value, output_path);
  if (!grid_path.empty()) {
    const int s = gen.spec().scale;
    save_png(compose_grid<S>({nn_upsample(lr, s), bicubic_upsample(lr, s), out.value}),
             grid_path);
  }
  return out.value;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

// Architecture bundle for a training run; defaults are the full-size
// models. The generator's scale is always taken from the TrainConfig.
struct TrainerModels {
  GeneratorSpec gen{};
  DiscriminatorSpec disc{};
  FeatureExtractorSpec features{};
};

namespace detail {

inline TrainerModels resolve_models(const TrainConfig& cfg, TrainerModels m) {
  m.gen.scale = cfg.scale;
  if (m.disc.channels != m.gen.channels || m.features.channels != m.gen.channels) {
    fail_config("generator/discriminator/extractor channel counts must agree");
  }
  return m;
}

}  // namespace detail

// Alternating one-D-step / one-G-step adversarial training with per-step
// metrics, epoch checkpoints, and bit-exact resume.
template <typename S = float>
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg, TrainerModels models = {},
                   std::uint64_t init_seed = 0x5EED)
      : cfg_((validate(cfg), cfg)),
        models_(detail::resolve_models(cfg, models)),
        init_rng_g_(init_seed),
        init_rng_d_(init_seed + 1),
        gen_(models_.gen, init_rng_g_),
        disc_(models_.disc, init_rng_d_),
        features_(models_.features),
        opt_g_(gen_.params(), cfg.g_lr),
        opt_d_(disc_.params(), cfg.d_lr),
        rng_(cfg.seed) {}

  Generator<S>& generator() { return gen_; }
  Discriminator<S>& discriminator() { return disc_; }
  Adam<S>& generator_optimizer() { return opt_g_; }
  Adam<S>& discriminator_optimizer() { return opt_d_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t steps_done() const { return step_; }
  int epochs_done() const { return epoch_done_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }

  Checkpoint snapshot() {
    Checkpoint ck;
    ck.scale = cfg_.scale;
    ck.epoch = epoch_done_;
    ck.step = step_;
    ck.opt_g_steps = opt_g_.step_count();
    ck.opt_d_steps = opt_d_.step_count();
    ck.config_text = serialize_config(cfg_);
    ck.rng_state = rng_.save_state();
    append_params(ck, opt_g_.params());
    append_buffers(ck, gen_.buffers());
    append_params(ck, opt_d_.params());
    append_buffers(ck, disc_.buffers());
    append_adam(ck, opt_g_, "opt_g");
    append_adam(ck, opt_d_, "opt_d");
    return ck;
  }

  void restore(const Checkpoint& ck) {
    if (ck.scale != cfg_.scale) {
      fail_config("checkpoint scale ", ck.scale, " does not match configured scale ",
                  cfg_.scale);
    }
    const std::size_t expected = 3 * opt_g_.params().size() + gen_.buffers().size() +
                                 3 * opt_d_.params().size() + disc_.buffers().size();
    if (ck.tensors.size() != expected) {
      fail_runtime("checkpoint holds ", ck.tensors.size(), " tensors, expected ", expected);
    }
    restore_params(ck, opt_g_.params());
    restore_buffers(ck, gen_.buffers());
    restore_params(ck, opt_d_.params());
    restore_buffers(ck, disc_.buffers());
    restore_adam(ck, opt_g_, "opt_g");
    restore_adam(ck, opt_d_, "opt_d");
    opt_g_.set_step_count(ck.opt_g_steps);
    opt_d_.set_step_count(ck.opt_d_steps);
    rng_.load_state(ck.rng_state);
    epoch_done_ = ck.epoch;
    step_ = ck.step;
    resumed_ = true;
  }

  using StopFn = std::function<bool(const LossReport<S>&)>;

  // Trains from epoch_done_ up to cfg.epochs over the train split of
  // `pairs`. When `stop` returns true for a step's report, training ends
  // early (the overfit smoke test stops once content falls below target).
  void run(const std::vector<ChipPair<S>>& pairs, const StopFn& stop = nullptr) {
    std::vector<ChipPair<S>> train;
    for (const ChipPair<S>& p : pairs) {
      if (p.split == "train") train.push_back(p);
    }
    if (train.empty()) fail_config("dataset has no training chips");
    if (static_cast<int>(train.size()) < cfg_.batch_size) {
      fail_config("need at least one full batch: ", train.size(), " chips < batch_size ",
                  cfg_.batch_size);
    }
    std::filesystem::create_directories(cfg_.out_dir);
    std::ofstream metrics(metrics_path(),
                          resumed_ ? std::ios::app : std::ios::trunc);
    if (!metrics) fail_runtime("cannot open metrics log: ", metrics_path());

    const AlphaSchedule schedule{cfg_.alpha0, cfg_.alpha_decay};
    for (int epoch = epoch_done_; epoch < cfg_.epochs; ++epoch) {
      const double alpha = schedule.at(epoch);
      std::vector<Batch<S>> batches = make_batches(train, cfg_.batch_size, rng_, true);
      bool stopped = false;
      for (const Batch<S>& batch : batches) {
        LossReport<S> report;
        try {
          report = train_step(batch, epoch, alpha, metrics);
        } catch (const RuntimeError&) {
          const std::string path =
              (std::filesystem::path(cfg_.out_dir) / "emergency.dsrc").string();
          save_checkpoint(snapshot(), path);
          log_warn("training aborted; emergency checkpoint written to ", path);
          throw;
        }
        if (stop && stop(report)) {
          stopped = true;
          break;
        }
      }
      epoch_done_ = epoch + 1;
      const bool cadence_hit =
          cfg_.checkpoint_every > 0 && epoch_done_ % cfg_.checkpoint_every == 0;
      if (cadence_hit || epoch_done_ == cfg_.epochs || stopped) {
        write_epoch_checkpoint();
      }
      if (stopped) break;
    }
  }

  std::string metrics_path() const {
    return (std::filesystem::path(cfg_.out_dir) / "metrics.jsonl").string();
  }

  // One discriminator update on this batch; generator state is untouched.
  S d_step(const Batch<S>& batch) {
    Tensor<S> fake_value;
    {
      Var<S> fake =
          gen_.forward(constant(batch.lr), ForwardCtx<S>{nullptr, Mode::kTrain, false});
      fake_value = fake.value;
    }
    Tape<S> tape;
    ForwardCtx<S> ctx{&tape, Mode::kTrain, true};
    Var<S> d_real = disc_.forward(constant(batch.hr), ctx);
    Var<S> d_fake = disc_.forward(constant(fake_value), ctx);
    Var<S> d_loss = discriminator_loss(d_real, d_fake);
    const S value = d_loss.value.item();
    require_finite(value, "discriminator loss", step_);
    zero_grads(opt_d_.params());
    tape.backward(d_loss);
    opt_d_.step();
    return value;
  }

  // One generator update on this batch; discriminator state is untouched
  // apart from its train-mode batch-norm running statistics.
  LossReport<S> g_step(const Batch<S>& batch, double alpha) {
    Tape<S> tape;
    Var<S> fake = gen_.forward(constant(batch.lr), ForwardCtx<S>{&tape, Mode::kTrain, true});
    Var<S> d_on_fake = disc_.forward(fake, ForwardCtx<S>{&tape, Mode::kTrain, false});
    const LossWeights weights{cfg_.beta1, cfg_.adversarial == "non_saturating"};
    GeneratorLoss<S> loss =
        generator_loss(d_on_fake, fake, constant(batch.hr), &features_, weights, alpha);
    require_finite(loss.report.total, "generator loss", step_);
    zero_grads(opt_g_.params());
    tape.backward(loss.total);
    opt_g_.step();
    ++step_;
    return loss.report;
  }

  std::string checkpoint_path(int epoch) const {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d.dsrc", epoch);
    return (std::filesystem::path(cfg_.out_dir) / name).string();
  }

 private:
  void write_epoch_checkpoint() {
    const std::string path = checkpoint_path(epoch_done_);
    save_checkpoint(snapshot(), path);
    last_checkpoint_ = path;
  }

  static void require_finite(S value, const char* term, std::int64_t step) {
    if (!std::isfinite(static_cast<double>(value))) {
      fail_runtime("non-finite ", term, " at step ", step);
    }
  }

  LossReport<S> train_step(const Batch<S>& batch, int epoch, double alpha,
                           std::ofstream& metrics) {
    const S d_loss_value = d_step(batch);
    const LossReport<S> report = g_step(batch, alpha);

    nlohmann::json line{{"step", step_},
                        {"epoch", epoch},
                        {"alpha", alpha},
                        {"d_loss", static_cast<double>(d_loss_value)},
                        {"g_total", static_cast<double>(report.total)},
                        {"g_adv", static_cast<double>(report.adversarial)},
                        {"g_content", static_cast<double>(report.content)},
                        {"g_fm", static_cast<double>(report.feature_matching)}};
    metrics << line.dump() << "\n";
    metrics.flush();
    return report;
  }

  TrainConfig cfg_;
  TrainerModels models_;
  Rng init_rng_g_, init_rng_d_;  // consumed during weight initialization only
  Generator<S> gen_;
  Discriminator<S> disc_;
  FeatureExtractor<S> features_;
  Adam<S> opt_g_;
  Adam<S> opt_d_;
  Rng rng_;
  std::int64_t step_ = 0;
  int epoch_done_ = 0;
  bool resumed_ = false;
  std::string last_checkpoint_;
};

}  // namespace densesr
