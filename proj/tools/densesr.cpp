// densesr command-line interface: train / evaluate / infer / scale-study /
// gradcheck / synth. All verbs operate on the full-size default
// architecture; reduced models are a library-level concern (see
// TrainerModels).
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "densesr/checkpoint.hpp"
#include "densesr/config.hpp"
#include "densesr/dataset.hpp"
#include "densesr/train.hpp"

namespace {

using densesr::Checkpoint;
using densesr::ChipPair;
using densesr::TrainConfig;
using densesr::Trainer;

// Rebuilds a default-architecture trainer from a checkpoint's embedded
// config, then restores every tensor into it.
Trainer<float> trainer_from_checkpoint(const std::string& path) {
  const Checkpoint ck = densesr::load_checkpoint(path);
  const TrainConfig cfg = densesr::parse_config_text(ck.config_text, path);
  Trainer<float> t(cfg);
  t.restore(ck);
  return t;
}

std::vector<ChipPair<float>> load_dataset(const TrainConfig& cfg) {
  if (!cfg.manifest.empty()) {
    return densesr::load_pairs<float>(cfg.manifest, cfg.scale);
  }
  densesr::SyntheticDatasetSpec spec;
  spec.seed = cfg.seed;
  spec.scenes = cfg.synth_scenes;
  spec.scene_size = cfg.synth_scene_size;
  spec.chip_size = cfg.chip_size;
  spec.scale = cfg.scale;
  spec.val_fraction = cfg.val_fraction;
  return densesr::synthetic_pairs<float>(spec);
}

int run_train(const TrainConfig& cfg, const std::string& resume_path) {
  densesr::validate(cfg);
  Trainer<float> trainer(cfg);
  if (!resume_path.empty()) {
    trainer.restore(densesr::load_checkpoint(resume_path));
    std::printf("resumed from %s at epoch %d (step %lld)\n", resume_path.c_str(),
                trainer.epochs_done(), static_cast<long long>(trainer.steps_done()));
  }
  const std::vector<ChipPair<float>> pairs = load_dataset(cfg);
  std::printf("training: %zu chips, scale %d, %d epochs, batch %d\n", pairs.size(),
              cfg.scale, cfg.epochs, cfg.batch_size);
  trainer.run(pairs);
  std::printf("done: %lld generator steps, metrics at %s\n",
              static_cast<long long>(trainer.steps_done()), trainer.metrics_path().c_str());
  if (!trainer.last_checkpoint().empty()) {
    std::printf("last checkpoint: %s\n", trainer.last_checkpoint().c_str());
  }
  return 0;
}

int run_evaluate(const std::string& ckpt_path, const std::string& manifest, int scale) {
  Trainer<float> trainer = trainer_from_checkpoint(ckpt_path);
  TrainConfig cfg = trainer.config();
  if (!manifest.empty()) cfg.manifest = manifest;
  if (scale != 0 && scale != cfg.scale) {
    densesr::fail_config("checkpoint was trained at scale ", cfg.scale,
                         " but --scale requested ", scale);
  }
  const std::vector<ChipPair<float>> pairs = load_dataset(cfg);
  const densesr::PsnrReport report =
      densesr::evaluate(trainer.generator(), pairs, cfg.scale);
  std::printf("validation PSNR at scale %d over %d chips\n", report.scale, report.chips);
  std::fputs(densesr::format_report(report).c_str(), stdout);
  return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& input,
              const std::string& output, const std::string& grid) {
  Trainer<float> trainer = trainer_from_checkpoint(ckpt_path);
  densesr::Tensor<float> sr =
      densesr::infer_png(trainer.generator(), input, output, grid);
  std::printf("wrote %s (%s)\n", output.c_str(), sr.shape().str().c_str());
  if (!grid.empty()) std::printf("wrote comparison grid %s\n", grid.c_str());
  return 0;
}

int run_scale_study(const std::map<int, std::string>& ckpts, const std::string& manifest,
                    std::uint64_t seed) {
  // The fixed HR set: validation chips from the manifest, or the default
  // synthetic validation split.
  TrainConfig cfg;
  cfg.scale = 2;  // least restrictive divisibility for loading
  cfg.seed = seed;
  cfg.manifest = manifest;
  std::vector<densesr::Tensor<float>> hr;
  for (const ChipPair<float>& p : load_dataset(cfg)) {
    if (p.split == "val") hr.push_back(p.hr);
  }

  std::vector<std::unique_ptr<Trainer<float>>> trainers;
  std::map<int, densesr::Generator<float>*> models;
  for (const auto& [scale, path] : ckpts) {
    if (path.empty()) continue;
    trainers.push_back(std::make_unique<Trainer<float>>(trainer_from_checkpoint(path)));
    if (trainers.back()->config().scale != scale) {
      densesr::fail_config("checkpoint ", path, " is for scale ",
                           trainers.back()->config().scale, ", not ", scale);
    }
    models[scale] = &trainers.back()->generator();
  }

  const auto entries = densesr::scale_study<float>(hr, models);
  std::printf("scale study over %zu HR chips\n", hr.size());
  for (const auto& entry : entries) {
    if (!entry.available) {
      std::printf("scale %d: skipped (no checkpoint)\n", entry.scale);
      continue;
    }
    std::printf("scale %d:\n%s", entry.scale,
                densesr::format_report(entry.report).c_str());
  }
  return 0;
}

int run_synth(const densesr::SyntheticDatasetSpec& spec, const std::string& out_dir) {
  const std::string manifest = densesr::write_synthetic_dataset<float>(spec, out_dir);
  std::printf("wrote %d scene(s) and manifest %s\n", spec.scenes, manifest.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: runtime finite-difference spot checks on the core operations
// ---------------------------------------------------------------------------

struct GradCheck {
  bool ok = true;

  template <typename Fn>
  void check(const char* label, densesr::Tensor<double>& x, Fn&& scalar_of) {
    using densesr::Tape;
    using densesr::Var;
    Tape<double> tape;
    densesr::Parameter<double> p{"x", x};
    Var<double> loss = scalar_of(tape.watch(p));
    tape.backward(loss);

    double max_rel = 0.0;
    // Central differences carry roundoff noise of roughly |loss| * 1e-16 / eps
    // in absolute terms, so elements whose true gradient sits near zero report
    // meaningless relative errors.  eps and the denominator floor are chosen
    // so that noise stays two orders of magnitude below the pass threshold.
    const double eps = 1e-5;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + eps;
      Tape<double> t1;
      densesr::Parameter<double> p1{"x", x};
      const double up = scalar_of(t1.watch(p1)).value.item();
      x[i] = saved - eps;
      Tape<double> t2;
      densesr::Parameter<double> p2{"x", x};
      const double down = scalar_of(t2.watch(p2)).value.item();
      x[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
    const bool pass = max_rel < 1e-5;
    ok = ok && pass;
    std::printf("%-18s max rel err %.3e  %s\n", label, max_rel, pass ? "PASS" : "FAIL");
  }
};

int run_gradcheck() {
  using densesr::Rng;
  using densesr::Shape;
  using densesr::Tensor;
  using densesr::Var;
  Rng rng(0xC0FFEE);
  const auto random = [&](Shape s) {
    Tensor<double> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
  };

  GradCheck gc;
  {
    Tensor<double> x = random(Shape{2, 3, 6, 6});
    Tensor<double> k = random(Shape{4, 3, 3, 3});
    Tensor<double> b = random(Shape{1, 4, 1, 1});
    gc.check("conv2d", x, [&](Var<double> v) {
      return densesr::mean_all(densesr::conv2d(v, densesr::constant(k),
                                               densesr::constant(b), 1, 1));
    });
  }
  {
    Tensor<double> x = random(Shape{2, 3, 4, 4});
    Tensor<double> k = random(Shape{3, 2, 3, 3});
    Tensor<double> b = random(Shape{1, 2, 1, 1});
    gc.check("conv_transpose2d", x, [&](Var<double> v) {
      return densesr::mean_all(densesr::conv_transpose2d(
          v, densesr::constant(k), densesr::constant(b), 2, 1, 1));
    });
  }
  {
    Tensor<double> x = random(Shape{4, 2, 3, 3});
    Tensor<double> gamma(Shape{1, 2, 1, 1}, 1.3);
    Tensor<double> beta(Shape{1, 2, 1, 1}, -0.2);
    // Random projection: mean(y*y) would be constant for normalized output.
    Tensor<double> w = random(Shape{4, 2, 3, 3});
    gc.check("batch_norm", x, [&](Var<double> v) {
      Tensor<double> rm(Shape{1, 2, 1, 1}, 0.0), rv(Shape{1, 2, 1, 1}, 1.0);
      Var<double> y = densesr::batch_norm(v, densesr::constant(gamma),
                                          densesr::constant(beta), rm, rv,
                                          densesr::Mode::kTrain);
      return densesr::mean_all(densesr::mul(y, densesr::constant(w)));
    });
  }
  {
    Tensor<double> x = random(Shape{1, 2, 4, 4});
    gc.check("sigmoid-chain", x, [&](Var<double> v) {
      return densesr::mean_all(densesr::sigmoid(densesr::affine(v, 2.0, 0.3)));
    });
  }
  {
    Tensor<double> x = random(Shape{1, 3, 4, 4});
    Tensor<double> target = random(Shape{1, 3, 4, 4});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += 3.0;  // keep |a-b| > 0
    gc.check("l1_distance", x, [&](Var<double> v) {
      return densesr::l1_distance(v, densesr::constant(target));
    });
  }
  std::printf(gc.ok ? "gradcheck: all operations PASS\n"
                    : "gradcheck: FAILURES detected\n");
  return gc.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"densesr: adversarially trained super-resolution for overhead imagery"};
  app.require_subcommand(1);

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "Train a generator/discriminator pair");
  std::string config_path, resume_path;
  TrainConfig flags;
  std::uint64_t seed = 0;
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  auto* o_seed =
      train_cmd->add_option("--seed", seed, "rng seed (required)")->required();
  auto* o_scale = train_cmd->add_option("--scale", flags.scale, "2, 4 or 8");
  auto* o_epochs = train_cmd->add_option("--epochs", flags.epochs, "training epochs");
  auto* o_batch = train_cmd->add_option("--batch-size", flags.batch_size, "chips per step (>= 2)");
  auto* o_alpha0 = train_cmd->add_option("--alpha0", flags.alpha0, "initial adversarial weight");
  auto* o_decay = train_cmd->add_option("--alpha-decay", flags.alpha_decay, "per-epoch divisor of alpha");
  auto* o_beta1 = train_cmd->add_option("--beta1", flags.beta1, "feature-matching share in [0,1]");
  auto* o_glr = train_cmd->add_option("--g-lr", flags.g_lr, "generator Adam learning rate");
  auto* o_dlr = train_cmd->add_option("--d-lr", flags.d_lr, "discriminator Adam learning rate");
  auto* o_adv = train_cmd->add_option("--adversarial", flags.adversarial,
                                      "paper | non_saturating");
  auto* o_manifest = train_cmd->add_option("--manifest", flags.manifest,
                                           "dataset manifest (default: synthetic)");
  auto* o_scenes = train_cmd->add_option("--synth-scenes", flags.synth_scenes, "synthetic scene count");
  auto* o_ssize = train_cmd->add_option("--synth-scene-size", flags.synth_scene_size, "synthetic scene edge, px");
  auto* o_chip = train_cmd->add_option("--chip-size", flags.chip_size, "HR chip edge, px");
  auto* o_valf = train_cmd->add_option("--val-fraction", flags.val_fraction, "validation share in [0,1)");
  auto* o_ckevery = train_cmd->add_option("--checkpoint-every", flags.checkpoint_every, "epochs between checkpoints (0: final only)");
  auto* o_out = train_cmd->add_option("--out-dir", flags.out_dir, "run directory for metrics + checkpoints");

  // --- evaluate ---
  auto* eval_cmd = app.add_subcommand("evaluate", "PSNR table for a checkpoint");
  std::string eval_ckpt, eval_manifest;
  int eval_scale = 0;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--manifest", eval_manifest,
                       "dataset manifest (default: the checkpoint's dataset)");
  eval_cmd->add_option("--scale", eval_scale, "must match the checkpoint scale");

  // --- infer ---
  auto* infer_cmd = app.add_subcommand("infer", "Super-resolve one PNG");
  std::string infer_ckpt, infer_in, infer_out, infer_grid;
  infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
  infer_cmd->add_option("--input", infer_in, "low-resolution PNG")->required();
  infer_cmd->add_option("--output", infer_out, "super-resolved PNG")->required();
  infer_cmd->add_option("--grid", infer_grid,
                        "also write a nearest|bicubic|model comparison strip");

  // --- scale-study ---
  auto* study_cmd = app.add_subcommand("scale-study",
                                       "PSNR vs scale on one fixed HR set");
  std::string ckpt2, ckpt4, ckpt8, study_manifest;
  std::uint64_t study_seed = 0;
  study_cmd->add_option("--ckpt2", ckpt2, "scale-2 checkpoint");
  study_cmd->add_option("--ckpt4", ckpt4, "scale-4 checkpoint");
  study_cmd->add_option("--ckpt8", ckpt8, "scale-8 checkpoint");
  study_cmd->add_option("--manifest", study_manifest, "HR chips manifest (default: synthetic)");
  study_cmd->add_option("--seed", study_seed, "seed for the synthetic HR set");

  // --- gradcheck ---
  app.add_subcommand("gradcheck", "Finite-difference spot checks of the autodiff core");

  // --- synth ---
  auto* synth_cmd = app.add_subcommand("synth", "Emit a synthetic dataset + manifest");
  densesr::SyntheticDatasetSpec synth_spec;
  std::string synth_out = "synth_data";
  synth_cmd->add_option("--out", synth_out, "output directory");
  synth_cmd->add_option("--seed", synth_spec.seed, "scene rng seed");
  synth_cmd->add_option("--scenes", synth_spec.scenes, "scene count");
  synth_cmd->add_option("--scene-size", synth_spec.scene_size, "scene edge, px");
  synth_cmd->add_option("--chip-size", synth_spec.chip_size, "chip edge, px");
  synth_cmd->add_option("--channels", synth_spec.channels, "1 or 3");
  synth_cmd->add_option("--scale", synth_spec.scale, "super-resolution factor recorded in chips");
  synth_cmd->add_option("--val-fraction", synth_spec.val_fraction, "validation share in [0,1)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      TrainConfig cfg;
      if (!config_path.empty()) cfg = densesr::load_config(config_path);
      const auto override_if = [](const CLI::Option* o, auto& dst, const auto& src) {
        if (o->count() > 0) dst = src;
      };
      override_if(o_scale, cfg.scale, flags.scale);
      override_if(o_epochs, cfg.epochs, flags.epochs);
      override_if(o_batch, cfg.batch_size, flags.batch_size);
      override_if(o_alpha0, cfg.alpha0, flags.alpha0);
      override_if(o_decay, cfg.alpha_decay, flags.alpha_decay);
      override_if(o_beta1, cfg.beta1, flags.beta1);
      override_if(o_glr, cfg.g_lr, flags.g_lr);
      override_if(o_dlr, cfg.d_lr, flags.d_lr);
      override_if(o_adv, cfg.adversarial, flags.adversarial);
      override_if(o_manifest, cfg.manifest, flags.manifest);
      override_if(o_scenes, cfg.synth_scenes, flags.synth_scenes);
      override_if(o_ssize, cfg.synth_scene_size, flags.synth_scene_size);
      override_if(o_chip, cfg.chip_size, flags.chip_size);
      override_if(o_valf, cfg.val_fraction, flags.val_fraction);
      override_if(o_ckevery, cfg.checkpoint_every, flags.checkpoint_every);
      override_if(o_out, cfg.out_dir, flags.out_dir);
      override_if(o_seed, cfg.seed, seed);
      return run_train(cfg, resume_path);
    }
    if (eval_cmd->parsed()) return run_evaluate(eval_ckpt, eval_manifest, eval_scale);
    if (infer_cmd->parsed()) return run_infer(infer_ckpt, infer_in, infer_out, infer_grid);
    if (study_cmd->parsed()) {
      return run_scale_study({{2, ckpt2}, {4, ckpt4}, {8, ckpt8}}, study_manifest,
                             study_seed);
    }
    if (app.get_subcommand("gradcheck")->parsed()) return run_gradcheck();
    if (synth_cmd->parsed()) return run_synth(synth_spec, synth_out);
  } catch (const densesr::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const densesr::RuntimeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
