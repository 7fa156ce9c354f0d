#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "densesr/checkpoint.hpp"
#include "densesr/config.hpp"
#include "densesr/train.hpp"
#include "json.hpp"

namespace {

using densesr::Batch;
using densesr::Checkpoint;
using densesr::ChipPair;
using densesr::ConfigError;
using densesr::PsnrReport;
using densesr::Rng;
using densesr::RuntimeError;
using densesr::Shape;
using densesr::SyntheticDatasetSpec;
using densesr::Tensor;
using densesr::TrainConfig;
using densesr::Trainer;
using densesr::TrainerModels;

std::filesystem::path fresh_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-but-complete architecture: same topology, slimmer widths, so the
// determinism/persistence contracts run in milliseconds.
TrainerModels tiny_models() {
  TrainerModels m;
  m.gen.stem_channels = 8;
  m.gen.units_per_block = 2;
  m.gen.growth = 4;
  m.gen.bottleneck = 8;
  m.disc.schedule = {8, 16};
  m.features.widths = {4, 8};
  return m;
}

TrainConfig tiny_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.scale = 2;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = 42;
  cfg.beta1 = 0.0;
  cfg.g_lr = 1e-3;
  cfg.d_lr = 1e-3;
  cfg.chip_size = 8;
  cfg.out_dir = out_dir;
  return cfg;
}

// 8 chips (6 train / 2 val) of 8x8 HR from two 16x16 scenes.
std::vector<ChipPair<float>> tiny_pairs(int scale) {
  SyntheticDatasetSpec spec;
  spec.seed = 21;
  spec.scenes = 2;
  spec.scene_size = 16;
  spec.chip_size = 8;
  spec.scale = scale;
  spec.val_fraction = 0.25;
  return densesr::synthetic_pairs<float>(spec);
}

std::string state_bytes(Trainer<float>& t) {
  const Checkpoint ck = t.snapshot();
  std::ostringstream out;
  out << ck.rng_state << "|" << ck.epoch << "|" << ck.step << "|";
  for (const auto& [name, tensor] : ck.tensors) {
    out << name << ":";
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  }
  return out.str();
}

TEST(Trainer, EpochOneCheckpointsAreBitIdenticalAcrossRuns) {
  const auto dir = fresh_dir("densesr_det");
  const TrainConfig cfg = tiny_config(dir.string());
  const auto pairs = tiny_pairs(cfg.scale);

  Trainer<float> a(cfg, tiny_models());
  a.run(pairs);
  const std::string first = read_bytes(a.checkpoint_path(1));

  Trainer<float> b(cfg, tiny_models());
  b.run(pairs);
  const std::string second = read_bytes(b.checkpoint_path(1));

  ASSERT_FALSE(first.empty());
  EXPECT_EQ(first, second);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, SaveLoadSaveIsByteIdentical) {
  const auto dir = fresh_dir("densesr_roundtrip");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  t.run(tiny_pairs(cfg.scale));

  const std::string p1 = (dir / "one.dsrc").string();
  const std::string p2 = (dir / "two.dsrc").string();
  densesr::save_checkpoint(t.snapshot(), p1);
  densesr::save_checkpoint(densesr::load_checkpoint(p1), p2);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, ResumeContinuesBitIdenticalTrajectory) {
  const auto dir = fresh_dir("densesr_resume");
  const auto pairs = tiny_pairs(2);

  // Uninterrupted reference: 5 epochs in one go (3 steps per epoch).
  TrainConfig full = tiny_config(dir.string());
  full.epochs = 5;
  Trainer<float> reference(full, tiny_models());
  reference.run(pairs);
  const std::string expected = state_bytes(reference);
  ASSERT_EQ(reference.steps_done(), 15);

  // Interrupted run: stop after epoch 1, restore from its checkpoint, and
  // finish with 12 further steps (>= 10 per the persistence contract).
  TrainConfig head = tiny_config(dir.string());
  head.epochs = 1;
  Trainer<float> first_leg(head, tiny_models());
  first_leg.run(pairs);
  const Checkpoint mid = densesr::load_checkpoint(first_leg.checkpoint_path(1));

  Trainer<float> second_leg(full, tiny_models());
  second_leg.restore(mid);
  ASSERT_EQ(second_leg.epochs_done(), 1);
  second_leg.run(pairs);
  EXPECT_EQ(second_leg.steps_done(), 15);
  EXPECT_EQ(state_bytes(second_leg), expected);
  std::filesystem::remove_all(dir);
}

std::string params_fingerprint(const std::vector<densesr::Parameter<float>*>& params) {
  std::string bytes;
  for (const densesr::Parameter<float>* p : params) {
    bytes.append(reinterpret_cast<const char*>(p->value.data()),
                 p->value.size() * sizeof(float));
  }
  return bytes;
}

TEST(Trainer, UpdatesAreIsolatedPerPlayer) {
  const auto dir = fresh_dir("densesr_isolation");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  const auto pairs = tiny_pairs(cfg.scale);
  Rng rng(1);
  const auto batches = densesr::make_batches(pairs, cfg.batch_size, rng);
  ASSERT_FALSE(batches.empty());

  const std::string g_before = params_fingerprint(t.generator().params());
  const std::string d_before = params_fingerprint(t.discriminator().params());

  t.d_step(batches[0]);
  EXPECT_EQ(params_fingerprint(t.generator().params()), g_before)
      << "discriminator step touched generator parameters";
  const std::string d_after = params_fingerprint(t.discriminator().params());
  EXPECT_NE(d_after, d_before);

  t.g_step(batches[0], 0.95);
  EXPECT_EQ(params_fingerprint(t.discriminator().params()), d_after)
      << "generator step touched discriminator parameters";
  EXPECT_NE(params_fingerprint(t.generator().params()), g_before);
  std::filesystem::remove_all(dir);
}

std::string buffers_fingerprint(const std::vector<densesr::NamedBuffer<float>>& buffers) {
  std::string bytes;
  for (const densesr::NamedBuffer<float>& b : buffers) {
    bytes.append(reinterpret_cast<const char*>(b.tensor->data()),
                 b.tensor->size() * sizeof(float));
  }
  return bytes;
}

TEST(Trainer, EvaluationIsPure) {
  const auto dir = fresh_dir("densesr_evalpure");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  const auto pairs = tiny_pairs(cfg.scale);
  t.run(pairs);

  const std::string buffers_before = buffers_fingerprint(t.generator().buffers());
  const PsnrReport r1 = densesr::evaluate(t.generator(), pairs, cfg.scale);
  const PsnrReport r2 = densesr::evaluate(t.generator(), pairs, cfg.scale);
  EXPECT_EQ(buffers_fingerprint(t.generator().buffers()), buffers_before)
      << "evaluation mutated batch-norm running statistics";
  ASSERT_EQ(r1.chips, r2.chips);
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    EXPECT_EQ(r1.rows[i].mean_db, r2.rows[i].mean_db);
  }
  std::filesystem::remove_all(dir);
}

TEST(Trainer, MetricsLogIsWellFormedJsonl) {
  const auto dir = fresh_dir("densesr_metrics");
  TrainConfig cfg = tiny_config(dir.string());
  cfg.epochs = 2;
  Trainer<float> t(cfg, tiny_models());
  t.run(tiny_pairs(cfg.scale));

  std::ifstream in(t.metrics_path());
  ASSERT_TRUE(in.good());
  std::string line;
  int lines = 0;
  double alpha_epoch0 = -1.0, alpha_epoch1 = -1.0;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    for (const char* key :
         {"step", "epoch", "alpha", "d_loss", "g_total", "g_adv", "g_content", "g_fm"}) {
      ASSERT_TRUE(j.contains(key)) << key;
    }
    if (j["epoch"] == 0) alpha_epoch0 = j["alpha"];
    if (j["epoch"] == 1) alpha_epoch1 = j["alpha"];
  }
  EXPECT_EQ(lines, t.steps_done());
  EXPECT_NEAR(alpha_epoch0, 0.95, 1e-12);
  EXPECT_NEAR(alpha_epoch1, 0.95 / 1.05, 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, NonFiniteLossWritesEmergencyCheckpoint) {
  const auto dir = fresh_dir("densesr_emergency");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  t.generator().params()[0]->value.fill(std::numeric_limits<float>::quiet_NaN());

  auto saved = densesr::warn_sink();
  densesr::warn_sink() = [](const std::string&) {};
  EXPECT_THROW(t.run(tiny_pairs(cfg.scale)), RuntimeError);
  densesr::warn_sink() = saved;
  EXPECT_TRUE(std::filesystem::exists(dir / "emergency.dsrc"));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, RejectsBadConfigsAndMismatchedRestores) {
  const auto dir = fresh_dir("densesr_badcfg");
  TrainConfig cfg = tiny_config(dir.string());
  cfg.batch_size = 1;
  EXPECT_THROW(Trainer<float>(cfg, tiny_models()), ConfigError);

  cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  EXPECT_THROW(t.run(std::vector<ChipPair<float>>{}), ConfigError);

  Checkpoint wrong_scale = t.snapshot();
  wrong_scale.scale = 4;
  EXPECT_THROW(t.restore(wrong_scale), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, ReportIsWellFormedWithArithmeticMean) {
  const auto dir = fresh_dir("densesr_evalreport");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  const auto pairs = tiny_pairs(cfg.scale);

  const PsnrReport report = densesr::evaluate(t.generator(), pairs, cfg.scale);
  EXPECT_EQ(report.chips, 2);
  for (const char* method : {"nearest", "bicubic", "model"}) {
    const densesr::PsnrRow& row = report.row(method);
    ASSERT_EQ(row.per_chip.size(), 2u);
    double sum = 0.0;
    int finite = 0;
    for (const densesr::PsnrValue& v : row.per_chip) {
      if (!v.capped) {
        sum += v.db;
        ++finite;
      }
    }
    ASSERT_GT(finite, 0);
    EXPECT_NEAR(row.mean_db, sum / finite, 1e-9);
  }

  // Nearest baseline row is definitional.
  const densesr::PsnrRow& nearest = report.row("nearest");
  int idx = 0;
  for (const ChipPair<float>& p : pairs) {
    if (p.split != "val") continue;
    const double expected =
        densesr::psnr(densesr::nn_upsample(p.lr, cfg.scale), p.hr).db;
    EXPECT_NEAR(nearest.per_chip[idx].db, expected, 1e-12);
    ++idx;
  }
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, ScaleMismatchIsConfigError) {
  const auto dir = fresh_dir("densesr_evalmismatch");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  EXPECT_THROW(densesr::evaluate(t.generator(), tiny_pairs(cfg.scale), 4), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(ScaleStudy, SkipsMissingScalesWithWarning) {
  const auto dir = fresh_dir("densesr_scalestudy");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());

  std::vector<Tensor<float>> hr;
  for (const ChipPair<float>& p : tiny_pairs(cfg.scale)) hr.push_back(p.hr);

  std::vector<std::string> warnings;
  auto saved = densesr::warn_sink();
  densesr::warn_sink() = [&](const std::string& m) { warnings.push_back(m); };
  const auto entries =
      densesr::scale_study<float>(hr, {{2, &t.generator()}});
  densesr::warn_sink() = saved;

  ASSERT_EQ(entries.size(), 3u);
  EXPECT_TRUE(entries[0].available);
  EXPECT_EQ(entries[0].scale, 2);
  EXPECT_FALSE(entries[1].available);
  EXPECT_FALSE(entries[2].available);
  EXPECT_EQ(warnings.size(), 2u);
  EXPECT_EQ(entries[0].report.chips, static_cast<int>(hr.size()));
  std::filesystem::remove_all(dir);
}

TEST(ScaleStudy, RejectsDegenerateScaleOne) {
  const auto dir = fresh_dir("densesr_scaleone");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());
  std::vector<Tensor<float>> hr{Tensor<float>(Shape{1, 3, 8, 8}, 0.5f)};
  EXPECT_THROW(densesr::scale_study<float>(hr, {{1, &t.generator()}}), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Infer, WritesDeterministicOutputAndGrid) {
  const auto dir = fresh_dir("densesr_infer");
  const TrainConfig cfg = tiny_config(dir.string());
  Trainer<float> t(cfg, tiny_models());

  // A tiny LR input straight from the synthetic pipeline.
  const auto pairs = tiny_pairs(cfg.scale);
  const std::string lr_path = (dir / "lr.png").string();
  densesr::save_png(pairs[0].lr, lr_path);

  const std::string out1 = (dir / "sr1.png").string();
  const std::string out2 = (dir / "sr2.png").string();
  const std::string grid = (dir / "grid.png").string();
  Tensor<float> sr = densesr::infer_png(t.generator(), lr_path, out1, grid);
  densesr::infer_png(t.generator(), lr_path, out2);

  EXPECT_EQ(sr.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(read_bytes(out1), read_bytes(out2));

  Tensor<float> grid_img = densesr::load_png<float>(grid);
  EXPECT_EQ(grid_img.shape(), (Shape{1, 3, 8, 3 * 8 + 2 * 2}));
  // Separator gutters are white.
  for (int y = 0; y < 8; ++y) {
    EXPECT_EQ(grid_img.at(0, 0, y, 8), 1.0f);
    EXPECT_EQ(grid_img.at(0, 0, y, 9), 1.0f);
  }
  std::filesystem::remove_all(dir);
}

TEST(Config, SerializeParseRoundTrip) {
  TrainConfig cfg;
  cfg.scale = 8;
  cfg.epochs = 7;
  cfg.batch_size = 4;
  cfg.seed = 123456789012345ull;
  cfg.alpha0 = 0.9;
  cfg.alpha_decay = 1.1;
  cfg.beta1 = 0.35;
  cfg.g_lr = 3e-4;
  cfg.d_lr = 1.5e-4;
  cfg.adversarial = "non_saturating";
  cfg.manifest = "data/manifest.jsonl";
  cfg.chip_size = 64;
  cfg.val_fraction = 0.125;
  cfg.checkpoint_every = 3;
  cfg.out_dir = "runs/exp1";

  const std::string text = densesr::serialize_config(cfg);
  const TrainConfig back = densesr::parse_config_text(text);
  EXPECT_EQ(densesr::serialize_config(back), text);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.adversarial, cfg.adversarial);
  EXPECT_DOUBLE_EQ(back.beta1, cfg.beta1);
  EXPECT_DOUBLE_EQ(back.g_lr, cfg.g_lr);
}

TEST(Config, ParserHandlesCommentsOverridesAndErrors) {
  const TrainConfig cfg = densesr::parse_config_text(
      "# comment\n"
      "\n"
      "scale=2\n"
      "scale=8\n"  // later entries win
      "epochs= 3\n"
      "out_dir = runs/x\n");
  EXPECT_EQ(cfg.scale, 8);
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.out_dir, "runs/x");
  EXPECT_EQ(cfg.batch_size, 16);  // untouched default

  EXPECT_THROW(densesr::parse_config_text("unknown_key=1\n"), ConfigError);
  EXPECT_THROW(densesr::parse_config_text("scale 4\n"), ConfigError);
  EXPECT_THROW(densesr::parse_config_text("epochs=abc\n"), ConfigError);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
  TrainConfig cfg;
  cfg.scale = 3;
  EXPECT_THROW(densesr::validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.beta1 = 1.5;
  EXPECT_THROW(densesr::validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.adversarial = "hinge";
  EXPECT_THROW(densesr::validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.chip_size = 30;  // not a multiple of scale 4
  EXPECT_THROW(densesr::validate(cfg), ConfigError);
  EXPECT_NO_THROW(densesr::validate(TrainConfig{}));
}

TEST(Infer, GridComposerChecksShapes) {
  std::vector<Tensor<float>> panels{Tensor<float>(Shape{1, 1, 4, 4}, 0.0f),
                                    Tensor<float>(Shape{1, 1, 4, 5}, 0.0f)};
  EXPECT_THROW(densesr::compose_grid(panels), ConfigError);
}

}  // namespace
