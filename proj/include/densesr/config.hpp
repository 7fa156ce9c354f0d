#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "densesr/common.hpp"

namespace densesr {

// Everything a training run needs, mirrored 1:1 by the key=value config
// file format and the CLI flags.
struct TrainConfig {
  int scale = 4;
  int epochs = 1;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double alpha0 = 0.95;
  double alpha_decay = 1.05;
  double beta1 = 0.0;
  double g_lr = 2e-4;
  double d_lr = 2e-4;
  std::string adversarial = "paper";  // or "non_saturating"
  std::string manifest;               // empty: use the synthetic source below
  int synth_scenes = 4;
  int synth_scene_size = 256;
  int chip_size = 64;
  double val_fraction = 0.25;
  int checkpoint_every = 1;  // epochs between checkpoints; 0 = final only
  std::string out_dir = "run";
};

inline void validate(const TrainConfig& c) {
  if (c.scale != 2 && c.scale != 4 && c.scale != 8) {
    fail_config("scale must be 2, 4 or 8, got ", c.scale);
  }
  if (c.epochs < 1) fail_config("epochs must be >= 1, got ", c.epochs);
  if (c.batch_size < 2) {
    fail_config("batch_size must be >= 2 (batch norm needs statistics), got ", c.batch_size);
  }
  if (c.alpha0 <= 0.0 || c.alpha0 > 1.0) fail_config("alpha0 must be in (0,1], got ", c.alpha0);
  if (c.alpha_decay <= 0.0) fail_config("alpha_decay must be positive, got ", c.alpha_decay);
  if (c.beta1 < 0.0 || c.beta1 > 1.0) fail_config("beta1 must be in [0,1], got ", c.beta1);
  if (c.g_lr <= 0.0 || c.d_lr <= 0.0) fail_config("learning rates must be positive");
  if (c.adversarial != "paper" && c.adversarial != "non_saturating") {
    fail_config("adversarial must be paper or non_saturating, got ", c.adversarial);
  }
  if (c.chip_size < c.scale || c.chip_size % c.scale != 0) {
    fail_config("chip_size ", c.chip_size, " must be a positive multiple of scale ", c.scale);
  }
  if (c.synth_scenes < 1 || c.synth_scene_size < c.chip_size) {
    fail_config("synthetic source needs >= 1 scene and scene size >= chip size");
  }
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) {
    fail_config("val_fraction must be in [0,1), got ", c.val_fraction);
  }
  if (c.checkpoint_every < 0) fail_config("checkpoint_every must be >= 0");
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Canonical textual form: fixed key order, full-precision doubles. This is
// the exact blob embedded in checkpoints, so it must be deterministic.
inline std::string serialize_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "scale=" << c.scale << "\n"
      << "epochs=" << c.epochs << "\n"
      << "batch_size=" << c.batch_size << "\n"
      << "seed=" << c.seed << "\n"
      << "alpha0=" << detail::format_double(c.alpha0) << "\n"
      << "alpha_decay=" << detail::format_double(c.alpha_decay) << "\n"
      << "beta1=" << detail::format_double(c.beta1) << "\n"
      << "g_lr=" << detail::format_double(c.g_lr) << "\n"
      << "d_lr=" << detail::format_double(c.d_lr) << "\n"
      << "adversarial=" << c.adversarial << "\n"
      << "manifest=" << c.manifest << "\n"
      << "synth_scenes=" << c.synth_scenes << "\n"
      << "synth_scene_size=" << c.synth_scene_size << "\n"
      << "chip_size=" << c.chip_size << "\n"
      << "val_fraction=" << detail::format_double(c.val_fraction) << "\n"
      << "checkpoint_every=" << c.checkpoint_every << "\n"
      << "out_dir=" << c.out_dir << "\n";
  return out.str();
}

inline void apply_config_entry(TrainConfig& c, const std::string& key,
                               const std::string& value, const std::string& where) {
  const auto to_int = [&](const std::string& v) {
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      fail_config("bad integer for ", key, " in ", where, ": ", v);
    }
  };
  const auto to_double = [&](const std::string& v) {
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      fail_config("bad number for ", key, " in ", where, ": ", v);
    }
  };
  if (key == "scale") c.scale = to_int(value);
  else if (key == "epochs") c.epochs = to_int(value);
  else if (key == "batch_size") c.batch_size = to_int(value);
  else if (key == "seed") {
    try {
      c.seed = std::stoull(value);
    } catch (const std::exception&) {
      fail_config("bad seed in ", where, ": ", value);
    }
  } else if (key == "alpha0") c.alpha0 = to_double(value);
  else if (key == "alpha_decay") c.alpha_decay = to_double(value);
  else if (key == "beta1") c.beta1 = to_double(value);
  else if (key == "g_lr") c.g_lr = to_double(value);
  else if (key == "d_lr") c.d_lr = to_double(value);
  else if (key == "adversarial") c.adversarial = value;
  else if (key == "manifest") c.manifest = value;
  else if (key == "synth_scenes") c.synth_scenes = to_int(value);
  else if (key == "synth_scene_size") c.synth_scene_size = to_int(value);
  else if (key == "chip_size") c.chip_size = to_int(value);
  else if (key == "val_fraction") c.val_fraction = to_double(value);
  else if (key == "checkpoint_every") c.checkpoint_every = to_int(value);
  else if (key == "out_dir") c.out_dir = value;
  else fail_config("unknown config key '", key, "' in ", where);
}

// Parses key=value text ('#' comments, blank lines allowed) on top of the
// given defaults; later entries win.
inline TrainConfig parse_config_text(const std::string& text,
                                     const std::string& where = "<string>",
                                     TrainConfig base = TrainConfig{}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      fail_config("expected key=value at ", where, ":", lineno, ": ", t);
    }
    apply_config_entry(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)),
                       where + ":" + std::to_string(lineno));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = TrainConfig{}) {
  std::ifstream in(path);
  if (!in) fail_runtime("cannot open config file: ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path, base);
}

}  // namespace densesr
