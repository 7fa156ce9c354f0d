#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "densesr/layers.hpp"
#include "densesr/ops.hpp"
#include "densesr/rng.hpp"

namespace densesr {

namespace detail {

inline int stages_for_scale(int scale) {
  if (scale != 2 && scale != 4 && scale != 8) {
    fail_config("scale factor must be 2, 4, or 8, got ", scale);
  }
  int stages = 0;
  for (int s = scale; s > 1; s /= 2) ++stages;
  return stages;
}

}  // namespace detail

struct GeneratorSpec {
  int scale = 4;
  int channels = 3;
  int stem_channels = 64;
  int units_per_block = 5;
  int growth = 16;
  int bottleneck = 64;  // 4 x growth, the DenseNet-B convention
  double compression = 1.0;
  bool dense_connections = true;  // ablation switch, tests only
};

// Dense-block generator: stem convolution, one dense block plus one
// stride-2 transposed convolution per doubling stage, and a
// fully-convolutional head ending in a sigmoid.
template <typename S>
class Generator {
 public:
  Generator(GeneratorSpec spec, Rng& rng) : spec_(spec) {
    const int stages = detail::stages_for_scale(spec.scale);
    if (spec.channels != 1 && spec.channels != 3) {
      fail_config("generator channels must be 1 (grayscale) or 3 (rgb), got ", spec.channels);
    }
    net_.template emplace<Conv2dLayer<S>>("gen.stem", spec.channels, spec.stem_channels, 3, 1,
                                          1, rng);
    int ch = spec.stem_channels;
    for (int stage = 0; stage < stages; ++stage) {
      const std::string prefix = "gen.stage" + std::to_string(stage);
      auto* block = net_.template emplace<DenseBlock<S>>(
          prefix, ch, spec.units_per_block, spec.growth, spec.bottleneck, rng,
          spec.dense_connections);
      ch = block->out_channels();
      const int up_ch = std::max(1, static_cast<int>(std::lround(ch * spec.compression)));
      net_.template emplace<ConvTranspose2dLayer<S>>(prefix + ".up", ch, up_ch, 3, 2, 1, 1,
                                                     rng);
      ch = up_ch;
    }
    net_.template emplace<Conv2dLayer<S>>("gen.head.conv3x3", ch, ch, 3, 1, 1, rng);
    net_.template emplace<BatchNormLayer<S>>("gen.head.bn1", ch);
    net_.template emplace<ReluLayer<S>>();
    net_.template emplace<Conv2dLayer<S>>("gen.head.conv1x1", ch, ch, 1, 1, 0, rng);
    net_.template emplace<BatchNormLayer<S>>("gen.head.bn2", ch);
    net_.template emplace<ReluLayer<S>>();
    net_.template emplace<Conv2dLayer<S>>("gen.head.out", ch, spec.channels, 1, 1, 0, rng);
    net_.template emplace<SigmoidLayer<S>>();
  }

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) {
    if (x.shape().c != spec_.channels) {
      fail_config("generator expects ", spec_.channels, "-channel input, got ",
                  x.shape().str());
    }
    return net_.forward(x, ctx);
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out;
    net_.collect(out);
    return out;
  }

  std::vector<NamedBuffer<S>> buffers() {
    std::vector<NamedBuffer<S>> out;
    net_.collect_buffers(out);
    return out;
  }

  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  Sequential<S> net_;
};

struct DiscriminatorSpec {
  int channels = 3;
  std::vector<int> schedule = {64, 128, 256, 512};
  bool leaky = false;  // plain ReLU by default; leaky is an experiment knob
  double leaky_slope = 0.2;
};

// Four stride-2 conv layers, then a fully-convolutional decision tail:
// conv3x3 + BN + ReLU, conv1x1 + BN + ReLU, conv1x1 to one map, spatial
// mean, sigmoid.
template <typename S>
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, Rng& rng) : spec_(spec) {
    if (spec.schedule.empty()) fail_config("discriminator schedule must not be empty");
    int prev = spec.channels;
    for (std::size_t i = 0; i < spec.schedule.size(); ++i) {
      const std::string prefix = "disc.layer" + std::to_string(i);
      net_.template emplace<Conv2dLayer<S>>(prefix + ".conv", prev, spec.schedule[i], 3, 2, 1,
                                            rng);
      if (spec.leaky) {
        net_.template emplace<LeakyReluLayer<S>>(spec.leaky_slope);
      } else {
        net_.template emplace<ReluLayer<S>>();
      }
      net_.template emplace<BatchNormLayer<S>>(prefix + ".bn", spec.schedule[i]);
      prev = spec.schedule[i];
    }
    net_.template emplace<Conv2dLayer<S>>("disc.tail.conv3x3", prev, prev, 3, 1, 1, rng);
    net_.template emplace<BatchNormLayer<S>>("disc.tail.bn1", prev);
    net_.template emplace<ReluLayer<S>>();
    net_.template emplace<Conv2dLayer<S>>("disc.tail.conv1x1", prev, prev, 1, 1, 0, rng);
    net_.template emplace<BatchNormLayer<S>>("disc.tail.bn2", prev);
    net_.template emplace<ReluLayer<S>>();
    net_.template emplace<Conv2dLayer<S>>("disc.tail.out", prev, 1, 1, 1, 0, rng);
  }

  // Returns one probability per batch element, shape (n,1,1,1).
  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) {
    const int div = 1 << static_cast<int>(spec_.schedule.size());
    if (x.shape().c != spec_.channels) {
      fail_config("discriminator expects ", spec_.channels, "-channel input, got ",
                  x.shape().str());
    }
    if (x.shape().h % div != 0 || x.shape().w % div != 0) {
      fail_config("discriminator input dims must be divisible by ", div, ", got ",
                  x.shape().str());
    }
    return sigmoid(spatial_mean(net_.forward(x, ctx)));
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out;
    net_.collect(out);
    return out;
  }

  std::vector<NamedBuffer<S>> buffers() {
    std::vector<NamedBuffer<S>> out;
    net_.collect_buffers(out);
    return out;
  }

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  Sequential<S> net_;
};

struct FeatureExtractorSpec {
  int channels = 3;
  std::vector<int> widths = {16, 32, 64};
  std::uint64_t seed = 0x0FEA;
};

// Fixed-weight convolutional feature stack standing in for a pretrained
// perceptual network: per block, conv3x3 + ReLU + 2x average pool. Weights
// are seeded at construction and never trained; collect_params of the
// surrounding model must not see them.
template <typename S>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureExtractorSpec spec) : spec_(spec) {
    Rng rng(spec.seed);
    int prev = spec.channels;
    for (std::size_t i = 0; i < spec.widths.size(); ++i) {
      const std::string prefix = "fex.block" + std::to_string(i);
      net_.template emplace<Conv2dLayer<S>>(prefix + ".conv", prev, spec.widths[i], 3, 1, 1,
                                            rng);
      net_.template emplace<ReluLayer<S>>();
      net_.template emplace<AvgPoolLayer<S>>();
      prev = spec.widths[i];
    }
  }

  // Gradient flows into the image, never into the extractor weights.
  Var<S> forward(const Var<S>& x) {
    ++calls_;
    ForwardCtx<S> ctx{x.tape, Mode::kEval, /*track_params=*/false};
    return net_.forward(x, ctx);
  }

  int forward_calls() const { return calls_; }
  const FeatureExtractorSpec& spec() const { return spec_; }

 private:
  FeatureExtractorSpec spec_;
  Sequential<S> net_;
  int calls_ = 0;
};

template <typename S>
std::size_t count_values(const std::vector<Parameter<S>*>& params) {
  std::size_t total = 0;
  for (const Parameter<S>* p : params) total += p->value.size();
  return total;
}

template <typename S>
void check_unique_names(const std::vector<Parameter<S>*>& params) {
  std::unordered_set<std::string> seen;
  for (const Parameter<S>* p : params) {
    if (!seen.insert(p->name).second) {
      fail_config("duplicate parameter name: ", p->name);
    }
  }
}

}  // namespace densesr
