#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "densesr/ops.hpp"
#include "densesr/rng.hpp"
#include "densesr/tape.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

// Per-forward options. track_params=false runs the network frozen: values
// are used and gradients still flow through to the input, but no parameter
// receives a gradient (that is how the generator step sees the
// discriminator).
template <typename S>
struct ForwardCtx {
  Tape<S>* tape = nullptr;
  Mode mode = Mode::kEval;
  bool track_params = true;
};

// Named tensor that persists across steps without being trained
// (batch-norm running statistics).
template <typename S>
struct NamedBuffer {
  std::string name;
  Tensor<S>* tensor;
};

template <typename S>
Tensor<S> he_tensor(Shape shape, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<S>(rng.normal(0.0, std));
  }
  return t;
}

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) = 0;
  virtual void collect(std::vector<Parameter<S>*>& out) {}
  virtual void collect_buffers(std::vector<NamedBuffer<S>>& out) {}

 protected:
  static Var<S> use(Parameter<S>& p, const ForwardCtx<S>& ctx) {
    if (ctx.tape != nullptr && ctx.track_params) return ctx.tape->watch(p);
    return constant(p.value);
  }
};

template <typename S>
class Conv2dLayer : public Layer<S> {
 public:
  Conv2dLayer(const std::string& prefix, int in_ch, int out_ch, int ksize, int stride,
              int padding, Rng& rng)
      : weight_(prefix + ".weight",
                he_tensor<S>(Shape{out_ch, in_ch, ksize, ksize}, in_ch * ksize * ksize, rng)),
        bias_(prefix + ".bias", Tensor<S>(Shape{1, out_ch, 1, 1})),
        stride_(stride),
        padding_(padding) {}

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    return conv2d(x, this->use(weight_, ctx), this->use(bias_, ctx), stride_, padding_);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter<S> weight_, bias_;
  int stride_, padding_;
};

template <typename S>
class ConvTranspose2dLayer : public Layer<S> {
 public:
  ConvTranspose2dLayer(const std::string& prefix, int in_ch, int out_ch, int ksize, int stride,
                       int padding, int output_padding, Rng& rng)
      : weight_(prefix + ".weight",
                he_tensor<S>(Shape{in_ch, out_ch, ksize, ksize}, in_ch * ksize * ksize, rng)),
        bias_(prefix + ".bias", Tensor<S>(Shape{1, out_ch, 1, 1})),
        stride_(stride),
        padding_(padding),
        output_padding_(output_padding) {}

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    return conv_transpose2d(x, this->use(weight_, ctx), this->use(bias_, ctx), stride_,
                            padding_, output_padding_);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter<S> weight_, bias_;
  int stride_, padding_, output_padding_;
};

template <typename S>
class BatchNormLayer : public Layer<S> {
 public:
  BatchNormLayer(const std::string& prefix, int channels, double momentum = 0.1,
                 double epsilon = 1e-5)
      : gamma_(prefix + ".gamma", Tensor<S>(Shape{1, channels, 1, 1}, S(1))),
        beta_(prefix + ".beta", Tensor<S>(Shape{1, channels, 1, 1})),
        running_mean_(Shape{1, channels, 1, 1}),
        running_var_(Shape{1, channels, 1, 1}, S(1)),
        mean_name_(prefix + ".running_mean"),
        var_name_(prefix + ".running_var"),
        momentum_(momentum),
        epsilon_(epsilon) {}

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    return batch_norm(x, this->use(gamma_, ctx), this->use(beta_, ctx), running_mean_,
                      running_var_, ctx.mode, momentum_, epsilon_);
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void collect_buffers(std::vector<NamedBuffer<S>>& out) override {
    out.push_back({mean_name_, &running_mean_});
    out.push_back({var_name_, &running_var_});
  }

 private:
  Parameter<S> gamma_, beta_;
  Tensor<S> running_mean_, running_var_;
  std::string mean_name_, var_name_;
  double momentum_, epsilon_;
};

template <typename S>
class ReluLayer : public Layer<S> {
 public:
  Var<S> forward(const Var<S>& x, const ForwardCtx<S>&) override { return relu(x); }
};

template <typename S>
class LeakyReluLayer : public Layer<S> {
 public:
  explicit LeakyReluLayer(double slope) : slope_(slope) {}
  Var<S> forward(const Var<S>& x, const ForwardCtx<S>&) override {
    return leaky_relu(x, slope_);
  }

 private:
  double slope_;
};

template <typename S>
class SigmoidLayer : public Layer<S> {
 public:
  Var<S> forward(const Var<S>& x, const ForwardCtx<S>&) override { return sigmoid(x); }
};

template <typename S>
class AvgPoolLayer : public Layer<S> {
 public:
  Var<S> forward(const Var<S>& x, const ForwardCtx<S>&) override { return avg_pool2(x); }
};

template <typename S>
class Sequential : public Layer<S> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L* emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    Var<S> cur = x;
    for (auto& layer : layers_) cur = layer->forward(cur, ctx);
    return cur;
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (auto& layer : layers_) layer->collect(out);
  }

  void collect_buffers(std::vector<NamedBuffer<S>>& out) override {
    for (auto& layer : layers_) layer->collect_buffers(out);
  }

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
};

// One composite dense unit: BN-ReLU-Conv1x1 bottleneck, then
// BN-ReLU-Conv3x3 producing growth_rate new feature maps.
template <typename S>
class DenseUnit : public Layer<S> {
 public:
  DenseUnit(const std::string& prefix, int in_ch, int growth, int bottleneck, Rng& rng) {
    seq_.template emplace<BatchNormLayer<S>>(prefix + ".bn1", in_ch);
    seq_.template emplace<ReluLayer<S>>();
    seq_.template emplace<Conv2dLayer<S>>(prefix + ".conv1x1", in_ch, bottleneck, 1, 1, 0, rng);
    seq_.template emplace<BatchNormLayer<S>>(prefix + ".bn2", bottleneck);
    seq_.template emplace<ReluLayer<S>>();
    seq_.template emplace<Conv2dLayer<S>>(prefix + ".conv3x3", bottleneck, growth, 3, 1, 1, rng);
  }

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    return seq_.forward(x, ctx);
  }
  void collect(std::vector<Parameter<S>*>& out) override { seq_.collect(out); }
  void collect_buffers(std::vector<NamedBuffer<S>>& out) override {
    seq_.collect_buffers(out);
  }

 private:
  Sequential<S> seq_;
};

// A dense block: every unit consumes the concatenation of the block input
// and all previous unit outputs, and appends growth_rate channels. The
// dense_connections switch (tests only) drops the concatenation so each
// unit sees only its predecessor.
template <typename S>
class DenseBlock : public Layer<S> {
 public:
  DenseBlock(const std::string& prefix, int in_ch, int units, int growth, int bottleneck,
             Rng& rng, bool dense_connections = true)
      : dense_(dense_connections) {
    int ch = in_ch;
    for (int u = 0; u < units; ++u) {
      units_.push_back(std::make_unique<DenseUnit<S>>(
          prefix + ".dense" + std::to_string(u), ch, growth, bottleneck, rng));
      ch = dense_ ? ch + growth : growth;
    }
    out_channels_ = ch;
  }

  Var<S> forward(const Var<S>& x, const ForwardCtx<S>& ctx) override {
    Var<S> cur = x;
    for (auto& unit : units_) {
      Var<S> fresh = unit->forward(cur, ctx);
      cur = dense_ ? concat_channels(cur, fresh) : fresh;
    }
    return cur;
  }

  void collect(std::vector<Parameter<S>*>& out) override {
    for (auto& unit : units_) unit->collect(out);
  }
  void collect_buffers(std::vector<NamedBuffer<S>>& out) override {
    for (auto& unit : units_) unit->collect_buffers(out);
  }

  int out_channels() const { return out_channels_; }

 private:
  std::vector<std::unique_ptr<DenseUnit<S>>> units_;
  bool dense_;
  int out_channels_ = 0;
};

template <typename S>
void zero_grads(const std::vector<Parameter<S>*>& params) {
  for (Parameter<S>* p : params) p->grad.fill(S(0));
}

}  // namespace densesr
