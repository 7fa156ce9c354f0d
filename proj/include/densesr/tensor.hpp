#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "densesr/common.hpp"

namespace densesr {

// Dimensions of a rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return detail::concat(n, "x", c, "x", h, "x", w);
  }
};

// Dense rank-4 array, row-major in (b, c, h, w). Storage is shared between
// copies; tensors are treated as immutable once an operation has produced
// them, so sharing is safe.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0)) : shape_(shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
      fail_config("tensor dimensions must all be >= 1, got ", shape.str());
    }
    data_ = std::make_shared<std::vector<S>>(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<S> values) : shape_(shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
      fail_config("tensor dimensions must all be >= 1, got ", shape.str());
    }
    if (values.size() != shape.numel()) {
      fail_config("value count ", values.size(), " does not match shape ", shape.str());
    }
    data_ = std::make_shared<std::vector<S>>(std::move(values));
  }

  static Tensor scalar(S v) { return Tensor(Shape{1, 1, 1, 1}, std::vector<S>{v}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  const S* data() const { return data_->data(); }
  S* mutable_data() { return data_->data(); }

  S operator[](std::size_t i) const { return (*data_)[i]; }
  S& operator[](std::size_t i) { return (*data_)[i]; }

  S at(int b, int c, int y, int x) const { return (*data_)[index(b, c, y, x)]; }
  S& at(int b, int c, int y, int x) { return (*data_)[index(b, c, y, x)]; }

  std::size_t index(int b, int c, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  // Scalar convenience for loss values and reductions.
  S item() const {
    if (size() != 1) fail_runtime("item() on non-scalar tensor of shape ", shape_.str());
    return (*data_)[0];
  }

  Tensor clone() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = std::make_shared<std::vector<S>>(*data_);
    return out;
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>((*data_)[i]);
    return Tensor<T>(shape_, std::move(v));
  }

  void fill(S v) {
    for (auto& e : *data_) e = v;
  }

  // In-place accumulate, used by gradient buffers.
  void add_(const Tensor& other) {
    S* dst = mutable_data();
    const S* src = other.data();
    for (std::size_t i = 0; i < size(); ++i) dst[i] += src[i];
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
};

}  // namespace densesr
