#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/layers.hpp"
#include "densesr/optimizer.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// In-memory image of a DSRC checkpoint. Tensor order is meaningful: saving
// the same state twice must produce byte-identical files.
struct Checkpoint {
  std::uint32_t version = 1;
  std::int32_t scale = 0;
  std::int32_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // completed generator steps
  std::int64_t opt_g_steps = 0;
  std::int64_t opt_d_steps = 0;
  std::string config_text;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_blob(std::ofstream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail_runtime("truncated checkpoint: ", path);
  return v;
}

inline std::string read_blob(std::ifstream& in, const std::string& path) {
  const std::uint64_t len = read_pod<std::uint64_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) fail_runtime("truncated checkpoint: ", path);
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot open checkpoint for writing: ", path);
  out.write("DSRC", 4);
  detail::write_pod<std::uint32_t>(out, ck.version);
  detail::write_pod<std::int32_t>(out, ck.scale);
  detail::write_pod<std::int32_t>(out, ck.epoch);
  detail::write_pod<std::int64_t>(out, ck.step);
  detail::write_pod<std::int64_t>(out, ck.opt_g_steps);
  detail::write_pod<std::int64_t>(out, ck.opt_d_steps);
  detail::write_blob(out, ck.config_text);
  detail::write_blob(out, ck.rng_state);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, tensor] : ck.tensors) {
    detail::write_blob(out, name);
    const Shape s = tensor.shape();
    detail::write_pod<std::int32_t>(out, s.n);
    detail::write_pod<std::int32_t>(out, s.c);
    detail::write_pod<std::int32_t>(out, s.h);
    detail::write_pod<std::int32_t>(out, s.w);
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  }
  if (!out) fail_runtime("checkpoint write failed: ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime("cannot open checkpoint: ", path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DSRC", 4) != 0) {
    fail_runtime("not a DSRC checkpoint: ", path);
  }
  Checkpoint ck;
  ck.version = detail::read_pod<std::uint32_t>(in, path);
  if (ck.version != 1) fail_runtime("unsupported checkpoint version ", ck.version, ": ", path);
  ck.scale = detail::read_pod<std::int32_t>(in, path);
  ck.epoch = detail::read_pod<std::int32_t>(in, path);
  ck.step = detail::read_pod<std::int64_t>(in, path);
  ck.opt_g_steps = detail::read_pod<std::int64_t>(in, path);
  ck.opt_d_steps = detail::read_pod<std::int64_t>(in, path);
  ck.config_text = detail::read_blob(in, path);
  ck.rng_state = detail::read_blob(in, path);
  const std::uint32_t count = detail::read_pod<std::uint32_t>(in, path);
  ck.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::read_blob(in, path);
    const auto n = detail::read_pod<std::int32_t>(in, path);
    const auto c = detail::read_pod<std::int32_t>(in, path);
    const auto h = detail::read_pod<std::int32_t>(in, path);
    const auto w = detail::read_pod<std::int32_t>(in, path);
    Tensor<float> t(Shape{n, c, h, w});
    in.read(reinterpret_cast<char*>(t.mutable_data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) fail_runtime("truncated checkpoint: ", path);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    fail_runtime("trailing data in checkpoint: ", path);
  }
  return ck;
}

// --- Gather/scatter between the checkpoint image and live training state ---

template <typename S>
void append_params(Checkpoint& ck, const std::vector<Parameter<S>*>& params) {
  for (const Parameter<S>* p : params) {
    ck.tensors.emplace_back(p->name, p->value.template cast<float>());
  }
}

template <typename S>
void append_buffers(Checkpoint& ck, const std::vector<NamedBuffer<S>>& buffers) {
  for (const NamedBuffer<S>& b : buffers) {
    ck.tensors.emplace_back(b.name, b.tensor->template cast<float>());
  }
}

template <typename S>
void append_adam(Checkpoint& ck, const Adam<S>& opt, const std::string& prefix) {
  const std::vector<Parameter<S>*>& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.tensors.emplace_back(prefix + ".m." + params[i]->name,
                            opt.first_moment(i).template cast<float>());
    ck.tensors.emplace_back(prefix + ".v." + params[i]->name,
                            opt.second_moment(i).template cast<float>());
  }
}

inline const Tensor<float>& find_tensor(const Checkpoint& ck, const std::string& name) {
  for (const auto& [n, t] : ck.tensors) {
    if (n == name) return t;
  }
  fail_runtime("checkpoint is missing tensor: ", name);
}

namespace detail {

template <typename S>
void restore_into(const Checkpoint& ck, const std::string& name, Tensor<S>& dst) {
  const Tensor<float>& src = find_tensor(ck, name);
  if (src.shape() != dst.shape()) {
    fail_runtime("checkpoint tensor ", name, " has shape ", src.shape().str(), ", expected ",
                 dst.shape().str());
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(src[i]);
}

}  // namespace detail

template <typename S>
void restore_params(const Checkpoint& ck, const std::vector<Parameter<S>*>& params) {
  for (Parameter<S>* p : params) detail::restore_into(ck, p->name, p->value);
}

template <typename S>
void restore_buffers(const Checkpoint& ck, const std::vector<NamedBuffer<S>>& buffers) {
  for (const NamedBuffer<S>& b : buffers) detail::restore_into(ck, b.name, *b.tensor);
}

template <typename S>
void restore_adam(const Checkpoint& ck, Adam<S>& opt, const std::string& prefix) {
  const std::vector<Parameter<S>*>& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::restore_into(ck, prefix + ".m." + params[i]->name, opt.first_moment(i));
    detail::restore_into(ck, prefix + ".v." + params[i]->name, opt.second_moment(i));
  }
}

}  // namespace densesr
