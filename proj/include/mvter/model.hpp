// Copyright 2026 The MVTER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mvter/checkpoint.hpp"
#include "mvter/geometry.hpp"
#include "mvter/random.hpp"
#include "mvter/renderer.hpp"
#include "mvter/tensor.hpp"

namespace mvter {

struct ModelConfig {
  int resolution = 32;  // square view size; must be a multiple of 8
  int feature_dim = 128;
  int num_classes = 8;

  void validate() const {
    if (resolution < 8 || resolution % 8 != 0)
      throw DomainError("model resolution must be a positive multiple of 8, got " +
                        std::to_string(resolution));
    if (feature_dim < 1) throw DomainError("feature_dim must be positive");
    if (num_classes < 2) throw DomainError("num_classes must be at least 2");
  }

  std::size_t flat_dim() const {
    const std::size_t s = static_cast<std::size_t>(resolution / 8);
    return 64 * s * s;
  }
};

// Siamese view encoder E: three conv(3x3)-relu-maxpool blocks (1->16->32->64
// channels) and a dense projection to the feature dimension. One instance
// encodes every view, before and after transformation.
template <typename T>
struct Encoder {
  Tensor<T> conv1, conv2, conv3;  // [F, C, 3, 3]
  Tensor<T> proj_w, proj_b;       // [64*(r/8)^2, d], [d]
};

// Transformation decoder D: one dense layer over a concatenated feature pair.
template <typename T>
struct Decoder {
  Tensor<T> w, b;  // [2d, 3], [3]
};

template <typename T>
struct ClassifierHead {
  Tensor<T> w, b;  // [d, K], [K]
};

template <typename T>
using Descriptor = std::vector<T>;

template <typename T>
class Model {
 public:
  Model() = default;

  // Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  static Model init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    Rng rng(seed);
    const std::size_t d = static_cast<std::size_t>(config.feature_dim);
    const std::size_t k = static_cast<std::size_t>(config.num_classes);
    m.encoder.conv1 = uniform_param({16, 1, 3, 3}, 9, rng);
    m.encoder.conv2 = uniform_param({32, 16, 3, 3}, 16 * 9, rng);
    m.encoder.conv3 = uniform_param({64, 32, 3, 3}, 32 * 9, rng);
    m.encoder.proj_w = uniform_param({config.flat_dim(), d}, config.flat_dim(), rng);
    m.encoder.proj_b = Tensor<T>::zeros({d}, true);
    m.decoder.w = uniform_param({2 * d, 3}, 2 * d, rng);
    m.decoder.b = Tensor<T>::zeros({3}, true);
    m.head.w = uniform_param({d, k}, d, rng);
    m.head.b = Tensor<T>::zeros({k}, true);
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }

  // Fixed order shared by the optimizer and checkpoints.
  std::vector<Tensor<T>> parameters() const {
    return {encoder.conv1, encoder.conv2, encoder.conv3, encoder.proj_w, encoder.proj_b,
            decoder.w,     decoder.b,     head.w,        head.b};
  }

  static const std::vector<std::string>& parameter_names() {
    static const std::vector<std::string> names = {
        "encoder.conv1.weight", "encoder.conv2.weight", "encoder.conv3.weight",
        "encoder.proj.weight",  "encoder.proj.bias",    "decoder.weight",
        "decoder.bias",         "head.weight",          "head.bias"};
    return names;
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    const auto params = parameters();
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({parameter_names()[i], params[i]});
    return out;
  }

  // Rebuilds a model from checkpoint tensors; the configuration is inferred
  // from the tensor shapes.
  static Model from_named(const std::vector<NamedTensor<T>>& tensors) {
    const auto& names = parameter_names();
    if (tensors.size() != names.size())
      throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, expected " +
                        std::to_string(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i)
      if (tensors[i].name != names[i])
        throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + tensors[i].name +
                          "', expected '" + names[i] + "'");
    auto take = [&](std::size_t i) {
      Tensor<T> t = tensors[i].tensor.clone();
      t.set_requires_grad(true);
      return t;
    };
    Model m;
    m.encoder = {take(0), take(1), take(2), take(3), take(4)};
    m.decoder = {take(5), take(6)};
    m.head = {take(7), take(8)};
    const Tensor<T>& pw = m.encoder.proj_w;
    if (pw.rank() != 2 || m.head.w.rank() != 2)
      throw FormatError("checkpoint has malformed projection/head shapes");
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(pw.dim(0) / 64.0)));
    m.config_ = {static_cast<int>(side * 8), static_cast<int>(pw.dim(1)),
                 static_cast<int>(m.head.w.dim(1))};
    m.config_.validate();
    const Model ref = init(m.config_, 0);
    const auto want = ref.parameters();
    const auto have = m.parameters();
    for (std::size_t i = 0; i < want.size(); ++i)
      if (want[i].shape() != have[i].shape())
        throw FormatError("checkpoint tensor '" + names[i] + "' has shape " +
                          shape_str(have[i].shape()) + ", expected " + shape_str(want[i].shape()));
    return m;
  }

  Model clone() const { return from_parts(*this, [](const Tensor<T>& t) { return t.clone(); }); }

  template <typename U>
  Model<U> cast() const {
    std::vector<NamedTensor<U>> named;
    for (const auto& [name, t] : named_parameters()) named.push_back({name, t.template cast<U>()});
    return Model<U>::from_named(named);
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  Encoder<T> encoder;
  Decoder<T> decoder;
  ClassifierHead<T> head;

 private:
  template <typename Fn>
  static Model from_parts(const Model& src, Fn&& fn) {
    Model m;
    m.config_ = src.config_;
    m.encoder = {fn(src.encoder.conv1), fn(src.encoder.conv2), fn(src.encoder.conv3),
                 fn(src.encoder.proj_w), fn(src.encoder.proj_b)};
    m.decoder = {fn(src.decoder.w), fn(src.decoder.b)};
    m.head = {fn(src.head.w), fn(src.head.b)};
    return m;
  }

  static Tensor<T> uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  ModelConfig config_;
};

// Stacks views into a [N, 1, H, W] tensor.
template <typename T>
Tensor<T> views_to_tensor(std::span<const ViewImage* const> views, int resolution) {
  const std::size_t hw = static_cast<std::size_t>(resolution) * resolution;
  std::vector<T> data(views.size() * hw);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const ViewImage& v = *views[i];
    if (v.height != resolution || v.width != resolution)
      throw DomainError("view " + std::to_string(i) + " is " + std::to_string(v.height) + "x" +
                        std::to_string(v.width) + ", encoder expects " + std::to_string(resolution) +
                        "x" + std::to_string(resolution));
    std::copy(v.pixels.begin(), v.pixels.end(), data.begin() + i * hw);
  }
  const std::size_t r = static_cast<std::size_t>(resolution);
  return Tensor<T>({views.size(), 1, r, r}, std::move(data));
}

// First conv-relu-pool block, [N,1,H,W] -> [N,16,H/2,W/2].
template <typename T>
Tensor<T> encode_block1(Tape<T>& tape, const Encoder<T>& enc, const Tensor<T>& x) {
  return tape.maxpool2d(tape.relu(tape.conv2d(x, enc.conv1)));
}

// E(.) over a stack of views: [N,1,H,W] -> [N,d].
template <typename T>
Tensor<T> encode(Tape<T>& tape, const Encoder<T>& enc, const Tensor<T>& x) {
  Tensor<T> h = encode_block1(tape, enc, x);
  h = tape.maxpool2d(tape.relu(tape.conv2d(h, enc.conv2)));
  h = tape.maxpool2d(tape.relu(tape.conv2d(h, enc.conv3)));
  h = tape.reshape(h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  if (h.dim(1) != enc.proj_w.dim(0))
    throw DomainError("encode: flattened feature size " + std::to_string(h.dim(1)) +
                      " does not match projection input " + std::to_string(enc.proj_w.dim(0)));
  return tape.dense(h, enc.proj_w, enc.proj_b);
}

// Descriptor of a single view, without recording gradients.
template <typename T>
Descriptor<T> encode(const ViewImage& view, const Model<T>& model) {
  Tape<T> tape(TapeOptions{.threads = 1, .check_finite = true, .record = false});
  const ViewImage* ptr = &view;
  Tensor<T> f = encode(tape, model.encoder, views_to_tensor<T>({&ptr, 1}, model.config().resolution));
  return {f.data().begin(), f.data().end()};
}

// F(.): view-wise max over groups of `views_per_object` consecutive rows.
template <typename T>
Tensor<T> fuse(Tape<T>& tape, const Tensor<T>& features, std::size_t views_per_object) {
  return tape.group_max(features, views_per_object);
}

template <typename T>
Descriptor<T> fuse(std::span<const Descriptor<T>> descriptors) {
  if (descriptors.empty()) throw DomainError("fuse: no descriptors");
  Descriptor<T> out = descriptors[0];
  for (const auto& d : descriptors) {
    if (d.size() != out.size()) throw DomainError("fuse: descriptor dimensions differ");
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::max(out[i], d[i]);
  }
  return out;
}

// Fusion scheme: t = D[F(E(V)) || F(E(V~))]. Inputs [B,d] each -> [B,3].
template <typename T>
Tensor<T> decode_fusion(Tape<T>& tape, const Decoder<T>& dec, const Tensor<T>& fused_original,
                        const Tensor<T>& fused_transformed) {
  if (fused_original.shape() != fused_transformed.shape() ||
      fused_original.dim(1) * 2 != dec.w.dim(0))
    throw DomainError("decode_fusion: descriptor shapes " + shape_str(fused_original.shape()) +
                      " / " + shape_str(fused_transformed.shape()) + " do not fit decoder " +
                      shape_str(dec.w.shape()));
  return tape.dense(tape.concat_cols(fused_original, fused_transformed), dec.w, dec.b);
}

// Average scheme: t_i = D[E(V_i) || E(V~_i)] per view, then the mean over the
// views of each object. Inputs [B*m, d] each -> [B,3].
template <typename T>
Tensor<T> decode_average(Tape<T>& tape, const Decoder<T>& dec, const Tensor<T>& view_original,
                         const Tensor<T>& view_transformed, std::size_t views_per_object) {
  if (view_original.shape() != view_transformed.shape() ||
      view_original.dim(1) * 2 != dec.w.dim(0))
    throw DomainError("decode_average: descriptor shapes " + shape_str(view_original.shape()) +
                      " / " + shape_str(view_transformed.shape()) + " do not fit decoder " +
                      shape_str(dec.w.shape()));
  Tensor<T> per_view = tape.dense(tape.concat_cols(view_original, view_transformed), dec.w, dec.b);
  return tape.group_mean(per_view, views_per_object);
}

template <typename T>
Tensor<T> classify(Tape<T>& tape, const ClassifierHead<T>& head, const Tensor<T>& fused) {
  if (fused.rank() != 2 || fused.dim(1) != head.w.dim(0))
    throw DomainError("classify: descriptor shape " + shape_str(fused.shape()) +
                      " does not fit head " + shape_str(head.w.shape()));
  return tape.dense(fused, head.w, head.b);
}

// Regression target: angles / 180, componentwise in [-1, 1].
inline std::array<double, 3> angles_to_target(const Rotation3& t) {
  const Vec3& a = t.angles();
  return {a[0] / 180.0, a[1] / 180.0, a[2] / 180.0};
}

inline Vec3 target_to_angles(std::span<const double, 3> v) {
  for (double x : v)
    if (!(x >= -1.0 && x <= 1.0))
      throw DomainError("normalized angle " + std::to_string(x) + " outside [-1, 1]");
  return {v[0] * 180.0, v[1] * 180.0, v[2] * 180.0};
}

}  // namespace mvter
