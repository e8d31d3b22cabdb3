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

#include <algorithm>
#include <span>
#include <vector>

#include "mvter/model.hpp"
#include "mvter/renderer.hpp"

namespace mvter {

// Objects are encoded this many at a time to bound activation memory.
inline constexpr std::size_t kInferenceChunk = 16;

// Per-view descriptors of every object: [N*m, d], views of object i at rows
// [i*m, (i+1)*m).
template <typename T>
Tensor<T> view_descriptors(const Model<T>& model, std::span<const ViewSet* const> objects,
                           int threads = 1) {
  if (objects.empty()) throw DomainError("view_descriptors: no objects");
  const std::size_t m = objects[0]->size();
  const std::size_t d = static_cast<std::size_t>(model.config().feature_dim);
  std::vector<T> out;
  out.reserve(objects.size() * m * d);
  for (std::size_t begin = 0; begin < objects.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(objects.size(), begin + kInferenceChunk);
    std::vector<const ViewImage*> views;
    for (std::size_t i = begin; i < end; ++i) {
      if (objects[i]->size() != m) throw DomainError("view_descriptors: view counts differ across objects");
      for (const auto& v : *objects[i]) views.push_back(&v);
    }
    Tape<T> tape(TapeOptions{.threads = threads, .check_finite = true, .record = false});
    Tensor<T> f = encode(tape, model.encoder, views_to_tensor<T>(views, model.config().resolution));
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return Tensor<T>({objects.size() * m, d}, std::move(out));
}

// E_M(M) = F(E(V_1), ..., E(V_m)) for every object: [N, d].
template <typename T>
Tensor<T> fused_descriptors(const Model<T>& model, std::span<const ViewSet* const> objects,
                            int threads = 1) {
  Tensor<T> views = view_descriptors(model, objects, threads);
  Tape<T> tape(TapeOptions{.threads = 1, .check_finite = true, .record = false});
  return fuse(tape, views, objects[0]->size());
}

template <typename T>
std::vector<int> argmax_rows(std::span<const T> values, std::size_t cols) {
  std::vector<int> out(values.size() / cols);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = values.subspan(r * cols, cols);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

// Class predictions from fused descriptors [N, d].
template <typename T>
std::vector<int> predict_from_fused(const Model<T>& model, const Tensor<T>& fused) {
  Tape<T> tape(TapeOptions{.threads = 1, .check_finite = true, .record = false});
  Tensor<T> logits = classify(tape, model.head, fused);
  return argmax_rows<T>(logits.data(), logits.dim(1));
}

template <typename T>
std::vector<int> predict_labels(const Model<T>& model, std::span<const ViewSet* const> objects,
                                int threads = 1) {
  return predict_from_fused(model, fused_descriptors(model, objects, threads));
}

}  // namespace mvter
