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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvter/dataset.hpp"
#include "mvter/inference.hpp"
#include "mvter/model.hpp"
#include "mvter/renderer.hpp"
#include "mvter/tensor.hpp"

namespace mvter {

enum class Scheme { fusion, average };

inline std::string_view scheme_name(Scheme s) { return s == Scheme::fusion ? "fusion" : "average"; }

inline Scheme parse_scheme(std::string_view name) {
  if (name == "fusion") return Scheme::fusion;
  if (name == "average") return Scheme::average;
  throw DomainError("unknown scheme '" + std::string(name) + "' (expected fusion or average)");
}

struct TrainConfig {
  Scheme scheme = Scheme::average;
  double lambda = 1.0;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int lr_halving_period = 10;  // epochs
  int batch_size = 24;         // objects
  int epochs = 50;
  double label_rate = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw DomainError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be >= 0");
    if (lr_halving_period < 1) throw DomainError("lr_halving_period must be >= 1");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (epochs < 0) throw DomainError("epochs must be >= 0");
    if (!(label_rate > 0.0 && label_rate <= 1.0)) throw DomainError("label_rate must be in (0, 1]");
    if (threads < 1) throw DomainError("threads must be >= 1");
  }
};

// Learning rate for a 1-based epoch: halved every lr_halving_period epochs.
inline double learning_rate_at(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(0.5, (epoch - 1) / cfg.lr_halving_period);
}

// The transformation drawn for `object` in `epoch`; a pure function of its
// arguments so batches can be prepared in any order.
inline Rotation3 epoch_rotation(std::uint64_t seed, int epoch, std::size_t object) {
  Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), object));
  return sample_rotation(rng);
}

// One training object: V, V~ from the same rig, normalized target, label.
struct BatchItem {
  const ViewSet* original = nullptr;
  ViewSet transformed;
  std::array<double, 3> target{};
  int label = 0;
  bool labeled = true;
};

using Batch = std::vector<BatchItem>;

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double task = 0.0;   // mean cross-entropy over labeled objects, 0 if none
  double mvter = 0.0;  // MSE between predicted and true normalized angles
  std::size_t labeled = 0;
  std::size_t correct = 0;  // labeled objects whose argmax matches
  bool has_mvter = false;
};

// l_M(t, t^): MSE over the batch and the three angle components.
template <typename T>
Tensor<T> mvter_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  return tape.mse(pred, target);
}

/// l_task(labeled subset) + lambda * l_MVTER(all objects).
///
/// Classification sees only the fused original-view descriptor. When lambda
/// is zero the transformed branch is not evaluated; when the batch has no
/// labeled object the task term is exactly zero.
template <typename T>
LossTerms<T> total_loss(Tape<T>& tape, const Batch& batch, const Model<T>& model,
                        const TrainConfig& cfg) {
  if (batch.empty()) throw DomainError("total_loss: empty batch");
  const std::size_t b = batch.size(), m = batch[0].original->size();
  const bool with_transform = cfg.lambda > 0.0;

  std::vector<const ViewImage*> views;
  views.reserve(b * m * (with_transform ? 2 : 1));
  for (const auto& item : batch) {
    if (item.original->size() != m) throw DomainError("total_loss: objects have different view counts");
    for (const auto& v : *item.original) views.push_back(&v);
  }
  if (with_transform) {
    for (const auto& item : batch) {
      if (item.transformed.size() != m)
        throw DomainError("total_loss: transformed view count differs from original");
      for (const auto& v : item.transformed) views.push_back(&v);
    }
  }

  Tensor<T> features =
      encode(tape, model.encoder, views_to_tensor<T>(views, model.config().resolution));
  Tensor<T> original = with_transform ? tape.slice_rows(features, 0, b * m) : features;
  Tensor<T> fused_original = fuse(tape, original, m);

  LossTerms<T> out;
  std::optional<Tensor<T>> task, mv;

  std::vector<std::size_t> labeled_rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < b; ++i) {
    if (batch[i].labeled) {
      labeled_rows.push_back(i);
      labels.push_back(batch[i].label);
    }
  }
  if (!labeled_rows.empty()) {
    Tensor<T> logits = classify(tape, model.head, tape.select_rows(fused_original, labeled_rows));
    task = tape.softmax_xent(logits, labels);
    out.task = static_cast<double>(task->item());
    out.labeled = labels.size();
    const auto pred = argmax_rows<T>(logits.data(), logits.dim(1));
    for (std::size_t i = 0; i < labels.size(); ++i) out.correct += pred[i] == labels[i];
  }

  if (with_transform) {
    Tensor<T> transformed = tape.slice_rows(features, b * m, 2 * b * m);
    Tensor<T> pred = cfg.scheme == Scheme::fusion
                         ? decode_fusion(tape, model.decoder, fused_original, fuse(tape, transformed, m))
                         : decode_average(tape, model.decoder, original, transformed, m);
    std::vector<T> target;
    for (const auto& item : batch)
      for (double v : item.target) target.push_back(static_cast<T>(v));
    mv = mvter_loss(tape, pred, Tensor<T>({b, 3}, std::move(target)));
    out.mvter = static_cast<double>(mv->item());
    out.has_mvter = true;
  }

  if (task && mv) {
    out.total = tape.add(*task, tape.scale(*mv, static_cast<T>(cfg.lambda)));
  } else if (task) {
    out.total = *task;
  } else if (mv) {
    out.total = tape.scale(*mv, static_cast<T>(cfg.lambda));
  } else {
    out.total = Tensor<T>::scalar(T(0));
  }
  return out;
}

// A training object with its cached original views.
struct TrainSample {
  std::size_t object_id = 0;  // index in the dataset; keys the per-epoch rotation
  const PointCloud* cloud = nullptr;
  const ViewSet* views = nullptr;
  int label = 0;
  bool labeled = true;
};

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double task_loss = 0.0;   // averaged over labeled objects
  double mvter_loss = 0.0;  // averaged over objects; 0 when lambda = 0
  double train_acc = 0.0;   // over labeled objects seen this epoch
  double val_acc = 0.0;
};

/// One pass over `samples` in a seeded shuffled order. Each batch samples a
/// fresh rotation per object, renders V~ from the rotated cloud with the same
/// rig, and takes one SGD step on total_loss. With lambda = 0 unlabeled
/// objects contribute nothing and are skipped.
template <typename T>
EpochStats train_epoch(std::span<const TrainSample> samples, Model<T>& model, const TrainConfig& cfg,
                       SgdState<T>& sgd, const CameraRig& rig, int epoch) {
  if (samples.empty()) throw DomainError("train_epoch: no training objects");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(mix_seed(cfg.seed ^ 0x5eedba7c4ULL, static_cast<std::uint64_t>(epoch)));
  shuffle(order, shuffle_rng);

  EpochStats stats;
  stats.epoch = epoch;
  stats.learning_rate = learning_rate_at(cfg, epoch);
  sgd.learning_rate = stats.learning_rate;
  sgd.momentum = cfg.momentum;
  sgd.weight_decay = cfg.weight_decay;

  double task_sum = 0.0, mvter_sum = 0.0;
  std::size_t labeled = 0, correct = 0, mvter_count = 0;
  auto params = model.parameters();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t begin = 0, batch_no = 0; begin < order.size(); begin += bs, ++batch_no) {
    const std::size_t end = std::min(order.size(), begin + bs);
    std::vector<const TrainSample*> members;
    for (std::size_t i = begin; i < end; ++i) {
      const TrainSample& s = samples[order[i]];
      if (cfg.lambda > 0.0 || s.labeled) members.push_back(&s);
    }
    if (members.empty()) continue;

    Batch batch(members.size());
    parallel_for(members.size(), cfg.threads, [&](std::size_t i) {
      const TrainSample& s = *members[i];
      BatchItem& item = batch[i];
      item.original = s.views;
      item.label = s.label;
      item.labeled = s.labeled;
      if (cfg.lambda > 0.0) {
        const Rotation3 t = epoch_rotation(cfg.seed, epoch, s.object_id);
        item.target = angles_to_target(t);
        item.transformed = render_views(apply_rotation(*s.cloud, t), rig);
      }
    });

    try {
      Tape<T> tape(TapeOptions{.threads = cfg.threads, .check_finite = true, .record = true});
      LossTerms<T> loss = total_loss(tape, batch, model, cfg);
      tape.backward(loss.total);
      sgd_step<T>(params, sgd);
      model.zero_grad();
      task_sum += loss.task * static_cast<double>(loss.labeled);
      labeled += loss.labeled;
      correct += loss.correct;
      if (loss.has_mvter) {
        mvter_sum += loss.mvter * static_cast<double>(batch.size());
        mvter_count += batch.size();
      }
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                         " (lr " + std::to_string(stats.learning_rate) + "): " + e.what());
    }
  }
  stats.task_loss = labeled ? task_sum / static_cast<double>(labeled) : 0.0;
  stats.mvter_loss = mvter_count ? mvter_sum / static_cast<double>(mvter_count) : 0.0;
  stats.train_acc = labeled ? static_cast<double>(correct) / static_cast<double>(labeled) : 0.0;
  return stats;
}

// Marks ceil(rate * count) train objects per class as labeled, chosen by a
// seeded shuffle within each class. Other splits are left untouched.
inline Dataset mask_labels(Dataset ds, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0))
    throw DomainError("label rate " + std::to_string(rate) + " outside (0, 1]");
  Rng rng(mix_seed(seed, 0x1abe1ULL));
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.objects.size(); ++i)
      if (ds.objects[i].split == Split::train && ds.objects[i].label == c) members.push_back(i);
    shuffle(members, rng);
    const auto keep = static_cast<std::size_t>(
        std::ceil(rate * static_cast<double>(members.size()) - 1e-9));
    for (std::size_t k = 0; k < members.size(); ++k) ds.objects[members[k]].labeled = k < keep;
  }
  return ds;
}

inline std::vector<ViewSet> render_dataset(const Dataset& ds, const CameraRig& rig, int threads = 1) {
  std::vector<ViewSet> out(ds.objects.size());
  parallel_for(ds.objects.size(), threads,
               [&](std::size_t i) { out[i] = render_views(ds.objects[i].cloud, rig); });
  return out;
}

inline std::vector<const ViewSet*> view_pointers(const std::vector<ViewSet>& all,
                                                 std::span<const std::size_t> indices) {
  std::vector<const ViewSet*> out;
  for (std::size_t i : indices) out.push_back(&all[i]);
  return out;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size())
    throw DomainError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(truth.size()) + " labels");
  if (predictions.empty()) throw DomainError("accuracy: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

template <typename T>
struct FitResult {
  Model<T> model;  // best by validation accuracy
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 0: the initial model
};

/// Trains for cfg.epochs epochs with the halving learning-rate schedule and
/// keeps the model with the highest validation accuracy (earliest on ties).
/// `views` must hold the rig's renders of every dataset object.
template <typename T = float>
FitResult<T> fit(const Dataset& ds, const std::vector<ViewSet>& views, const CameraRig& rig,
                 const TrainConfig& cfg, const ModelConfig& model_cfg,
                 const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (views.size() != ds.objects.size()) throw DomainError("fit: view cache does not match dataset");
  Model<T> model = Model<T>::init(model_cfg, mix_seed(cfg.seed, 0x1417ULL));
  FitResult<T> result{model.clone(), {}, 0};
  if (cfg.epochs == 0) return result;

  std::vector<TrainSample> samples;
  for (std::size_t i : ds.indices(Split::train)) {
    const DataObject& o = ds.objects[i];
    samples.push_back({i, &o.cloud, &views[i], o.label, o.labeled});
  }
  const auto val_idx = ds.indices(Split::val);
  const auto val_views = view_pointers(views, val_idx);
  std::vector<int> val_truth;
  for (std::size_t i : val_idx) val_truth.push_back(ds.objects[i].label);

  SgdState<T> sgd;
  double best_val = -1.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats = train_epoch<T>(samples, model, cfg, sgd, rig, epoch);
    if (!val_idx.empty())
      stats.val_acc = accuracy(predict_labels(model, std::span(val_views), cfg.threads), val_truth);
    if (stats.val_acc > best_val) {
      best_val = stats.val_acc;
      result.model = model.clone();
      result.best_epoch = epoch;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

inline constexpr char kHistoryHeader[] = "epoch,lr,task_loss,mvter_loss,train_acc,val_acc";

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string history_csv(std::span<const EpochStats> history) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + format_real(h.learning_rate) + "," +
           format_real(h.task_loss) + "," + format_real(h.mvter_loss) + "," +
           format_real(h.train_acc) + "," + format_real(h.val_acc) + "\n";
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mvter
