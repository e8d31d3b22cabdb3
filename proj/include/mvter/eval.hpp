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
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mvter/dataset.hpp"
#include "mvter/inference.hpp"
#include "mvter/model.hpp"
#include "mvter/renderer.hpp"
#include "mvter/training.hpp"

namespace mvter {

struct RetrievalResult {
  std::vector<std::vector<std::size_t>> rankings;  // gallery indices, nearest first
  std::vector<double> average_precision;
  double mean_average_precision = 0.0;
};

/// Ranks the gallery for every query by Euclidean distance (ties by gallery
/// index). AP is the mean of precision@k over the ranks k holding a
/// same-class item; mAP is the mean AP over queries.
template <typename T>
RetrievalResult retrieval_map(std::span<const T> queries, std::span<const int> query_labels,
                              std::span<const T> gallery, std::span<const int> gallery_labels,
                              std::size_t dim) {
  if (dim == 0 || queries.size() != query_labels.size() * dim ||
      gallery.size() != gallery_labels.size() * dim)
    throw DomainError("retrieval_map: descriptor arrays do not match label counts and dimension");
  if (query_labels.empty() || gallery_labels.empty())
    throw DomainError("retrieval_map: empty query or gallery set");
  RetrievalResult result;
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const auto relevant = static_cast<std::size_t>(
        std::count(gallery_labels.begin(), gallery_labels.end(), query_labels[q]));
    if (relevant == 0)
      throw DomainError("retrieval_map: query " + std::to_string(q) + " (class " +
                        std::to_string(query_labels[q]) + ") has no same-class gallery item");
    std::vector<double> dist(gallery_labels.size());
    for (std::size_t g = 0; g < gallery_labels.size(); ++g) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = static_cast<double>(queries[q * dim + k]) - static_cast<double>(gallery[g * dim + k]);
        s += d * d;
      }
      dist[g] = std::sqrt(s);
    }
    std::vector<std::size_t> rank(gallery_labels.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    double precision_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rank.size(); ++k) {
      if (gallery_labels[rank[k]] == query_labels[q]) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
      }
    }
    result.average_precision.push_back(precision_sum / static_cast<double>(relevant));
    result.rankings.push_back(std::move(rank));
  }
  result.mean_average_precision =
      std::accumulate(result.average_precision.begin(), result.average_precision.end(), 0.0) /
      static_cast<double>(result.average_precision.size());
  return result;
}

// ---------------------------------------------------------------------------
// Transformation error

struct TransformTrial {
  std::size_t object = 0;  // dataset index
  Rotation3 rotation;
};

struct TransformTrialRecord {
  TransformTrial trial;
  std::array<double, 3> target{};
  std::array<double, 3> prediction{};
  double mse = 0.0;
};

struct TransformErrorReport {
  double mse = 0.0;          // normalized-angle space
  double rms_degrees = 0.0;  // 180 * sqrt(mse)
  std::vector<TransformTrialRecord> trials;
};

inline std::vector<TransformTrial> sample_transform_trials(std::span<const std::size_t> objects,
                                                           std::size_t n_trials, std::uint64_t seed) {
  if (objects.empty()) throw DomainError("sample_transform_trials: no objects");
  Rng rng(mix_seed(seed, 0x7e11ULL));
  std::vector<TransformTrial> trials;
  trials.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t obj = objects[static_cast<std::size_t>(rng.below(objects.size()))];
    trials.push_back({obj, sample_rotation(rng)});
  }
  return trials;
}

inline TransformErrorReport score_transform_trials(std::span<const TransformTrial> trials,
                                                   std::span<const std::array<double, 3>> predictions) {
  if (trials.size() != predictions.size())
    throw DomainError("score_transform_trials: prediction count mismatch");
  if (trials.empty()) throw DomainError("score_transform_trials: no trials");
  TransformErrorReport report;
  double sum = 0.0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    TransformTrialRecord rec{trials[i], angles_to_target(trials[i].rotation), predictions[i], 0.0};
    for (int k = 0; k < 3; ++k) {
      const double d = rec.prediction[k] - rec.target[k];
      rec.mse += d * d / 3.0;
    }
    sum += rec.mse;
    report.trials.push_back(rec);
  }
  report.mse = sum / static_cast<double>(trials.size());
  report.rms_degrees = 180.0 * std::sqrt(report.mse);
  return report;
}

/// Decodes t^ for each trial with the model under `scheme`. Original views
/// come from `views` (the dataset render cache); transformed views are
/// rendered from the rotated cloud with `rig`.
template <typename T>
std::vector<std::array<double, 3>> predict_transforms(const Model<T>& model, const Dataset& ds,
                                                      const std::vector<ViewSet>& views,
                                                      const CameraRig& rig, Scheme scheme,
                                                      std::span<const TransformTrial> trials,
                                                      int threads = 1) {
  std::vector<std::array<double, 3>> out;
  out.reserve(trials.size());
  const std::size_t m = rig.size();
  for (std::size_t begin = 0; begin < trials.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(trials.size(), begin + kInferenceChunk);
    std::vector<ViewSet> transformed(end - begin);
    parallel_for(end - begin, threads, [&](std::size_t i) {
      const TransformTrial& t = trials[begin + i];
      transformed[i] = render_views(apply_rotation(ds.objects[t.object].cloud, t.rotation), rig);
    });
    std::vector<const ViewSet*> orig_ptrs, trans_ptrs;
    for (std::size_t i = begin; i < end; ++i) {
      if (views[trials[i].object].size() != m)
        throw DomainError("predict_transforms: cached views do not match the rig");
      orig_ptrs.push_back(&views[trials[i].object]);
      trans_ptrs.push_back(&transformed[i - begin]);
    }
    Tensor<T> fo = view_descriptors(model, std::span(orig_ptrs), threads);
    Tensor<T> ft = view_descriptors(model, std::span(trans_ptrs), threads);
    Tape<T> tape(TapeOptions{.threads = 1, .check_finite = true, .record = false});
    Tensor<T> pred = scheme == Scheme::fusion
                         ? decode_fusion(tape, model.decoder, fuse(tape, fo, m), fuse(tape, ft, m))
                         : decode_average(tape, model.decoder, fo, ft, m);
    for (std::size_t r = 0; r < pred.dim(0); ++r)
      out.push_back({static_cast<double>(pred.data()[r * 3]), static_cast<double>(pred.data()[r * 3 + 1]),
                     static_cast<double>(pred.data()[r * 3 + 2])});
  }
  return out;
}

template <typename T>
TransformErrorReport transform_error(const Model<T>& model, const Dataset& ds,
                                     const std::vector<ViewSet>& views, std::span<const std::size_t> objects,
                                     const CameraRig& rig, Scheme scheme, std::size_t n_trials,
                                     std::uint64_t seed, int threads = 1) {
  const auto trials = sample_transform_trials(objects, n_trials, seed);
  const auto preds = predict_transforms(model, ds, views, rig, scheme, std::span(trials), threads);
  return score_transform_trials(trials, preds);
}

inline std::string transform_error_csv(const TransformErrorReport& report) {
  std::string out = "trial,object,alpha,beta,gamma,pred_alpha,pred_beta,pred_gamma,mse\n";
  for (std::size_t i = 0; i < report.trials.size(); ++i) {
    const auto& r = report.trials[i];
    out += std::to_string(i) + "," + std::to_string(r.trial.object);
    for (double a : r.trial.rotation.angles()) out += "," + format_real(a);
    for (double p : r.prediction) out += "," + format_real(p * 180.0);
    out += "," + format_real(r.mse) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string condition;  // training condition, e.g. "train_views=12"
  std::string variant;    // testing condition or model variant
  double accuracy = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  std::string csv() const {
    std::string out = "condition,variant,accuracy\n";
    for (const auto& r : rows) out += r.condition + "," + r.variant + "," + format_real(r.accuracy) + "\n";
    return out;
  }
};

/// Test accuracy when only `count` randomly chosen views per object are fused,
/// averaged over `subsets_per_object` draws per object.
template <typename T>
AblationReport ablate_views(const Model<T>& model, const Dataset& ds, const std::vector<ViewSet>& views,
                            std::span<const std::size_t> objects, std::span<const int> counts,
                            std::size_t subsets_per_object, std::uint64_t seed,
                            const std::string& condition, int threads = 1) {
  if (objects.empty()) throw DomainError("ablate_views: no test objects");
  if (subsets_per_object < 1) throw DomainError("ablate_views: need at least one subset per object");
  const auto ptrs = view_pointers(views, objects);
  const std::size_t m = ptrs[0]->size();
  for (int c : counts)
    if (c < 1 || static_cast<std::size_t>(c) > m)
      throw DomainError("ablate_views: view count " + std::to_string(c) + " outside [1, " +
                        std::to_string(m) + "]");
  const Tensor<T> per_view = view_descriptors(model, std::span(ptrs), threads);
  const std::size_t d = per_view.dim(1);

  AblationReport report;
  for (int c : counts) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    std::vector<T> fused;
    std::vector<int> truth;
    std::vector<std::size_t> pool(m);
    for (std::size_t o = 0; o < objects.size(); ++o) {
      for (std::size_t s = 0; s < subsets_per_object; ++s) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t k = 0; k < static_cast<std::size_t>(c); ++k)
          std::swap(pool[k], pool[k + static_cast<std::size_t>(rng.below(m - k))]);
        std::vector<T> f(per_view.data().begin() + (o * m + pool[0]) * d,
                         per_view.data().begin() + (o * m + pool[0] + 1) * d);
        for (std::size_t k = 1; k < static_cast<std::size_t>(c); ++k)
          for (std::size_t j = 0; j < d; ++j)
            f[j] = std::max(f[j], per_view.data()[(o * m + pool[k]) * d + j]);
        fused.insert(fused.end(), f.begin(), f.end());
        truth.push_back(ds.objects[objects[o]].label);
      }
    }
    const Tensor<T> fused_t({truth.size(), d}, std::move(fused));
    const auto pred = predict_from_fused(model, fused_t);
    report.rows.push_back({condition, "test_views=" + std::to_string(c), accuracy(pred, truth)});
  }
  return report;
}

struct LabelRateOutcome {
  double rate = 0.0;
  double baseline_accuracy = 0.0;
  double mvter_accuracy = 0.0;
};

/// For each label rate, trains the lambda = 0 baseline and the MV-TER model
/// (cfg.lambda) on the same mask and seed, and reports test accuracy for both.
template <typename T = float>
std::vector<LabelRateOutcome> ablate_label_rate(const Dataset& ds, const std::vector<ViewSet>& views,
                                                const CameraRig& rig, const TrainConfig& cfg,
                                                const ModelConfig& model_cfg, std::span<const double> rates,
                                                const std::function<void(const std::string&)>& log = {}) {
  const auto test_idx = ds.indices(Split::test);
  const auto test_views = view_pointers(views, test_idx);
  std::vector<int> truth;
  for (std::size_t i : test_idx) truth.push_back(ds.objects[i].label);
  std::vector<LabelRateOutcome> out;
  for (double rate : rates) {
    const Dataset masked = mask_labels(ds, rate, cfg.seed);
    LabelRateOutcome row{rate, 0.0, 0.0};
    for (int variant = 0; variant < 2; ++variant) {
      TrainConfig c = cfg;
      c.label_rate = rate;
      if (variant == 0) c.lambda = 0.0;
      const FitResult<T> fitted = fit<T>(masked, views, rig, c, model_cfg);
      const double acc = accuracy(predict_labels(fitted.model, std::span(test_views), c.threads), truth);
      (variant == 0 ? row.baseline_accuracy : row.mvter_accuracy) = acc;
      if (log)
        log("label_rate=" + format_real(rate) + " " + (variant == 0 ? "baseline" : "mvter") +
            " test_acc=" + format_real(acc) + " best_epoch=" + std::to_string(fitted.best_epoch));
    }
    out.push_back(row);
  }
  return out;
}

inline AblationReport label_rate_report(std::span<const LabelRateOutcome> outcomes) {
  AblationReport report;
  for (const auto& o : outcomes) {
    const std::string cond = "label_rate=" + format_real(o.rate);
    report.rows.push_back({cond, "baseline", o.baseline_accuracy});
    report.rows.push_back({cond, "mvter", o.mvter_accuracy});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Feature maps

/// Writes the first conv block's activations of every view as
/// view{i}_chan{c}.pgm, each channel min-max scaled to [0, 255] (a constant
/// channel writes zeros). Returns the number of files written.
template <typename T>
std::size_t export_feature_maps(const Model<T>& model, const PointCloud& cloud, const CameraRig& rig,
                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const ViewSet views = render_views(cloud, rig);
  std::vector<const ViewImage*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  Tape<T> tape(TapeOptions{.threads = 1, .check_finite = true, .record = false});
  const Tensor<T> maps =
      encode_block1(tape, model.encoder, views_to_tensor<T>(ptrs, model.config().resolution));
  const std::size_t channels = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
  std::size_t written = 0;
  for (std::size_t v = 0; v < maps.dim(0); ++v) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto plane = maps.data().subspan((v * channels + c) * h * w, h * w);
      const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
      std::vector<float> scaled(plane.size(), 0.0f);
      if (*hi > *lo)
        for (std::size_t i = 0; i < plane.size(); ++i)
          scaled[i] = static_cast<float>((plane[i] - *lo) / (*hi - *lo));
      write_pgm(dir / ("view" + std::to_string(v) + "_chan" + std::to_string(c) + ".pgm"),
                static_cast<int>(h), static_cast<int>(w), scaled);
      ++written;
    }
  }
  return written;
}

}  // namespace mvter
