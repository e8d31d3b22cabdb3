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

#include <gtest/gtest.h>

#include "mvter/training.hpp"

using namespace mvter;

namespace {

struct Tiny {
  Dataset ds;
  CameraRig rig = CameraRig::ring(4, 30.0, 16);
  std::vector<ViewSet> views;
  ModelConfig model{16, 16, 8};

  explicit Tiny(std::uint64_t seed, int train = 2) {
    ShapeSpec spec;
    spec.points_per_object = 256;
    ds = generate_dataset({train, 1, 1}, spec, seed);
    views = render_dataset(ds, rig);
  }
};

TrainConfig quick(int epochs, double lambda = 1.0) {
  TrainConfig c;
  c.epochs = epochs;
  c.lambda = lambda;
  c.learning_rate = 0.01;
  c.batch_size = 8;
  return c;
}

}  // namespace

TEST(Training, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1;
  EXPECT_THROW(c.validate(), DomainError);
  c = {};
  c.label_rate = 0.0;
  EXPECT_THROW(c.validate(), DomainError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_EQ(parse_scheme("fusion"), Scheme::fusion);
  EXPECT_THROW(parse_scheme("median"), DomainError);
}

TEST(Training, LearningRateHalvesEveryPeriod) {
  TrainConfig c;
  c.learning_rate = 0.001;
  c.lr_halving_period = 10;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 1), 0.001);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 10), 0.001);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 11), 0.0005);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 50), 0.001 / 16);
}

TEST(Training, RotationsAreFreshEachEpochAndReproducible) {
  for (std::size_t obj = 0; obj < 20; ++obj) {
    const auto a = epoch_rotation(3, 1, obj).angles(), b = epoch_rotation(3, 2, obj).angles(),
               c = epoch_rotation(3, 3, obj).angles();
    EXPECT_FALSE(a == b && b == c);
    EXPECT_NE(a, b);
    EXPECT_EQ(a, epoch_rotation(3, 1, obj).angles());
  }
  EXPECT_NE(epoch_rotation(3, 1, 0).angles(), epoch_rotation(3, 1, 1).angles());
}

TEST(Training, MaskLabelsIsStratifiedAndTouchesOnlyTrain) {
  const Tiny t(1, 10);
  for (double rate : {0.01, 0.1, 0.35, 1.0}) {
    const Dataset m = mask_labels(t.ds, rate, 4);
    std::vector<int> per_class(8, 0);
    for (const auto& o : m.objects) {
      if (o.split != Split::train) {
        EXPECT_TRUE(o.labeled);
        continue;
      }
      per_class[static_cast<std::size_t>(o.label)] += o.labeled;
    }
    for (int c : per_class) EXPECT_EQ(c, static_cast<int>(std::ceil(rate * 10 - 1e-9)));
  }
  EXPECT_THROW(mask_labels(t.ds, 0.0, 1), DomainError);
}

TEST(Training, LambdaZeroSkipsTransformBranch) {
  const Tiny t(2);
  const Model<float> m = Model<float>::init(t.model, 1);
  Batch batch(2);
  for (int i = 0; i < 2; ++i) {
    batch[i].original = &t.views[static_cast<std::size_t>(i)];
    batch[i].label = t.ds.objects[static_cast<std::size_t>(i)].label;
  }
  TrainConfig c = quick(1, 0.0);
  Tape<float> tape;
  const auto loss = total_loss(tape, batch, m, c);  // no transformed views needed
  EXPECT_FALSE(loss.has_mvter);
  EXPECT_EQ(loss.labeled, 2u);
  EXPECT_GT(loss.task, 0.0);
}

TEST(Training, UnlabeledBatchHasZeroTaskLoss) {
  const Tiny t(3);
  const Model<float> m = Model<float>::init(t.model, 1);
  Batch batch(1);
  batch[0].original = &t.views[0];
  batch[0].labeled = false;
  const Rotation3 r(10, 20, 30);
  batch[0].transformed = render_views(apply_rotation(t.ds.objects[0].cloud, r), t.rig);
  batch[0].target = angles_to_target(r);
  Tape<float> tape;
  const auto loss = total_loss(tape, batch, m, quick(1));
  EXPECT_EQ(loss.task, 0.0);
  EXPECT_TRUE(loss.has_mvter);
  EXPECT_GT(loss.mvter, 0.0);
  EXPECT_NO_THROW(tape.backward(loss.total));
}

TEST(Training, FitIsDeterministicAndLearns) {
  const Tiny t(4, 3);
  const auto a = fit<float>(t.ds, t.views, t.rig, quick(6), t.model);
  const auto b = fit<float>(t.ds, t.views, t.rig, quick(6), t.model);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_LT(a.history.back().task_loss, a.history.front().task_loss);
  EXPECT_GT(a.history.front().mvter_loss, 0.0);
  EXPECT_GE(a.best_epoch, 1);
}

TEST(Training, ThreadCountDoesNotChangeHistory) {
  const Tiny t(5);
  TrainConfig c = quick(2);
  const auto one = fit<float>(t.ds, t.views, t.rig, c, t.model);
  c.threads = 3;
  const auto three = fit<float>(t.ds, t.views, t.rig, c, t.model);
  EXPECT_EQ(history_csv(one.history), history_csv(three.history));
}

TEST(Training, BaselineReportsZeroMvterLoss) {
  const Tiny t(6);
  const auto r = fit<float>(t.ds, t.views, t.rig, quick(1, 0.0), t.model);
  EXPECT_EQ(r.history[0].mvter_loss, 0.0);
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
  const Tiny t(7);
  TrainConfig c = quick(0);
  c.seed = 11;
  const auto r = fit<float>(t.ds, t.views, t.rig, c, t.model);
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_TRUE(r.history.empty());
  const Model<float> init = Model<float>::init(t.model, mix_seed(11, 0x1417ULL));
  EXPECT_TRUE(std::ranges::equal(r.model.encoder.conv1.data(), init.encoder.conv1.data()));
}

TEST(Training, DivergenceTripsWithContext) {
  const Tiny t(8);
  TrainConfig c = quick(3);
  c.learning_rate = 1e30;
  try {
    fit<float>(t.ds, t.views, t.rig, c, t.model);
    FAIL() << "expected a numeric trip";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Training, HistoryCsvFormat) {
  std::vector<EpochStats> h{{1, 0.001, 2.0, 0.25, 0.5, 0.125}};
  EXPECT_EQ(history_csv(h), std::string(kHistoryHeader) + "\n1,0.001,2,0.25,0.5,0.125\n");
}
