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

#include "mvter/inference.hpp"
#include "mvter/model.hpp"
#include "support/grad_cases.hpp"

using namespace mvter;

namespace {

ViewSet views_of(std::uint64_t seed, int m, int res) {
  Rng rng(seed);
  return render_views(oracle::detail::random_blob(rng, 400), CameraRig::ring(m, 30.0, res));
}

}  // namespace

TEST(Model, ConfigValidation) {
  EXPECT_THROW(ModelConfig({12, 8, 3}).validate(), DomainError);
  EXPECT_THROW(ModelConfig({16, 0, 3}).validate(), DomainError);
  EXPECT_THROW(ModelConfig({16, 8, 1}).validate(), DomainError);
  EXPECT_EQ(ModelConfig{}.flat_dim(), 64u * 4 * 4);
}

TEST(Model, InitShapesAndBounds) {
  const Model<float> m = Model<float>::init(ModelConfig{}, 1);
  EXPECT_EQ(m.encoder.conv1.shape(), (Shape{16, 1, 3, 3}));
  EXPECT_EQ(m.encoder.proj_w.shape(), (Shape{1024, 128}));
  EXPECT_EQ(m.decoder.w.shape(), (Shape{256, 3}));
  EXPECT_EQ(m.head.w.shape(), (Shape{128, 8}));
  for (float v : m.encoder.conv2.data()) EXPECT_LE(std::abs(v), 1.0f / 12.0f);
  for (float v : m.head.b.data()) EXPECT_EQ(v, 0.0f);
  const Model<float> same = Model<float>::init(ModelConfig{}, 1);
  EXPECT_TRUE(std::ranges::equal(same.encoder.conv3.data(), m.encoder.conv3.data()));
  EXPECT_EQ(Model<float>::parameter_names().size(), m.parameters().size());
}

TEST(Model, DescriptorIsPerViewAndBatchInvariant) {
  const Model<double> m = Model<double>::init(ModelConfig{16, 8, 3}, 2);
  const ViewSet a = views_of(1, 4, 16), b = views_of(2, 4, 16);
  const std::vector<const ViewSet*> both{&a, &b};
  const Tensor<double> all = view_descriptors(m, std::span(both));
  for (std::size_t v = 0; v < 4; ++v) {
    const Descriptor<double> single = encode(b[v], m);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(all.data()[(4 + v) * 8 + j], single[j]);
  }
}

TEST(Model, FusionIsElementwiseMaxAndViewOrderInvariant) {
  const Model<double> m = Model<double>::init(ModelConfig{16, 8, 3}, 3);
  ViewSet vs = views_of(4, 5, 16);
  std::vector<Descriptor<double>> ds;
  for (const auto& v : vs) ds.push_back(encode(v, m));
  const Descriptor<double> fused = fuse<double>(ds);
  for (std::size_t j = 0; j < 8; ++j) {
    double mx = ds[0][j];
    for (const auto& d : ds) mx = std::max(mx, d[j]);
    EXPECT_EQ(fused[j], mx);
  }
  std::reverse(ds.begin(), ds.end());
  EXPECT_EQ(fuse<double>(ds), fused);
}

TEST(Model, DecodeAverageIsMeanOfPerViewEstimates) {
  Rng rng(5);
  const std::size_t m = 4, d = 6, objects = 3;
  Tensor<double> fo = oracle::random_tensor({objects * m, d}, rng, false);
  Tensor<double> ft = oracle::random_tensor({objects * m, d}, rng, false);
  const Decoder<double> dec{oracle::random_tensor({2 * d, 3}, rng, false), oracle::random_tensor({3}, rng, false)};
  Tape<double> tape;
  const Tensor<double> est = decode_average(tape, dec, fo, ft, m);
  for (std::size_t o = 0; o < objects; ++o)
    for (std::size_t k = 0; k < 3; ++k) {
      double sum = 0.0;
      for (std::size_t v = 0; v < m; ++v) {
        double e = dec.b.data()[k];
        for (std::size_t j = 0; j < d; ++j)
          e += fo.data()[(o * m + v) * d + j] * dec.w.data()[j * 3 + k] +
               ft.data()[(o * m + v) * d + j] * dec.w.data()[(d + j) * 3 + k];
        sum += e;
      }
      EXPECT_NEAR(est.data()[o * 3 + k], sum / m, 1e-12);
    }
}

TEST(Model, DecodeFusionUsesConcatenatedFusedDescriptors) {
  Rng rng(6);
  const std::size_t d = 4;
  Tensor<double> a = oracle::random_tensor({2, d}, rng, false), b = oracle::random_tensor({2, d}, rng, false);
  const Decoder<double> dec{oracle::random_tensor({2 * d, 3}, rng, false), oracle::random_tensor({3}, rng, false)};
  Tape<double> tape;
  const Tensor<double> est = decode_fusion(tape, dec, a, b);
  EXPECT_EQ(est.shape(), (Shape{2, 3}));
  double e = dec.b.data()[1];
  for (std::size_t j = 0; j < d; ++j)
    e += a.data()[d + j] * dec.w.data()[j * 3 + 1] + b.data()[d + j] * dec.w.data()[(d + j) * 3 + 1];
  EXPECT_NEAR(est.data()[4], e, 1e-12);
  EXPECT_THROW(decode_fusion(tape, dec, a, oracle::random_tensor({3, d}, rng, false)), DomainError);
}

TEST(Model, TargetsNormalizeAnglesBy180) {
  const auto t = angles_to_target(Rotation3(90, -45, 180));
  EXPECT_DOUBLE_EQ(t[0], 0.5);
  EXPECT_DOUBLE_EQ(t[1], -0.25);
  EXPECT_DOUBLE_EQ(t[2], 1.0);
  const std::array<double, 3> v{0.5, -0.25, 1.0};
  const Vec3 back = target_to_angles(v);
  EXPECT_EQ(back, (Vec3{90, -45, 180}));
  const std::array<double, 3> bad{1.5, 0, 0};
  EXPECT_THROW(target_to_angles(bad), DomainError);
}

TEST(Model, ResolutionMismatchRejected) {
  const ViewSet vs = views_of(7, 2, 32);
  const Model<float> m = Model<float>::init(ModelConfig{16, 8, 3}, 1);
  EXPECT_THROW(encode(vs[0], m), DomainError);
}

TEST(Model, CastPreservesValues) {
  const Model<float> m = Model<float>::init(ModelConfig{16, 8, 3}, 9);
  const Model<double> d = m.cast<double>();
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    for (std::size_t j = 0; j < m.parameters()[i].numel(); ++j)
      EXPECT_EQ(static_cast<double>(m.parameters()[i].data()[j]), d.parameters()[i].data()[j]);
}
