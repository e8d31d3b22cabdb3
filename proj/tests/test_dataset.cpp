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

#include <filesystem>
#include <cstring>
#include <fstream>

#include "mvter/checkpoint.hpp"
#include "mvter/dataset.hpp"
#include "mvter/model.hpp"

using namespace mvter;

namespace {

Dataset small(std::uint64_t seed) {
  ShapeSpec spec;
  spec.points_per_object = 128;
  return generate_dataset({3, 1, 2}, spec, seed);
}

std::vector<std::uint8_t> with_byte(std::vector<std::uint8_t> b, std::size_t at, std::uint8_t v) {
  b[at] = v;
  return b;
}

}  // namespace

TEST(Dataset, ClassNamesRoundTrip) {
  for (int i = 0; i < kNumShapeClasses; ++i)
    EXPECT_EQ(static_cast<int>(shape_class(kShapeClassNames[static_cast<std::size_t>(i)])), i);
  EXPECT_THROW(shape_class("dodecahedron"), DomainError);
  EXPECT_THROW(shape_class(8), DomainError);
}

TEST(Dataset, LayoutAndCounts) {
  const Dataset ds = small(1);
  ASSERT_EQ(ds.objects.size(), 8u * 6);
  EXPECT_EQ(ds.indices(Split::train).size(), 24u);
  EXPECT_EQ(ds.indices(Split::val).size(), 8u);
  EXPECT_EQ(ds.indices(Split::test).size(), 16u);
  EXPECT_EQ(ds.objects[0].label, 0);
  EXPECT_EQ(ds.objects[3].label, 1);
  EXPECT_EQ(ds.objects[24].split, Split::val);
  for (const auto& o : ds.objects) {
    EXPECT_EQ(o.cloud.size(), 128u);
    EXPECT_NEAR(o.cloud.max_norm(), 1.0, 1e-6);
  }
}

TEST(Dataset, SeededAndDeterministic) {
  EXPECT_EQ(dataset_checksum(small(4)), dataset_checksum(small(4)));
  EXPECT_NE(dataset_checksum(small(4)), dataset_checksum(small(5)));
}

TEST(Dataset, CanonicalSurfacesHaveExpectedExtents) {
  Rng rng(7);
  auto extent = [&](ShapeClass c) {
    Vec3 hi{0, 0, 0};
    for (const auto& p : sample_canonical_surface(c, 4000, rng))
      for (int k = 0; k < 3; ++k) hi[k] = std::max(hi[k], std::abs(p[k]));
    return hi;
  };
  const Vec3 cube = extent(ShapeClass::cube);
  for (double v : cube) EXPECT_NEAR(v, 1.0, 1e-9);
  const Vec3 ell = extent(ShapeClass::ellipsoid);
  EXPECT_NEAR(ell[0], 1.0, 0.02);
  EXPECT_NEAR(ell[1], 0.6, 0.02);
  EXPECT_NEAR(ell[2], 0.35, 0.02);
  const Vec3 torus = extent(ShapeClass::torus);
  EXPECT_NEAR(torus[0], 1.35, 0.02);
  EXPECT_NEAR(torus[2], 0.35, 0.02);
  // Sphere samples lie on the unit sphere.
  for (const auto& p : sample_canonical_surface(ShapeClass::sphere, 100, rng)) EXPECT_NEAR(norm(p), 1.0, 1e-12);
}

TEST(Dataset, MvdsRoundTripIsBitExact) {
  const Dataset ds = small(2);
  const auto bytes = encode_dataset(ds);
  ByteReader r(bytes, "mem");
  const Dataset back = decode_dataset(r);
  EXPECT_EQ(encode_dataset(back), bytes);
  ASSERT_EQ(back.objects.size(), ds.objects.size());
  for (std::size_t i = 0; i < ds.objects.size(); ++i) {
    EXPECT_EQ(back.objects[i].label, ds.objects[i].label);
    EXPECT_EQ(back.objects[i].split, ds.objects[i].split);
    EXPECT_TRUE(std::ranges::equal(back.objects[i].cloud.points(), ds.objects[i].cloud.points()));
  }
}

TEST(Dataset, MvdsRejectsCorruption) {
  const auto bytes = encode_dataset(small(3));
  auto decode = [](std::vector<std::uint8_t> b) {
    ByteReader r(std::move(b), "mem");
    return decode_dataset(r);
  };
  EXPECT_THROW(decode(with_byte(bytes, 0, 'X')), FormatError);
  EXPECT_THROW(decode(with_byte(bytes, 4, 2)), FormatError);                     // version
  EXPECT_THROW(decode(with_byte(bytes, 12, 200)), FormatError);                  // class >= K
  EXPECT_THROW(decode(with_byte(bytes, 14, 7)), FormatError);                    // split tag
  EXPECT_THROW(decode({bytes.begin(), bytes.end() - 1}), FormatError);          // truncated
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode(extra), FormatError);                                      // trailing
  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(&nan[19], &q, 4);
  EXPECT_THROW(decode(nan), FormatError);
  try {
    decode({bytes.begin(), bytes.begin() + 30});
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }
}

TEST(Dataset, FileIoErrors) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/x.mvds"), IoError);
  EXPECT_THROW(save_dataset(small(1), "/nonexistent/dir/x.mvds"), IoError);
}

TEST(Checkpoint, RoundTripAndRejection) {
  const Model<float> m = Model<float>::init(ModelConfig{16, 8, 3}, 5);
  const auto bytes = encode_checkpoint(m.named_parameters());
  ByteReader r(bytes, "mem");
  const auto back = decode_checkpoint<float>(r);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const Model<float> m2 = Model<float>::from_named(back);
  EXPECT_EQ(m2.config().resolution, 16);
  EXPECT_EQ(m2.config().feature_dim, 8);
  EXPECT_EQ(m2.config().num_classes, 3);

  auto decode = [](std::vector<std::uint8_t> b) {
    ByteReader rr(std::move(b), "mem");
    return decode_checkpoint<float>(rr);
  };
  EXPECT_THROW(decode(with_byte(bytes, 1, 'x')), FormatError);
  EXPECT_THROW(decode(with_byte(bytes, 4, 9)), FormatError);
  EXPECT_THROW(decode({bytes.begin(), bytes.end() - 3}), FormatError);
  EXPECT_THROW(decode({}), FormatError);
  auto extra = bytes;
  extra.push_back(1);
  EXPECT_THROW(decode(extra), FormatError);

  auto named = m.named_parameters();
  named[0].name = "encoder.conv9.weight";
  EXPECT_THROW(Model<float>::from_named(named), FormatError);
  named = m.named_parameters();
  named[5].tensor = Tensor<float>::zeros({3, 3});
  EXPECT_THROW(Model<float>::from_named(named), FormatError);
}
