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
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvter/error.hpp"
#include "mvter/parallel.hpp"

namespace mvter {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

/// Dense row-major tensor handle.
///
/// Copies share storage, like a reference-counted buffer; use clone() for a
/// deep copy. Gradient storage is allocated lazily on first access.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    if (shape_numel(shape) != values.size())
      throw DomainError("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const noexcept { return s_->shape; }
  std::size_t rank() const noexcept { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const noexcept { return s_->shape[i]; }
  std::size_t numel() const noexcept { return s_->value.size(); }

  std::span<T> data() noexcept { return s_->value; }
  std::span<const T> data() const noexcept { return s_->value; }
  std::vector<T>& values() noexcept { return s_->value; }
  const std::vector<T>& values() const noexcept { return s_->value; }
  T item() const {
    if (numel() != 1) throw DomainError("item() on tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  bool requires_grad() const noexcept { return s_->requires_grad; }
  void set_requires_grad(bool on) noexcept { s_->requires_grad = on; }

  // Gradient buffers belong to the shared storage, so a const handle can
  // still accumulate into them.
  bool has_grad() const noexcept { return !s_->grad.empty(); }
  std::span<T> grad() const {
    if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), T(0));
    return s_->grad;
  }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }

  Tensor clone() const { return Tensor(s_->shape, s_->value, s_->requires_grad); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(s_->shape, std::vector<U>(s_->value.begin(), s_->value.end()),
                     s_->requires_grad);
  }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

struct TapeOptions {
  int threads = 1;
  bool check_finite = true;
  bool record = true;  // false: inference only, no backward rules kept
};

namespace detail {

// Portable fixed-width SIMD lane group (GCC/Clang vector extension).
template <typename T>
struct Lanes {
  static constexpr std::size_t kBytes = 64;
  typedef T type __attribute__((vector_size(kBytes)));
  static constexpr std::size_t kWidth = kBytes / sizeof(T);

  static type load(const T* p) noexcept {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, const type& v) noexcept { std::memcpy(p, &v, sizeof v); }
};

// c[m][n] += a[m][k] * b[k][n]. Every c element accumulates its k products
// in increasing p order, whatever the blocking, so results match a plain
// triple loop bit for bit.
template <typename T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
              const T* __restrict b, T* __restrict c) {
  using L = Lanes<T>;
  using V = typename L::type;
  constexpr std::size_t kRows = 4, kW = L::kWidth, kCols = 2 * kW;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      V acc[kRows][2];
      for (std::size_t r = 0; r < kRows; ++r) {
        acc[r][0] = L::load(c + (i + r) * n + j);
        acc[r][1] = L::load(c + (i + r) * n + j + kW);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const V b0 = L::load(b + p * n + j), b1 = L::load(b + p * n + j + kW);
        for (std::size_t r = 0; r < kRows; ++r) {
          const T av = a[(i + r) * k + p];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        L::store(c + (i + r) * n + j, acc[r][0]);
        L::store(c + (i + r) * n + j + kW, acc[r][1]);
      }
    }
    if (j < n) {
      for (std::size_t r = 0; r < kRows; ++r) {
        T* __restrict crow = c + (i + r) * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = a[(i + r) * k + p];
          const T* __restrict brow = b + p * n;
          for (std::size_t q = j; q < n; ++q) crow[q] += av * brow[q];
        }
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* __restrict brow = b + p * n;
      for (std::size_t q = 0; q < n; ++q) crow[q] += av * brow[q];
    }
  }
}

// cols[(c*9 + ky*3 + kx)][y*W + x] = input[c][y+ky-1][x+kx-1], zero outside.
template <typename T>
void im2col3x3(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + (c * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

// Transposed layout: colsT[y*W + x][c*9 + ky*3 + kx].
template <typename T>
void im2col3x3_t(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* cols_t) {
  const std::size_t ck = channels * 9;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T* dst = cols_t + (y * w + x) * ck;
      for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = in + c * h * w;
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(y) + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const long sx = static_cast<long>(x) + kx - 1;
            const bool inside =
                sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
            dst[c * 9 + static_cast<std::size_t>(ky * 3 + kx)] =
                inside ? plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)]
                       : T(0);
          }
        }
      }
    }
  }
}

// Inverse scatter of im2col3x3, accumulating into `in_grad`.
template <typename T>
void col2im3x3_acc(const T* cols, std::size_t channels, std::size_t h, std::size_t w, T* in_grad) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = in_grad + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (c * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Records differentiable ops for one forward pass and replays them backwards.
///
/// Nodes are appended in execution order, which is a topological order of the
/// graph; backward() visits them in reverse exactly once. A tape is single
/// use: a second backward() throws TapeError.
template <typename T>
class Tape {
 public:
  explicit Tape(TapeOptions options = {}) : options_(options) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  const TapeOptions& options() const noexcept { return options_; }

  // y = x W + b
  Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) ||
        b.dim(0) != w.dim(1))
      throw DomainError("dense: incompatible shapes x" + shape_str(x.shape()) + " W" +
                        shape_str(w.shape()) + " b" + shape_str(b.shape()));
    const std::size_t rows = x.dim(0), in = w.dim(0), out = w.dim(1);
    Tensor<T> y = make_output({rows, out}, {x, w, b});
    auto yv = y.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.data().begin(), b.data().end(), yv.begin() + r * out);
    detail::gemm_acc(rows, out, in, x.data().data(), w.data().data(), yv.data());
    finish("dense", y);
    if (y.requires_grad()) {
      record("dense", [x, w, b, y, rows, in, out]() mutable {
        auto gy = y.grad();
        if (w.requires_grad()) {
          // dW += x^T gy
          auto gw = w.grad();
          for (std::size_t r = 0; r < rows; ++r)
            detail::gemm_acc(in, out, 1, x.data().data() + r * in, gy.data() + r * out, gw.data());
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out; ++o) gb[o] += gy[r * out + o];
        }
        if (x.requires_grad()) {
          // dx += gy W^T
          std::vector<T> wt(in * out);
          for (std::size_t i = 0; i < in; ++i)
            for (std::size_t o = 0; o < out; ++o) wt[o * in + i] = w.data()[i * out + o];
          detail::gemm_acc(rows, in, out, gy.data(), wt.data(), x.grad().data());
        }
      });
    }
    return y;
  }

  // 3x3 cross-correlation, stride 1, zero padding 1, no bias.
  Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k) {
    if (x.rank() != 4 || k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3 || k.dim(1) != x.dim(1))
      throw DomainError("conv2d: incompatible shapes x" + shape_str(x.shape()) + " k" +
                        shape_str(k.shape()));
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t filters = k.dim(0), ck = ch * 9, hw = h * w;
    Tensor<T> y = make_output({batch, filters, h, w}, {x, k});
    {
      const T* xv = x.data().data();
      const T* kv = k.data().data();
      T* yv = y.data().data();
      parallel_for(chunks(batch), options_.threads, [&](std::size_t chunk) {
        std::vector<T> cols(ck * hw);
        for (std::size_t n = chunk * kChunk; n < std::min(batch, (chunk + 1) * kChunk); ++n) {
          detail::im2col3x3(xv + n * ch * hw, ch, h, w, cols.data());
          detail::gemm_acc(filters, hw, ck, kv, cols.data(), yv + n * filters * hw);
        }
      });
    }
    finish("conv2d", y);
    if (y.requires_grad()) {
      const int threads = options_.threads;
      record("conv2d", [x, k, y, batch, ch, h, w, filters, ck, hw, threads]() mutable {
        const T* gy = y.grad().data();
        const T* xv = x.data().data();
        if (k.requires_grad()) {
          // dK[f][c9] += sum_n gy_n[f][j] * colsT_n[j][c9]; per-chunk partials
          // summed in chunk order.
          const std::size_t nchunks = chunks(batch);
          std::vector<std::vector<T>> partial(nchunks, std::vector<T>(filters * ck, T(0)));
          parallel_for(nchunks, threads, [&](std::size_t chunk) {
            std::vector<T> cols_t(hw * ck);
            for (std::size_t n = chunk * kChunk; n < std::min(batch, (chunk + 1) * kChunk); ++n) {
              detail::im2col3x3_t(xv + n * ch * hw, ch, h, w, cols_t.data());
              detail::gemm_acc(filters, ck, hw, gy + n * filters * hw, cols_t.data(),
                               partial[chunk].data());
            }
          });
          auto gk = k.grad();
          for (const auto& p : partial)
            for (std::size_t i = 0; i < p.size(); ++i) gk[i] += p[i];
        }
        if (x.requires_grad()) {
          std::vector<T> kt(ck * filters);
          const T* kv = k.data().data();
          for (std::size_t f = 0; f < filters; ++f)
            for (std::size_t c = 0; c < ck; ++c) kt[c * filters + f] = kv[f * ck + c];
          T* gx = x.grad().data();
          parallel_for(chunks(batch), threads, [&](std::size_t chunk) {
            std::vector<T> dcols(ck * hw);
            for (std::size_t n = chunk * kChunk; n < std::min(batch, (chunk + 1) * kChunk); ++n) {
              std::fill(dcols.begin(), dcols.end(), T(0));
              detail::gemm_acc(ck, hw, filters, kt.data(), gy + n * filters * hw, dcols.data());
              detail::col2im3x3_acc(dcols.data(), ch, h, w, gx + n * ch * hw);
            }
          });
        }
      });
    }
    return y;
  }

  Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = make_output(x.shape(), {x});
    auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
    finish("relu", y);
    if (y.requires_grad()) {
      record("relu", [x, y]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        auto xv = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (xv[i] > T(0)) gx[i] += gy[i];
      });
    }
    return y;
  }

  // 2x2 window, stride 2. Ties route to the first maximum in row-major order.
  Tensor<T> maxpool2d(const Tensor<T>& x) {
    if (x.rank() != 4) throw DomainError("maxpool2d: expected rank-4 input, got " + shape_str(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
      throw DomainError("maxpool2d: spatial dims must be even, got " + shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> y = make_output({x.dim(0), x.dim(1), oh, ow}, {x});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.numel());
    auto xv = x.data();
    auto yv = y.data();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t base = p * h * w + 2 * oy * w + 2 * ox;
          const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
          std::size_t best = cand[0];
          for (int c = 1; c < 4; ++c)
            if (xv[cand[c]] > xv[best]) best = cand[c];
          const std::size_t o = p * oh * ow + oy * ow + ox;
          yv[o] = xv[best];
          (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
    finish("maxpool2d", y);
    if (y.requires_grad()) {
      record("maxpool2d", [x, y, argmax]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
      });
    }
    return y;
  }

  // Same data, new shape (e.g. flatten [B,C,H,W] -> [B,C*H*W]).
  Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
      throw DomainError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor<T> y = make_output(std::move(shape), {x});
    std::copy(x.data().begin(), x.data().end(), y.data().begin());
    if (y.requires_grad()) {
      record("reshape", [x, y]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      });
    }
    return y;
  }

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
      throw DomainError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y = make_output(a.shape(), {a, b});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
    finish("add", y);
    if (y.requires_grad()) {
      record("add", [a, b, y]() mutable {
        auto gy = y.grad();
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
        }
      });
    }
    return y;
  }

  Tensor<T> scale(const Tensor<T>& x, T factor) {
    Tensor<T> y = make_output(x.shape(), {x});
    for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = x.data()[i] * factor;
    finish("scale", y);
    if (y.requires_grad()) {
      record("scale", [x, y, factor]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
      });
    }
    return y;
  }

  // [B,P] ++ [B,Q] -> [B,P+Q]
  Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
      throw DomainError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    const std::size_t rows = a.dim(0), p = a.dim(1), q = b.dim(1);
    Tensor<T> y = make_output({rows, p + q}, {a, b});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(a.data().begin() + r * p, p, y.data().begin() + r * (p + q));
      std::copy_n(b.data().begin() + r * q, q, y.data().begin() + r * (p + q) + p);
    }
    if (y.requires_grad()) {
      record("concat_cols", [a, b, y, rows, p, q]() mutable {
        auto gy = y.grad();
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += gy[r * (p + q) + j];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += gy[r * (p + q) + p + j];
        }
      });
    }
    return y;
  }

  // Rows [begin, end) of a rank-2 tensor.
  Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() != 2 || begin > end || end > x.dim(0))
      throw DomainError("slice_rows: bad range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") of " + shape_str(x.shape()));
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return select_rows(x, idx);
  }

  // Gathers rows by index; repeated indices accumulate in backward.
  Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    if (x.rank() != 2) throw DomainError("select_rows: expected rank-2 input");
    const std::size_t cols = x.dim(1);
    for (std::size_t r : rows)
      if (r >= x.dim(0)) throw DomainError("select_rows: row " + std::to_string(r) + " out of range");
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor<T> y = make_output({idx.size(), cols}, {x});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(x.data().begin() + idx[i] * cols, cols, y.data().begin() + i * cols);
    if (y.requires_grad()) {
      record("select_rows", [x, y, idx, cols]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += gy[i * cols + c];
      });
    }
    return y;
  }

  // [G*m, d] -> [G, d], elementwise max over each group of m consecutive rows.
  // Backward routes to the first maximal row of the group.
  Tensor<T> group_max(const Tensor<T>& x, std::size_t group) {
    check_groups("group_max", x, group);
    const std::size_t groups = x.dim(0) / group, d = x.dim(1);
    Tensor<T> y = make_output({groups, d}, {x});
    auto argmax = std::make_shared<std::vector<std::size_t>>(groups * d);
    auto xv = x.data();
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t c = 0; c < d; ++c) {
        std::size_t best = g * group * d + c;
        for (std::size_t v = 1; v < group; ++v) {
          const std::size_t i = (g * group + v) * d + c;
          if (xv[i] > xv[best]) best = i;
        }
        y.data()[g * d + c] = xv[best];
        (*argmax)[g * d + c] = best;
      }
    }
    if (y.requires_grad()) {
      record("group_max", [x, y, argmax]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
      });
    }
    return y;
  }

  // [G*m, d] -> [G, d], arithmetic mean over each group of m consecutive rows.
  Tensor<T> group_mean(const Tensor<T>& x, std::size_t group) {
    check_groups("group_mean", x, group);
    const std::size_t groups = x.dim(0) / group, d = x.dim(1);
    Tensor<T> y = make_output({groups, d}, {x});
    auto xv = x.data();
    const T inv = T(1) / static_cast<T>(group);
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t c = 0; c < d; ++c) {
        T sum = T(0);
        for (std::size_t v = 0; v < group; ++v) sum += xv[(g * group + v) * d + c];
        y.data()[g * d + c] = sum * inv;
      }
    }
    if (y.requires_grad()) {
      record("group_mean", [x, y, group, d, inv]() mutable {
        auto gx = x.grad();
        auto gy = y.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[(i / d / group) * d + i % d] * inv;
      });
    }
    return y;
  }

  // Mean over rows of -log softmax(logits)[label], max-subtracted.
  Tensor<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
      throw DomainError("softmax_xent: logits " + shape_str(logits.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= k)
        throw DomainError("softmax_xent: label " + std::to_string(l) + " outside [0," +
                          std::to_string(k) + ")");
    auto probs = std::make_shared<std::vector<T>>(softmax_rows(logits.data(), rows, k));
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* z = logits.data().data() + r * k;
      const T mx = *std::max_element(z, z + k);
      T s = T(0);
      for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
      total += mx + std::log(s) - z[labels[r]];
    }
    Tensor<T> y = make_output({1}, {logits});
    y.data()[0] = total / static_cast<T>(rows);
    finish("softmax_xent", y);
    if (y.requires_grad()) {
      std::vector<int> lab(labels.begin(), labels.end());
      record("softmax_xent", [logits, y, probs, lab, rows, k]() mutable {
        auto gz = logits.grad();
        const T g = y.grad()[0] / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < k; ++j)
            gz[r * k + j] +=
                g * ((*probs)[r * k + j] - (static_cast<int>(j) == lab[r] ? T(1) : T(0)));
      });
    }
    return y;
  }

  // Mean over all elements of (pred - target)^2.
  Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
      throw DomainError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
    const std::size_t n = pred.numel();
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = pred.data()[i] - target.data()[i];
      sum += d * d;
    }
    Tensor<T> y = make_output({1}, {pred, target});
    y.data()[0] = sum / static_cast<T>(n);
    finish("mse", y);
    if (y.requires_grad()) {
      record("mse", [pred, target, y, n]() mutable {
        const T g = y.grad()[0] * T(2) / static_cast<T>(n);
        if (pred.requires_grad()) {
          auto gp = pred.grad();
          for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pred.data()[i] - target.data()[i]);
        }
        if (target.requires_grad()) {
          auto gt = target.grad();
          for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (pred.data()[i] - target.data()[i]);
        }
      });
    }
    return y;
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once.
  void backward(Tensor<T> loss) {
    if (consumed_) throw TapeError("backward called twice on the same tape");
    if (loss.numel() != 1)
      throw DomainError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    nodes_.clear();
  }

  static std::vector<T> softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t k) {
    std::vector<T> out(rows * k);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* z = logits.data() + r * k;
      const T mx = *std::max_element(z, z + k);
      T s = T(0);
      for (std::size_t j = 0; j < k; ++j) s += (out[r * k + j] = std::exp(z[j] - mx));
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= s;
    }
    return out;
  }

 private:
  static constexpr std::size_t kChunk = 8;
  static std::size_t chunks(std::size_t n) { return (n + kChunk - 1) / kChunk; }

  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  Tensor<T> make_output(Shape shape, std::initializer_list<Tensor<T>> inputs) {
    if (consumed_) throw TapeError("recording on a tape that already ran backward");
    bool rg = false;
    if (options_.record)
      for (const auto& in : inputs) rg = rg || in.requires_grad();
    return Tensor<T>::zeros(std::move(shape), rg);
  }

  void finish(const char* op, const Tensor<T>& y) const {
    if (!options_.check_finite) return;
    for (T v : y.data())
      if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }

  void record(const char* op, std::function<void()> fn) { nodes_.push_back({op, std::move(fn)}); }

  static void check_groups(const char* op, const Tensor<T>& x, std::size_t group) {
    if (x.rank() != 2 || group == 0 || x.dim(0) == 0 || x.dim(0) % group != 0)
      throw DomainError(std::string(op) + ": cannot split " + shape_str(x.shape()) +
                        " into groups of " + std::to_string(group));
  }

  TapeOptions options_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Momentum SGD with L2 weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - learning_rate * v
template <typename T>
struct SgdState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::vector<T>> velocity;
};

template <typename T>
void sgd_step(std::span<Tensor<T>> params, SgdState<T>& state) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), T(0));
  }
  if (state.velocity.size() != params.size())
    throw DomainError("sgd_step: parameter count changed between steps");
  const T lr = static_cast<T>(state.learning_rate);
  const T mom = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    auto p = params[i].data();
    if (v.size() != p.size()) throw DomainError("sgd_step: velocity shape mismatch");
    auto g = params[i].grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mom * v[j] + g[j] + wd * p[j];
      p[j] -= lr * v[j];
    }
  }
}

}  // namespace mvter
