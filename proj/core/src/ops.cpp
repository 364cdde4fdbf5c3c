// Copyright 2026 The cuesnn Authors
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

#include "cuesnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

void record(const Tensor& out, GradTape::BackwardFn fn) { GradTape::active()->push(out, std::move(fn)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool tracked = should_track({&a, &b});
  Tensor out = make_result(a.shape(), tracked);
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tracked) {
    record(out, [out, a, b]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool tracked = should_track({&a, &b});
  Tensor out = make_result(a.shape(), tracked);
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (tracked) {
    record(out, [out, a, b]() mutable {
      auto g = out.grad();
      auto x = a.values();
      auto y = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  const bool tracked = should_track({&a});
  Tensor out = make_result(a.shape(), tracked);
  auto o = out.values();
  auto x = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (tracked) {
    record(out, [out, a, factor]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sum(const Tensor& a) {
  const bool tracked = should_track({&a});
  Tensor out = make_result(Shape{1}, tracked);
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  out.values()[0] = acc;
  if (tracked) {
    record(out, [out, a]() mutable {
      const double g = out.grad()[0];
      for (double& v : a.grad_mut()) v += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError(fmt::format("reshape: cannot view {} as {}", shape_str(a.shape()), shape_str(shape)));
  }
  const bool tracked = should_track({&a});
  Tensor out = make_result(std::move(shape), tracked);
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  if (tracked) {
    record(out, [out, a]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError(fmt::format("concat_last: leading axes differ {} vs {}", shape_str(sa), shape_str(sb)));
  }
  const std::size_t na = sa.back();
  const std::size_t nb = sb.back();
  const std::size_t rows = a.numel() / std::max<std::size_t>(na, 1);
  Shape so = sa;
  so.back() = na + nb;
  const bool tracked = should_track({&a, &b});
  Tensor out = make_result(so, tracked);
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + r * na, na, o.begin() + r * (na + nb));
    std::copy_n(y.begin() + r * nb, nb, o.begin() + r * (na + nb) + na);
  }
  if (tracked) {
    record(out, [out, a, b, rows, na, nb]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * (na + nb) + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[r * (na + nb) + na + j];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(fmt::format("matmul: incompatible shapes {} and {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  const bool tracked = should_track({&a, &b});
  Tensor out = make_result(Shape{a.dim(0), b.dim(1)}, tracked);
  MatMap(out.values().data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  if (tracked) {
    record(out, [out, a, b, m, k, n]() mutable {
      ConstMatMap g(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MatMap(a.grad_mut().data(), m, k).noalias() += g * ConstMatMap(b.values().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MatMap(b.grad_mut().data(), k, n).noalias() += ConstMatMap(a.values().data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0)) {
    throw DimensionError(fmt::format("linear: input {} does not match weight {}", shape_str(x.shape()),
                                     shape_str(weight.shape())));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(1))) {
    throw DimensionError(fmt::format("linear: bias {} does not match weight {}", shape_str(bias.shape()),
                                     shape_str(weight.shape())));
  }
  const auto in = static_cast<Eigen::Index>(weight.dim(0));
  const auto outw = static_cast<Eigen::Index>(weight.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / weight.dim(0));
  Shape so = x.shape();
  so.back() = weight.dim(1);
  const bool tracked = should_track({&x, &weight, has_bias ? &bias : nullptr});
  Tensor out = make_result(so, tracked);
  MatMap y(out.values().data(), rows, outw);
  y.noalias() = ConstMatMap(x.values().data(), rows, in) * ConstMatMap(weight.values().data(), in, outw);
  if (has_bias) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.values().data(), outw);
    y.rowwise() += bv;
  }
  if (tracked) {
    record(out, [out, x, weight, bias, has_bias, in, outw, rows]() mutable {
      ConstMatMap g(out.grad().data(), rows, outw);
      if (x.requires_grad()) {
        MatMap(x.grad_mut().data(), rows, in).noalias() +=
            g * ConstMatMap(weight.values().data(), in, outw).transpose();
      }
      if (weight.requires_grad()) {
        MatMap(weight.grad_mut().data(), in, outw).noalias() +=
            ConstMatMap(x.values().data(), rows, in).transpose() * g;
      }
      if (has_bias && bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd>(bias.grad_mut().data(), outw) += g.colwise().sum();
      }
    });
  }
  return out;
}

namespace {

struct ConvDims {
  std::size_t n, h, w, cin, k, cout, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, const Conv2dGeometry& geom) {
  const std::size_t r = x.rank();
  if (r < 4 || weight.rank() != 4 || weight.dim(0) != geom.kernel || weight.dim(1) != geom.kernel ||
      weight.dim(2) != x.dim(r - 1)) {
    throw DimensionError(fmt::format("conv2d: input {} does not match weight {} (kernel {})", shape_str(x.shape()),
                                     shape_str(weight.shape()), geom.kernel));
  }
  const std::size_t h = x.dim(r - 3);
  const std::size_t w = x.dim(r - 2);
  const std::size_t c = x.dim(r - 1);
  if (geom.stride == 0 || h + 2 * geom.padding < geom.kernel || w + 2 * geom.padding < geom.kernel) {
    throw DimensionError(fmt::format("conv2d: spatial size {}x{} too small for kernel {} padding {}", h, w,
                                     geom.kernel, geom.padding));
  }
  return ConvDims{x.numel() / (h * w * c), h, w, c, geom.kernel, weight.dim(3), geom.out_extent(h), geom.out_extent(w)};
}

// Calls fn(out_offset, in_offset, weight_offset) for every in-bounds
// (output pixel, kernel tap) pair of image n. Offsets point at the start of
// the channel vectors.
template <typename Fn>
void for_each_tap(const ConvDims& d, const Conv2dGeometry& g, std::size_t n, Fn&& fn) {
  for (std::size_t oy = 0; oy < d.ho; ++oy) {
    for (std::size_t ox = 0; ox < d.wo; ++ox) {
      const std::size_t out_off = ((n * d.ho + oy) * d.wo + ox) * d.cout;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
          const std::size_t in_off = ((n * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)) * d.cin;
          const std::size_t w_off = (ky * d.k + kx) * d.cin * d.cout;
          fn(out_off, in_off, w_off);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& geom) {
  const ConvDims d = conv_dims(x, weight, geom);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
    throw DimensionError(fmt::format("conv2d: bias {} does not match {} output channels", shape_str(bias.shape()), d.cout));
  }
  const bool tracked = should_track({&x, &weight, has_bias ? &bias : nullptr});
  Shape so(x.shape().begin(), x.shape().end() - 3);
  so.insert(so.end(), {d.ho, d.wo, d.cout});
  Tensor out = make_result(std::move(so), tracked);
  auto o = out.values();
  auto xv = x.values();
  auto wv = weight.values();
  if (has_bias) {
    auto bv = bias.values();
    for (std::size_t p = 0; p < o.size(); p += d.cout) std::copy(bv.begin(), bv.end(), o.begin() + p);
  }
  for (std::size_t n = 0; n < d.n; ++n) {
    for_each_tap(d, geom, n, [&](std::size_t oo, std::size_t io, std::size_t wo) {
      double* acc = o.data() + oo;
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double v = xv[io + ci];
        if (v == 0.0) continue;
        const double* wp = wv.data() + wo + ci * d.cout;
        if (v == 1.0) {
          for (std::size_t co = 0; co < d.cout; ++co) acc[co] += wp[co];
        } else {
          for (std::size_t co = 0; co < d.cout; ++co) acc[co] += v * wp[co];
        }
      }
    });
  }
  if (tracked) {
    record(out, [out, x, weight, bias, has_bias, d, geom]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      auto wv = weight.values();
      const bool need_x = x.requires_grad();
      const bool need_w = weight.requires_grad();
      std::span<double> gx = need_x ? x.grad_mut() : std::span<double>{};
      std::span<double> gw = need_w ? weight.grad_mut() : std::span<double>{};
      for (std::size_t n = 0; n < d.n; ++n) {
        for_each_tap(d, geom, n, [&](std::size_t oo, std::size_t io, std::size_t wo) {
          const double* go = g.data() + oo;
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const double* wp = wv.data() + wo + ci * d.cout;
            if (need_x) {
              double s = 0.0;
              for (std::size_t co = 0; co < d.cout; ++co) s += wp[co] * go[co];
              gx[io + ci] += s;
            }
            const double v = xv[io + ci];
            if (need_w && v != 0.0) {
              double* gwp = gw.data() + wo + ci * d.cout;
              for (std::size_t co = 0; co < d.cout; ++co) gwp[co] += v * go[co];
            }
          }
        });
      }
      if (has_bias && bias.requires_grad()) {
        auto gb = bias.grad_mut();
        for (std::size_t p = 0; p < g.size(); p += d.cout)
          for (std::size_t co = 0; co < d.cout; ++co) gb[co] += g[p + co];
      }
    });
  }
  return out;
}

std::size_t conv2d_active_synapses(const Tensor& x, std::size_t out_channels, const Conv2dGeometry& geom) {
  const std::size_t r = x.rank();
  if (r < 4) throw DimensionError("conv2d_active_synapses: expected [..., H, W, C] input");
  const std::size_t h = x.dim(r - 3);
  const std::size_t w = x.dim(r - 2);
  const std::size_t c = x.dim(r - 1);
  const std::size_t ho = geom.out_extent(h);
  const std::size_t wo = geom.out_extent(w);
  // Number of output positions along one axis that tap input coordinate i.
  auto reach = [&](std::size_t i, std::size_t out_extent) {
    std::size_t count = 0;
    for (std::size_t k = 0; k < geom.kernel; ++k) {
      const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(i + geom.padding) - static_cast<std::ptrdiff_t>(k);
      if (num < 0 || num % static_cast<std::ptrdiff_t>(geom.stride) != 0) continue;
      if (static_cast<std::size_t>(num) / geom.stride < out_extent) ++count;
    }
    return count;
  };
  std::vector<std::size_t> ry(h), rx(w);
  for (std::size_t i = 0; i < h; ++i) ry[i] = reach(i, ho);
  for (std::size_t i = 0; i < w; ++i) rx[i] = reach(i, wo);
  auto xv = x.values();
  std::size_t total = 0;
  const std::size_t images = x.numel() / (h * w * c);
  for (std::size_t n = 0; n < images; ++n)
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < w; ++ix)
        for (std::size_t ci = 0; ci < c; ++ci)
          if (xv[((n * h + iy) * w + ix) * c + ci] != 0.0) total += ry[iy] * rx[ix];
  return total * out_channels;
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  const std::size_t r = x.rank();
  if (r < 4 || k == 0 || x.dim(r - 3) < k || x.dim(r - 2) < k) {
    throw DimensionError(fmt::format("max_pool2d: cannot pool {} by {}", shape_str(x.shape()), k));
  }
  const std::size_t h = x.dim(r - 3), w = x.dim(r - 2), c = x.dim(r - 1);
  const std::size_t n = x.numel() / (h * w * c);
  const std::size_t ho = h / k, wo = w / k;
  const bool tracked = should_track({&x});
  Shape so(x.shape().begin(), x.shape().end() - 3);
  so.insert(so.end(), {ho, wo, c});
  Tensor out = make_result(std::move(so), tracked);
  std::vector<std::size_t> argmax(out.numel());
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t ci = 0; ci < c; ++ci) {
          const std::size_t oi = ((b * ho + oy) * wo + ox) * c + ci;
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::size_t ii = ((b * h + oy * k + dy) * w + ox * k + dx) * c + ci;
              if (xv[ii] > best) {
                best = xv[ii];
                best_i = ii;
              }
            }
          o[oi] = best;
          argmax[oi] = best_i;
        }
  if (tracked) {
    record(out, [out, x, argmax = std::move(argmax)]() mutable {
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 4) throw DimensionError(fmt::format("global_avg_pool: expected [..., H, W, C], got {}", shape_str(x.shape())));
  const std::size_t hw = x.dim(r - 3) * x.dim(r - 2), c = x.dim(r - 1);
  const std::size_t n = x.numel() / (hw * c);
  const bool tracked = should_track({&x});
  Shape so(x.shape().begin(), x.shape().end() - 3);
  so.push_back(c);
  Tensor out = make_result(std::move(so), tracked);
  auto xv = x.values();
  auto o = out.values();
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ci = 0; ci < c; ++ci) o[b * c + ci] += xv[(b * hw + p) * c + ci];
  for (double& v : o) v *= inv;
  if (tracked) {
    record(out, [out, x, n, hw, c, inv]() mutable {
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ci = 0; ci < c; ++ci) gx[(b * hw + p) * c + ci] += g[b * c + ci] * inv;
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training) {
  if (x.rank() == 0) throw DimensionError("batch_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    throw DimensionError(fmt::format("batch_norm: {} channels but parameters sized {}", c, gamma.numel()));
  }
  const std::size_t rows = x.numel() / c;
  auto xv = x.values();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (training) {
    if (rows < 2) throw DimensionError("batch_norm: training mode needs at least two values per channel");
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double dlt = xv[r * c + j] - mean[j];
        var[j] += dlt * dlt;
      }
    auto rm = stats.running_mean.values();
    auto rv = stats.running_var.values();
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(rows);
      inv_std[j] = 1.0 / std::sqrt(var[j] + stats.eps);
      rm[j] = (1.0 - stats.momentum) * rm[j] + stats.momentum * mean[j];
      rv[j] = (1.0 - stats.momentum) * rv[j] + stats.momentum * var[j] * unbias;
    }
  } else {
    auto rm = stats.running_mean.values();
    auto rv = stats.running_var.values();
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + stats.eps);
    }
  }

  const bool tracked = should_track({&x, &gamma, &beta});
  Tensor out = make_result(x.shape(), tracked);
  auto o = out.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> xhat(tracked ? x.numel() : 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mean[j]) * inv_std[j];
      if (tracked) xhat[r * c + j] = h;
      o[r * c + j] = gv[j] * h + bv[j];
    }
  if (tracked) {
    record(out, [out, x, gamma, beta, training, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      auto g = out.grad();
      auto gv = gamma.values();
      std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          sum_g[j] += g[r * c + j];
          sum_gx[j] += g[r * c + j] * xhat[r * c + j];
        }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_mut();
        for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_mut();
        for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad_mut();
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            if (training) {
              gx[i] += gv[j] * inv_std[j] * (g[i] - inv_n * sum_g[j] - xhat[i] * inv_n * sum_gx[j]);
            } else {
              gx[i] += gv[j] * inv_std[j] * g[i];
            }
          }
      }
    });
  }
  return out;
}

Tensor time_mean(const Tensor& x) {
  if (x.rank() < 2 || x.dim(0) == 0) throw DimensionError(fmt::format("time_mean: expected [T, ...], got {}", shape_str(x.shape())));
  const std::size_t t_steps = x.dim(0);
  const std::size_t per = x.numel() / t_steps;
  Shape so(x.shape().begin() + 1, x.shape().end());
  const bool tracked = should_track({&x});
  Tensor out = make_result(so, tracked);
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < per; ++i) o[i] += xv[t * per + i];
  const double inv = 1.0 / static_cast<double>(t_steps);
  for (double& v : o) v *= inv;
  if (tracked) {
    record(out, [out, x, t_steps, per, inv]() mutable {
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t t = 0; t < t_steps; ++t)
        for (std::size_t i = 0; i < per; ++i) gx[t * per + i] += g[i] * inv;
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError(fmt::format("cross_entropy: logits {} for {} labels", shape_str(logits.shape()), labels.size()));
  }
  const std::size_t b = logits.dim(0);
  const std::size_t c = logits.dim(1);
  auto lv = logits.values();
  for (std::size_t i = 0; i < lv.size(); ++i) {
    if (!std::isfinite(lv[i])) {
      throw NumericError(fmt::format("cross_entropy: non-finite logit {} at sample {}, class {}", lv[i], i / c, i % c));
    }
  }
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw ContractError(fmt::format("cross_entropy: label {} outside [0, {})", labels[r], c));
    }
    const double* row = lv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[r]] - mx - std::log(z));
  }
  loss /= static_cast<double>(b);
  const bool tracked = should_track({&logits});
  Tensor out = make_result(Shape{1}, tracked);
  out.values()[0] = loss;
  if (tracked) {
    std::vector<int> ys(labels.begin(), labels.end());
    record(out, [out, logits, b, c, probs = std::move(probs), ys = std::move(ys)]() mutable {
      const double g = out.grad()[0] / static_cast<double>(b);
      auto gl = logits.grad_mut();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<int>(j) == ys[r] ? 1.0 : 0.0;
          gl[r * c + j] += g * (probs[r * c + j] - onehot);
        }
    });
  }
  return out;
}

}  // namespace cuesnn
