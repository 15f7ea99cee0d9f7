#include <cmath>
#include <numeric>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"

namespace adma::numerics {

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Buffer y(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(y), {a},
                     [](Node& self) { accumulate_grad(*self.inputs[0], self.grad); });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r) {
      throw DimensionError("concat_cols: part of shape " + shape_str(p.shape()) + " does not have " +
                           std::to_string(r) + " rows");
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer y(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(x.data() + i * w, w, y.data() + i * total + off);
    }
    off += w;
  }
  return make_result("concat_cols", {r, total}, std::move(y), parts,
                     [r, total, widths = std::move(widths)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         Node& in = *self.inputs[k];
                         const std::size_t w = widths[k];
                         if (in.requires_grad) {
                           auto& g = in.grad_buffer();
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + off + j];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c) {
      throw DimensionError("concat_rows: part of shape " + shape_str(p.shape()) + " does not have " +
                           std::to_string(c) + " columns");
    }
    heights.push_back(p.rows());
    total += p.rows();
  }
  Buffer y;
  y.reserve(total * c);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return make_result("concat_rows", {total, c}, std::move(y), parts,
                     [c, heights = std::move(heights)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         const std::size_t n = heights[k] * c;
                         accumulate_grad(*self.inputs[k], std::span<const double>(self.grad).subspan(off, n));
                         off += n;
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const std::size_t w = end - begin;
  Buffer y(r * w);
  const auto& x = a.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data() + i * c + begin, w, y.data() + i * w);
  return make_result("slice_cols", {r, w}, std::move(y), {a}, [r, c, w, begin](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  Buffer y(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                        a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return make_result("slice_rows", {end - begin, c}, std::move(y), {a}, [begin, c](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const std::size_t v = table.dim(0);
  const std::size_t c = table.dim(1);
  Buffer y(ids.size() * c);
  const auto& x = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw DomainError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " + std::to_string(v) +
                        " rows");
    }
    std::copy_n(x.data() + ids[i] * c, c, y.data() + i * c);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result("gather_rows", {ids.size(), c}, std::move(y), {table}, [c, idx = std::move(idx)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad_left,
                   std::size_t pad_right) {
  if (x.rank() != 2 || kernel == 0 || stride == 0) {
    throw DimensionError("unfold_time: invalid arguments for shape " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t padded = n + pad_left + pad_right;
  if (padded < kernel) {
    throw DimensionError("unfold_time: sequence of " + std::to_string(n) + " frames is shorter than kernel " +
                         std::to_string(kernel));
  }
  const std::size_t n_out = (padded - kernel) / stride + 1;
  const std::size_t width = kernel * c;
  Buffer y(n_out * width, 0.0);
  const auto& d = x.data();
  for (std::size_t t = 0; t < n_out; ++t) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      std::copy_n(d.data() + static_cast<std::size_t>(src) * c, c, y.data() + t * width + j * c);
    }
  }
  return make_result("unfold_time", {n_out, width}, std::move(y), {x},
                     [n, c, n_out, kernel, stride, pad_left, width](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t t = 0; t < n_out; ++t) {
                         for (std::size_t j = 0; j < kernel; ++j) {
                           const auto src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                            static_cast<std::ptrdiff_t>(pad_left);
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                           for (std::size_t k = 0; k < c; ++k) {
                             g[static_cast<std::size_t>(src) * c + k] += self.grad[t * width + j * c + k];
                           }
                         }
                       }
                     });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel, std::size_t stride,
              std::size_t pad_left, std::size_t pad_right) {
  if (weight.rank() != 2 || weight.dim(0) != kernel * x.cols()) {
    throw DimensionError("conv1d: weight " + shape_str(weight.shape()) + " does not match kernel " +
                         std::to_string(kernel) + " over input " + shape_str(x.shape()));
  }
  Tensor y = matmul(unfold_time(x, kernel, stride, pad_left, pad_right), weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, std::span<const std::size_t> segments) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) || weight.dim(0) % 2 == 0) {
    throw DimensionError("depthwise_conv1d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()) + " (need [odd kernel x C])");
  }
  if (std::accumulate(segments.begin(), segments.end(), std::size_t{0}) != x.dim(0)) {
    throw DimensionError("depthwise_conv1d: segments do not cover the " + std::to_string(x.dim(0)) + " input rows");
  }
  const std::size_t c = x.dim(1);
  const auto k = static_cast<std::ptrdiff_t>(weight.dim(0));
  const std::ptrdiff_t pad = k / 2;
  const auto& xd = x.data();
  const auto& wd = weight.data();
  Buffer y(x.numel(), 0.0);
  std::vector<std::size_t> segs(segments.begin(), segments.end());
  auto visit = [segs = std::move(segs), k, pad](auto&& fn) {
    std::size_t off = 0;
    for (std::size_t len : segs) {
      const auto n = static_cast<std::ptrdiff_t>(len);
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        for (std::ptrdiff_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = t + j - pad;
          if (src < 0 || src >= n) continue;
          fn(off + static_cast<std::size_t>(t), off + static_cast<std::size_t>(src), static_cast<std::size_t>(j));
        }
      }
      off += len;
    }
  };
  visit([&](std::size_t out_row, std::size_t in_row, std::size_t j) {
    for (std::size_t ch = 0; ch < c; ++ch) y[out_row * c + ch] += xd[in_row * c + ch] * wd[j * c + ch];
  });
  return make_result("depthwise_conv1d", x.shape(), std::move(y), {x, weight},
                     [visit, c](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node& nw = *self.inputs[1];
                       double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
                       double* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
                       const auto& xd = nx.data;
                       const auto& wd = nw.data;
                       const auto& g = self.grad;
                       visit([&](std::size_t out_row, std::size_t in_row, std::size_t j) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const double go = g[out_row * c + ch];
                           if (gx) gx[in_row * c + ch] += go * wd[j * c + ch];
                           if (gw) gw[j * c + ch] += go * xd[in_row * c + ch];
                         }
                       });
                     });
}

Tensor sinusoidal_features(const Tensor& t, std::size_t dim, double scale, double max_period) {
  if (dim == 0 || dim % 2 != 0) throw DimensionError("sinusoidal_features: dim must be even and positive");
  if (!(t.rank() == 1 || (t.rank() == 2 && t.dim(1) == 1))) {
    throw DimensionError("sinusoidal_features: t must be [B] or [B x 1], got " + shape_str(t.shape()));
  }
  const std::size_t b = t.dim(0);
  const std::size_t half = dim / 2;
  Buffer freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    freq[i] = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
  }
  Buffer y(b * dim);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double arg = scale * t[r] * freq[i];
      y[r * dim + i] = std::sin(arg);
      y[r * dim + half + i] = std::cos(arg);
    }
  }
  return make_result("sinusoidal_features", {b, dim}, std::move(y), {t},
                     [b, dim, half, scale, freq = std::move(freq)](Node& self) {
                       Node& nt = *self.inputs[0];
                       auto& gt = nt.grad_buffer();
                       for (std::size_t r = 0; r < b; ++r) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < half; ++i) {
                           const double w = scale * freq[i];
                           const double s = self.data[r * dim + i];
                           const double co = self.data[r * dim + half + i];
                           acc += self.grad[r * dim + i] * co * w - self.grad[r * dim + half + i] * s * w;
                         }
                         gt[r] += acc;
                       }
                     });
}

}  // namespace adma::numerics
