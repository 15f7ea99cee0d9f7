#include <algorithm>
#include <cmath>
#include <limits>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"

namespace adma::numerics {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {1}, {total}, {a}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : gx) v += g;
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return make_result("mean", {1}, {total * inv}, {a}, [inv](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const double g = self.grad[0] * inv;
    for (double& v : gx) v += g;
  });
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  Buffer y(r, 0.0);
  const auto& x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[i] += x[i * c + j];
  }
  return make_result("sum_rows", {r}, std::move(y), {a}, [r, c](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[i];
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "log_softmax");
  const auto& x = a.data();
  Buffer y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(x[base + k * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] = x[base + k * s.inner] - lz;
    }
  }
  Shape shape = a.shape();
  return make_result("log_softmax", std::move(shape), std::move(y), {a}, [s](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double gs = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) gs += g[base + k * s.inner];
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t i = base + k * s.inner;
          gx[i] += g[i] - std::exp(y[i]) * gs;
        }
      }
    }
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto s = split_axis(a.shape(), axis, "softmax");
  const auto& x = a.data();
  Buffer y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] /= z;
    }
  }
  Shape shape = a.shape();
  return make_result("softmax", std::move(shape), std::move(y), {a}, [s](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t i = base + k * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const auto& x = a.data();
  Buffer y(x.size());
  Buffer inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = (row[j] - mu) * inv_std[i];
  }
  Shape shape = a.shape();
  return make_result("layer_norm_rows", std::move(shape), std::move(y), {a},
                     [r, c, inv_std = std::move(inv_std)](Node& self) {
                       auto& gx = self.inputs[0]->grad_buffer();
                       const auto& y = self.data;
                       const auto& g = self.grad;
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t i = 0; i < r; ++i) {
                         double gm = 0.0;
                         double gym = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           gm += g[i * c + j];
                           gym += g[i * c + j] * y[i * c + j];
                         }
                         gm *= inv_c;
                         gym *= inv_c;
                         for (std::size_t j = 0; j < c; ++j) {
                           gx[i * c + j] += inv_std[i] * (g[i * c + j] - gm - y[i * c + j] * gym);
                         }
                       }
                     });
}

Tensor row_cosine(const Tensor& a, const Tensor& b, double eps) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("row_cosine: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " must be equal rank-2");
  }
  if (eps < 0.0) throw DomainError("row_cosine: eps must be non-negative");
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const auto& xa = a.data();
  const auto& xb = b.data();
  Buffer y(r);
  Buffer na(r), nb(r);
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += xa[i * c + j] * xb[i * c + j];
      sa += xa[i * c + j] * xa[i * c + j];
      sb += xb[i * c + j] * xb[i * c + j];
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    const double da = std::max(na[i], eps);
    const double db = std::max(nb[i], eps);
    if (da == 0.0 || db == 0.0) {
      throw DomainError("row_cosine: row " + std::to_string(i) + " has zero norm and the eps guard is disabled");
    }
    y[i] = std::clamp(dot / (da * db), -1.0, 1.0);
  }
  return make_result("row_cosine", {r}, std::move(y), {a, b},
                     [r, c, eps, na = std::move(na), nb = std::move(nb)](Node& self) {
                       Node& in_a = *self.inputs[0];
                       Node& in_b = *self.inputs[1];
                       const auto& xa = in_a.data;
                       const auto& xb = in_b.data;
                       for (std::size_t i = 0; i < r; ++i) {
                         const double g = self.grad[i];
                         const double cs = self.data[i];
                         const double da = std::max(na[i], eps);
                         const double db = std::max(nb[i], eps);
                         // The clamped branch has a constant denominator, so only the dot term survives.
                         const bool a_live = na[i] > eps;
                         const bool b_live = nb[i] > eps;
                         if (in_a.requires_grad) {
                           auto& ga = in_a.grad_buffer();
                           for (std::size_t j = 0; j < c; ++j) {
                             double d = xb[i * c + j] / (da * db);
                             if (a_live) d -= cs * xa[i * c + j] / (na[i] * na[i]);
                             ga[i * c + j] += g * d;
                           }
                         }
                         if (in_b.requires_grad) {
                           auto& gb = in_b.grad_buffer();
                           for (std::size_t j = 0; j < c; ++j) {
                             double d = xa[i * c + j] / (da * db);
                             if (b_live) d -= cs * xb[i * c + j] / (nb[i] * nb[i]);
                             gb[i * c + j] += g * d;
                           }
                         }
                       }
                     });
}

}  // namespace adma::numerics
