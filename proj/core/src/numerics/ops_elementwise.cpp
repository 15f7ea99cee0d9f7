#include <algorithm>
#include <cmath>
#include <sstream>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"
#include "eigen_maps.hpp"

namespace adma::numerics {

namespace {

// Per-dimension strides of an operand inside the broadcast output (0 where it repeats).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t src = in.size() - 1 - i;
    const std::size_t dst = out.size() - 1 - i;
    strides[dst] = in[src] == 1 ? 0 : stride;
    stride *= in[src];
  }
  return strides;
}

BroadcastPlan plan_for(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  plan.stride_a = aligned_strides(a, plan.out);
  plan.stride_b = aligned_strides(b, plan.out);
  return plan;
}

// Calls fn(out_index, a_index, b_index) for every output element in row-major order.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out.size();
  const std::size_t inner = plan.out.back();
  const std::size_t sa = plan.stride_a.back();
  const std::size_t sb = plan.stride_b.back();
  const std::size_t outer = shape_numel(plan.out) / inner;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t base_a = 0;
  std::size_t base_b = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t out_base = o * inner;
    for (std::size_t j = 0; j < inner; ++j) fn(out_base + j, base_a + j * sa, base_b + j * sb);
    // Advance the odometer over all but the last dimension.
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      base_a += plan.stride_a[d];
      base_b += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      base_a -= plan.stride_a[d] * idx[d];
      base_b -= plan.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// tanh(sqrt(2/pi) (x + 0.044715 x^3)) through the vectorised exponential.
void gelu_tanh_terms(const double* x, double* th, std::size_t n) {
  using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
  const auto xs = Eigen::Map<const Arr>(x, static_cast<Eigen::Index>(n));
  const Arr u = kGeluTanhScale * (xs + kGeluCubic * xs.cube());
  const Arr e = (2.0 * u.min(40.0).max(-40.0)).exp();
  Eigen::Map<Arr>(th, static_cast<Eigen::Index>(n)) = 1.0 - 2.0 / (e + 1.0);
}

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "binary";
}

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::relu: return "relu";
    case UnaryOp::gelu: return "gelu";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::silu: return "silu";
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::log_sigmoid: return "log_sigmoid";
    case UnaryOp::abs: return "abs";
    case UnaryOp::square: return "square";
  }
  return "unary";
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const auto plan = plan_for(a.shape(), b.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  Buffer out(shape_numel(plan.out));
  if (da.size() == out.size() && db.size() == out.size() && op != BinaryOp::div) {
    const std::size_t n = out.size();
    switch (op) {
      case BinaryOp::add:
        for (std::size_t i = 0; i < n; ++i) out[i] = da[i] + db[i];
        break;
      case BinaryOp::sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = da[i] - db[i];
        break;
      default:
        for (std::size_t i = 0; i < n; ++i) out[i] = da[i] * db[i];
        break;
    }
  } else {
    switch (op) {
      case BinaryOp::add:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] + db[j]; });
        break;
      case BinaryOp::sub:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] - db[j]; });
        break;
      case BinaryOp::mul:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] * db[j]; });
        break;
      case BinaryOp::div:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (db[j] == 0.0) throw DomainError("div: division by zero");
          out[o] = da[i] / db[j];
        });
        break;
    }
  }
  Shape shape = plan.out;
  return make_result(binary_name(op), std::move(shape), std::move(out), {a, b}, [op, plan](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double* g = self.grad.data();
    double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    const double* xa = na.data.data();
    const double* xb = nb.data.data();
    const std::size_t n = self.data.size();
    if (na.data.size() == n && nb.data.size() == n) {
      switch (op) {
        case BinaryOp::add:
          if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
          break;
        case BinaryOp::sub:
          if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
          break;
        case BinaryOp::mul:
          if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * xb[i];
          if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * xa[i];
          break;
        case BinaryOp::div:
          if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / xb[i];
          if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
          break;
      }
      return;
    }
    switch (op) {
      case BinaryOp::add:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (ga) ga[i] += g[o];
          if (gb) gb[j] += g[o];
        });
        break;
      case BinaryOp::sub:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (ga) ga[i] += g[o];
          if (gb) gb[j] -= g[o];
        });
        break;
      case BinaryOp::mul:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (ga) ga[i] += g[o] * xb[j];
          if (gb) gb[j] += g[o] * xa[i];
        });
        break;
      case BinaryOp::div:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (ga) ga[i] += g[o] / xb[j];
          if (gb) gb[j] -= g[o] * xa[i] / (xb[j] * xb[j]);
        });
        break;
    }
  });
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  const auto& x = a.data();
  const std::size_t n = x.size();
  Buffer y(n);
  Buffer cache;  // tanh terms of gelu, reused by the backward pass
  switch (op) {
    case UnaryOp::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case UnaryOp::gelu:
      cache.resize(n);
      gelu_tanh_terms(x.data(), cache.data(), n);
      for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * x[i] * (1.0 + cache[i]);
      if (!grad_enabled() || !a.requires_grad()) cache.clear();
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) {
          std::ostringstream os;
          os << "log: argument " << x[i] << " at index " << i << " is not positive";
          throw DomainError(os.str());
        }
        y[i] = std::log(x[i]);
      }
      break;
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case UnaryOp::silu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * stable_sigmoid(x[i]);
      break;
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case UnaryOp::log_sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::min(x[i], 0.0) - std::log1p(std::exp(-std::abs(x[i])));
      break;
    case UnaryOp::abs:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::abs(x[i]);
      break;
    case UnaryOp::square:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * x[i];
      break;
  }
  Shape shape = a.shape();
  return make_result(unary_name(op), std::move(shape), std::move(y), {a}, [op, cache = std::move(cache)](Node& self) {
    Node& in = *self.inputs[0];
    auto& gx = in.grad_buffer();
    const auto& x = in.data;
    const auto& y = self.data;
    const auto& g = self.grad;
    const std::size_t n = x.size();
    switch (op) {
      case UnaryOp::relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      case UnaryOp::gelu:
        for (std::size_t i = 0; i < n; ++i) {
          const double th = cache[i];
          const double du = kGeluTanhScale * (1.0 + 3.0 * kGeluCubic * x[i] * x[i]);
          gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du);
        }
        break;
      case UnaryOp::exp:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
        break;
      case UnaryOp::log:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / x[i];
        break;
      case UnaryOp::tanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case UnaryOp::silu:
        for (std::size_t i = 0; i < n; ++i) {
          const double s = stable_sigmoid(x[i]);
          gx[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
        break;
      case UnaryOp::sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case UnaryOp::log_sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * stable_sigmoid(-x[i]);
        break;
      case UnaryOp::abs:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
        break;
      case UnaryOp::square:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * 2.0 * x[i];
        break;
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer y(a.data().begin(), a.data().end());
  for (double& v : y) v *= factor;
  Shape shape = a.shape();
  return make_result("scale", std::move(shape), std::move(y), {a}, [factor](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  Buffer y(a.data().begin(), a.data().end());
  for (double& v : y) v += value;
  Shape shape = a.shape();
  return make_result("add_scalar", std::move(shape), std::move(y), {a},
                     [](Node& self) { accumulate_grad(*self.inputs[0], self.grad); });
}

Tensor add_n(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  const Shape& shape = terms.front().shape();
  Buffer y(terms.front().data().begin(), terms.front().data().end());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    if (terms[t].shape() != shape) {
      throw DimensionError("add_n: shape " + shape_str(terms[t].shape()) + " differs from " + shape_str(shape));
    }
    const auto& d = terms[t].data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += d[i];
  }
  return make_result("add_n", shape, std::move(y), terms, [](Node& self) {
    for (auto& in : self.inputs) accumulate_grad(*in, self.grad);
  });
}

}  // namespace adma::numerics
