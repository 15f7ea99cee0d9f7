#include <cmath>
#include <vector>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"
#include "eigen_maps.hpp"

namespace adma::numerics {

using detail::cmap;
using detail::mmap;
using detail::RowMat;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto p = static_cast<Eigen::Index>(b.dim(1));
  Buffer out(static_cast<std::size_t>(m * p));
  mmap(out.data(), m, p).noalias() = cmap(a.data().data(), m, k) * cmap(b.data().data(), k, p);
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, p](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    auto g = cmap(self.grad.data(), m, p);
    if (na.requires_grad) {
      mmap(na.grad_buffer().data(), m, k).noalias() += g * cmap(nb.data.data(), k, p).transpose();
    }
    if (nb.requires_grad) {
      mmap(nb.grad_buffer().data(), k, p).noalias() += cmap(na.data.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1) || b.rank() != 1) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + ", " + shape_str(w.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto p = static_cast<Eigen::Index>(w.dim(1));
  Buffer out(static_cast<std::size_t>(m * p));
  auto y = mmap(out.data(), m, p);
  y.noalias() = cmap(x.data().data(), m, k) * cmap(w.data().data(), k, p);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), p);
  return make_result("linear", {x.dim(0), w.dim(1)}, std::move(out), {x, w, b}, [m, k, p](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    Node& nb = *self.inputs[2];
    auto g = cmap(self.grad.data(), m, p);
    if (nx.requires_grad) mmap(nx.grad_buffer().data(), m, k).noalias() += g * cmap(nw.data.data(), k, p).transpose();
    if (nw.requires_grad) mmap(nw.grad_buffer().data(), k, p).noalias() += cmap(nx.data.data(), m, k).transpose() * g;
    if (nb.requires_grad) Eigen::Map<Eigen::RowVectorXd>(nb.grad_buffer().data(), p) += g.colwise().sum();
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const auto r = static_cast<Eigen::Index>(a.dim(0));
  const auto c = static_cast<Eigen::Index>(a.dim(1));
  Buffer out(a.numel());
  mmap(out.data(), c, r) = cmap(a.data().data(), r, c).transpose();
  return make_result("transpose", {a.dim(1), a.dim(0)}, std::move(out), {a}, [r, c](Node& self) {
    Node& na = *self.inputs[0];
    mmap(na.grad_buffer().data(), r, c) += cmap(self.grad.data(), c, r).transpose();
  });
}

Tensor multihead_attention(const Tensor& qkv, std::span<const std::size_t> segments, std::size_t heads,
                           AttentionProbe* probe) {
  if (qkv.rank() != 2 || heads == 0 || qkv.dim(1) % (3 * heads) != 0) {
    throw DimensionError("multihead_attention: qkv shape " + shape_str(qkv.shape()) +
                         " is not [R x 3D] with D divisible by " + std::to_string(heads) + " heads");
  }
  std::size_t total = 0;
  for (std::size_t n : segments) total += n;
  if (total != qkv.dim(0)) {
    throw DimensionError("multihead_attention: segments cover " + std::to_string(total) + " rows, qkv has " +
                         std::to_string(qkv.dim(0)));
  }
  const auto rows = static_cast<Eigen::Index>(qkv.dim(0));
  const auto width = static_cast<Eigen::Index>(qkv.dim(1) / 3);
  const auto hd = width / static_cast<Eigen::Index>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  auto x = cmap(qkv.data().data(), rows, 3 * width);
  Buffer out(static_cast<std::size_t>(rows * width));
  auto o = mmap(out.data(), rows, width);

  std::vector<RowMat> probs;
  probs.reserve(segments.size() * heads);
  Eigen::Index offset = 0;
  for (std::size_t n_u : segments) {
    const auto n = static_cast<Eigen::Index>(n_u);
    for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(heads); ++h) {
      auto q = x.block(offset, h * hd, n, hd);
      auto k = x.block(offset, width + h * hd, n, hd);
      auto v = x.block(offset, 2 * width + h * hd, n, hd);
      RowMat s = (q * k.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = s.row(i).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      o.block(offset, h * hd, n, hd).noalias() = s * v;
      if (probe) {
        probe->probs.emplace_back(s.data(), s.data() + s.size());
        probe->sizes.push_back(n_u);
      }
      probs.push_back(std::move(s));
    }
    offset += n;
  }

  std::vector<std::size_t> segs(segments.begin(), segments.end());
  return make_result(
      "multihead_attention", {qkv.dim(0), static_cast<std::size_t>(width)}, std::move(out), {qkv},
      [segs = std::move(segs), probs = std::move(probs), heads, rows, width, hd, inv_sqrt](Node& self) {
        Node& in = *self.inputs[0];
        auto x = cmap(in.data.data(), rows, 3 * width);
        auto gx = mmap(in.grad_buffer().data(), rows, 3 * width);
        auto go = cmap(self.grad.data(), rows, width);
        Eigen::Index offset = 0;
        std::size_t idx = 0;
        for (std::size_t n_u : segs) {
          const auto n = static_cast<Eigen::Index>(n_u);
          for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(heads); ++h, ++idx) {
            const RowMat& p = probs[idx];
            auto q = x.block(offset, h * hd, n, hd);
            auto k = x.block(offset, width + h * hd, n, hd);
            auto v = x.block(offset, 2 * width + h * hd, n, hd);
            auto g = go.block(offset, h * hd, n, hd);
            gx.block(offset, 2 * width + h * hd, n, hd).noalias() += p.transpose() * g;
            RowMat dp = g * v.transpose();
            for (Eigen::Index i = 0; i < n; ++i) {
              const double dot = dp.row(i).dot(p.row(i));
              dp.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
            }
            dp *= inv_sqrt;
            gx.block(offset, h * hd, n, hd).noalias() += dp * k;
            gx.block(offset, width + h * hd, n, hd).noalias() += dp.transpose() * q;
          }
          offset += n;
        }
      });
}

}  // namespace adma::numerics
