#include "ove6d/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "ove6d/error.hpp"

namespace ove6d::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Upper bound on im2col columns per GEMM; small maps are batched across images up to this width.
constexpr int kTargetColumns = 8192;
constexpr double kCosFloor = 1e-12;

template <typename T>
int emit(Tape<T>& tape, Tensor<T> out, bool needs_grad, std::function<void(Tape<T>&, int)> fn, const char* name) {
  out.check_finite(name);
  return tape.push(std::move(out), needs_grad, std::move(fn));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

void require_rank(const std::vector<int>& shape, int rank, const char* op) {
  require(static_cast<int>(shape.size()) == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(shape));
}

struct ConvGeom {
  int n, c, h, w, o, k, pad, stride, ho, wo;
  int rows() const { return c * k * k; }
  int hw_out() const { return ho * wo; }
};

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col, int ld, int col_off) {
  for (int c = 0; c < g.c; ++c)
    for (int kh = 0; kh < g.k; ++kh)
      for (int kw = 0; kw < g.k; ++kw) {
        T* dst = col + static_cast<std::ptrdiff_t>((c * g.k + kh) * g.k + kw) * ld + col_off;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + kh - g.pad;
          T* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::ptrdiff_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kw - g.pad;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* img, int ld, int col_off) {
  for (int c = 0; c < g.c; ++c)
    for (int kh = 0; kh < g.k; ++kh)
      for (int kw = 0; kw < g.k; ++kw) {
        const T* src = col + static_cast<std::ptrdiff_t>((c * g.k + kh) * g.k + kw) * ld + col_off;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + kh - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (static_cast<std::ptrdiff_t>(c) * g.h + iy) * g.w;
          const T* row = src + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kw - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
          }
        }
      }
}

}  // namespace

double kaiming_uniform_bound(int fan_in) { return std::sqrt(6.0 / std::max(1, fan_in)); }

template <typename T>
int conv2d(Tape<T>& tape, int x, int weight, int bias, int stride) {
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(weight).shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  require(ws[1] == xs[1], "conv2d: channel mismatch (input " + std::to_string(xs[1]) + ", kernel " +
                              std::to_string(ws[1]) + ")");
  require(ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d: kernel must be square and odd");
  require(stride >= 1, "conv2d: stride must be positive");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[2] / 2, stride, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  if (bias >= 0) require(static_cast<int>(tape.value(bias).size()) == g.o, "conv2d: bias size mismatch");

  const int hw = g.hw_out();
  const int chunk = std::clamp(kTargetColumns / std::max(1, hw), 1, g.n);
  Tensor<T> out({g.n, g.o, g.ho, g.wo});
  {
    const T* xd = tape.value(x).data();
    CMapMat<T> wm(tape.value(weight).data(), g.o, g.rows());
    std::vector<T> col(static_cast<std::size_t>(g.rows()) * chunk * hw);
    RowMat<T> y;
    for (int n0 = 0; n0 < g.n; n0 += chunk) {
      const int nb = std::min(chunk, g.n - n0);
      const int cols = nb * hw;
      for (int i = 0; i < nb; ++i)
        im2col(xd + static_cast<std::ptrdiff_t>(n0 + i) * g.c * g.h * g.w, g, col.data(), cols, i * hw);
      y.noalias() = wm * CMapMat<T>(col.data(), g.rows(), cols);
      for (int i = 0; i < nb; ++i)
        for (int o = 0; o < g.o; ++o) {
          T* dst = out.data() + (static_cast<std::ptrdiff_t>(n0 + i) * g.o + o) * hw;
          const T b = bias >= 0 ? tape.value(bias)[o] : T(0);
          const T* src = y.data() + static_cast<std::ptrdiff_t>(o) * cols + i * hw;
          for (int p = 0; p < hw; ++p) dst[p] = src[p] + b;
        }
    }
  }
  const bool needs = tape.needs_grad(x) || tape.needs_grad(weight) || (bias >= 0 && tape.needs_grad(bias));
  return emit<T>(
      tape, std::move(out), needs,
      [x, weight, bias, g, chunk](Tape<T>& t, int self) {
        const int hw = g.hw_out();
        const Tensor<T>& gout = t.grad(self);
        const bool gx = t.needs_grad(x), gw = t.needs_grad(weight), gb = bias >= 0 && t.needs_grad(bias);
        CMapMat<T> wm(t.value(weight).data(), g.o, g.rows());
        RowMat<T> dw_acc = RowMat<T>::Zero(g.o, g.rows());
        std::vector<T> col(static_cast<std::size_t>(g.rows()) * chunk * hw);
        RowMat<T> dy, dcol;
        for (int n0 = 0; n0 < g.n; n0 += chunk) {
          const int nb = std::min(chunk, g.n - n0);
          const int cols = nb * hw;
          dy.resize(g.o, cols);
          for (int i = 0; i < nb; ++i)
            for (int o = 0; o < g.o; ++o)
              std::copy_n(gout.data() + (static_cast<std::ptrdiff_t>(n0 + i) * g.o + o) * hw, hw,
                          dy.data() + static_cast<std::ptrdiff_t>(o) * cols + i * hw);
          if (gb) {
            Tensor<T>& db = t.grad_mut(bias);
            for (int o = 0; o < g.o; ++o) db[o] += dy.row(o).sum();
          }
          if (gw) {
            for (int i = 0; i < nb; ++i)
              im2col(t.value(x).data() + static_cast<std::ptrdiff_t>(n0 + i) * g.c * g.h * g.w, g, col.data(), cols,
                     i * hw);
            dw_acc.noalias() += dy * CMapMat<T>(col.data(), g.rows(), cols).transpose();
          }
          if (gx) {
            dcol.noalias() = wm.transpose() * dy;
            T* dx = t.grad_mut(x).data();
            for (int i = 0; i < nb; ++i)
              col2im(dcol.data(), g, dx + static_cast<std::ptrdiff_t>(n0 + i) * g.c * g.h * g.w, cols, i * hw);
          }
        }
        if (gw) {
          Tensor<T>& dw = t.grad_mut(weight);
          MapMat<T>(dw.data(), g.o, g.rows()) += dw_acc;
        }
      },
      "conv2d");
}

template <typename T>
int batch_norm(Tape<T>& tape, int x, int gamma, int beta, const BatchNormState<T>& state, bool train) {
  const auto& xs = tape.value(x).shape();
  require(xs.size() == 4 || xs.size() == 2, "batch_norm: expected NCHW or NC input");
  const int n = xs[0], c = xs[1];
  const int hw = xs.size() == 4 ? xs[2] * xs[3] : 1;
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  require(static_cast<int>(tape.value(gamma).size()) == c && static_cast<int>(tape.value(beta).size()) == c,
          "batch_norm: affine parameter size mismatch");
  if (train) require(m >= 2, "batch_norm: train mode needs at least two samples per channel");

  const T* xd = tape.value(x).data();
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto inv_std = std::make_shared<std::vector<double>>(c);
  Tensor<T> out(xs);
  if (train && state.batch_mean) state.batch_mean->assign(c, 0.0);
  if (train && state.batch_var) state.batch_var->assign(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (train) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = xd + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int k = 0; k < hw; ++k) s += p[k];
      }
      mean = s / static_cast<double>(m);
      for (int i = 0; i < n; ++i) {
        const T* p = xd + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int k = 0; k < hw; ++k) s2 += (p[k] - mean) * (p[k] - mean);
      }
      var = s2 / static_cast<double>(m);
      if (state.batch_mean) (*state.batch_mean)[ch] = mean;
      if (state.batch_var) (*state.batch_var)[ch] = s2 / static_cast<double>(m - 1);
    } else {
      require(state.running_mean && state.running_var, "batch_norm: eval mode needs running statistics");
      mean = (*state.running_mean)[ch];
      var = (*state.running_var)[ch];
    }
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    (*inv_std)[ch] = is;
    const double gm = tape.value(gamma)[ch], bt = tape.value(beta)[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) {
        const double xh = (xd[off + k] - mean) * is;
        (*xhat)[off + k] = static_cast<T>(xh);
        out[off + k] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  const bool needs = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
  return emit<T>(
      tape, std::move(out), needs,
      [x, gamma, beta, n, c, hw, m, train, xhat, inv_std](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const bool gx = t.needs_grad(x);
        for (int ch = 0; ch < c; ++ch) {
          double sum_dy = 0, sum_dy_xh = 0;
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
            for (int k = 0; k < hw; ++k) {
              sum_dy += gy[off + k];
              sum_dy_xh += static_cast<double>(gy[off + k]) * (*xhat)[off + k];
            }
          }
          if (t.needs_grad(gamma)) t.grad_mut(gamma)[ch] += static_cast<T>(sum_dy_xh);
          if (t.needs_grad(beta)) t.grad_mut(beta)[ch] += static_cast<T>(sum_dy);
          if (!gx) continue;
          const double gm = t.value(gamma)[ch];
          const double is = (*inv_std)[ch];
          T* dx = t.grad_mut(x).data();
          const double md = static_cast<double>(m);
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
            for (int k = 0; k < hw; ++k) {
              const double g = gy[off + k];
              if (train) {
                dx[off + k] += static_cast<T>(gm * is / md * (md * g - sum_dy - (*xhat)[off + k] * sum_dy_xh));
              } else {
                dx[off + k] += static_cast<T>(gm * is * g);
              }
            }
          }
        }
      },
      "batch_norm");
}

template <typename T>
int relu(Tape<T>& tape, int x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& in = t.value(x);
        Tensor<T>& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < in.size(); ++i)
          if (in[i] > T(0)) gx[i] += gy[i];
      },
      "relu");
}

template <typename T>
int max_pool2d(Tape<T>& tape, int x) {
  const auto& xs = tape.value(x).shape();
  require_rank(xs, 4, "max_pool2d");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = h / 2, wo = w / 2;
  require(ho > 0 && wo > 0, "max_pool2d: input smaller than the 2x2 window");
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out({n, c, ho, wo});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int nc = 0; nc < n * c; ++nc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        std::size_t best = (static_cast<std::size_t>(nc) * h + 2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(nc) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(nc) * ho + oy) * wo + ox;
        out[o] = in[best];
        (*arg)[o] = best;
      }
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x, arg](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += gy[i];
      },
      "max_pool2d");
}

template <typename T>
int global_avg_pool(Tape<T>& tape, int x) {
  const auto& xs = tape.value(x).shape();
  require_rank(xs, 4, "global_avg_pool");
  const int n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out({n, c});
  for (int i = 0; i < n * c; ++i) {
    double s = 0;
    for (int k = 0; k < hw; ++k) s += in[static_cast<std::size_t>(i) * hw + k];
    out[i] = static_cast<T>(s / hw);
  }
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x, n, c, hw](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad_mut(x);
        for (int i = 0; i < n * c; ++i)
          for (int k = 0; k < hw; ++k) gx[static_cast<std::size_t>(i) * hw + k] += gy[i] / static_cast<T>(hw);
      },
      "global_avg_pool");
}

template <typename T>
int fully_connected(Tape<T>& tape, int x, int weight, int bias) {
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(weight).shape();
  require_rank(xs, 2, "fully_connected input");
  require_rank(ws, 2, "fully_connected weight");
  require(xs[1] == ws[1], "fully_connected: feature mismatch " + shape_string(xs) + " vs " + shape_string(ws));
  const int n = xs[0], f = xs[1], o = ws[0];
  Tensor<T> out({n, o});
  MapMat<T> y(out.data(), n, o);
  y.noalias() = CMapMat<T>(tape.value(x).data(), n, f) * CMapMat<T>(tape.value(weight).data(), o, f).transpose();
  if (bias >= 0) {
    require(static_cast<int>(tape.value(bias).size()) == o, "fully_connected: bias size mismatch");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) y(i, j) += tape.value(bias)[j];
  }
  const bool needs = tape.needs_grad(x) || tape.needs_grad(weight) || (bias >= 0 && tape.needs_grad(bias));
  return emit<T>(
      tape, std::move(out), needs,
      [x, weight, bias, n, f, o](Tape<T>& t, int self) {
        CMapMat<T> gy(t.grad(self).data(), n, o);
        if (t.needs_grad(x))
          MapMat<T>(t.grad_mut(x).data(), n, f).noalias() += gy * CMapMat<T>(t.value(weight).data(), o, f);
        if (t.needs_grad(weight))
          MapMat<T>(t.grad_mut(weight).data(), o, f).noalias() += gy.transpose() * CMapMat<T>(t.value(x).data(), n, f);
        if (bias >= 0 && t.needs_grad(bias)) {
          Tensor<T>& gb = t.grad_mut(bias);
          for (int j = 0; j < o; ++j) gb[j] += gy.col(j).sum();
        }
      },
      "fully_connected");
}

template <typename T>
int flatten(Tape<T>& tape, int x) {
  const auto& xs = tape.value(x).shape();
  require(!xs.empty(), "flatten: scalar input");
  const int n = xs[0];
  const int f = static_cast<int>(tape.value(x).size() / static_cast<std::size_t>(std::max(1, n)));
  return tape.push(tape.value(x).reshaped({n, f}), tape.needs_grad(x), [x](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad_mut(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
int add(Tape<T>& tape, int a, int b) {
  return linear_combination(tape, {{a, 1.0}, {b, 1.0}});
}

template <typename T>
int linear_combination(Tape<T>& tape, const std::vector<std::pair<int, double>>& terms) {
  require(!terms.empty(), "linear_combination: no terms");
  const auto& shape = tape.value(terms[0].first).shape();
  Tensor<T> out(shape);
  bool needs = false;
  for (auto [id, wgt] : terms) {
    require(tape.value(id).shape() == shape, "linear_combination: shape mismatch");
    const Tensor<T>& v = tape.value(id);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += static_cast<T>(wgt) * v[i];
    needs = needs || tape.needs_grad(id);
  }
  return emit<T>(
      tape, std::move(out), needs,
      [terms](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        for (auto [id, wgt] : terms) {
          if (!t.needs_grad(id)) continue;
          Tensor<T>& g = t.grad_mut(id);
          for (std::size_t i = 0; i < gy.size(); ++i) g[i] += static_cast<T>(wgt) * gy[i];
        }
      },
      "linear_combination");
}

template <typename T>
int sum_all(Tape<T>& tape, int x, double scale) {
  double s = 0;
  for (T v : tape.value(x).span()) s += v;
  Tensor<T> out({1}, static_cast<T>(s * scale));
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x, scale](Tape<T>& t, int self) {
        const T g = t.grad(self)[0] * static_cast<T>(scale);
        Tensor<T>& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
      },
      "sum_all");
}

template <typename T>
int l2_normalize_rows(Tape<T>& tape, int x) {
  const auto& xs = tape.value(x).shape();
  require_rank(xs, 2, "l2_normalize_rows");
  const int n = xs[0], f = xs[1];
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(xs);
  auto norms = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < f; ++j) s += static_cast<double>(in[i * f + j]) * in[i * f + j];
    const double nr = std::sqrt(s);
    if (nr < 1e-12) throw NumericalError("l2_normalize_rows: zero row");
    (*norms)[i] = nr;
    for (int j = 0; j < f; ++j) out[i * f + j] = static_cast<T>(in[i * f + j] / nr);
  }
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x, n, f, norms](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gx = t.grad_mut(x);
        for (int i = 0; i < n; ++i) {
          double dot = 0;
          for (int j = 0; j < f; ++j) dot += static_cast<double>(gy[i * f + j]) * y[i * f + j];
          for (int j = 0; j < f; ++j) gx[i * f + j] += static_cast<T>((gy[i * f + j] - y[i * f + j] * dot) / (*norms)[i]);
        }
      },
      "l2_normalize_rows");
}

template <typename T>
int cosine_rows(Tape<T>& tape, int a, int b) {
  const auto& as = tape.value(a).shape();
  require(as.size() == 2 && tape.value(b).shape() == as, "cosine_rows: inputs must be matching [N, F]");
  const int n = as[0], f = as[1];
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out({n});
  auto stats = std::make_shared<std::vector<double>>(3 * n);  // |a|, |b|, s
  for (int i = 0; i < n; ++i) {
    double ab = 0, aa = 0, bb = 0;
    for (int j = 0; j < f; ++j) {
      const double x = av[i * f + j], y = bv[i * f + j];
      ab += x * y, aa += x * x, bb += y * y;
    }
    if (aa <= 0 || bb <= 0) throw InvalidArgument("cosine similarity of a zero vector");
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    const double s = ab / (na * nb);
    (*stats)[3 * i] = na, (*stats)[3 * i + 1] = nb, (*stats)[3 * i + 2] = s;
    out[i] = static_cast<T>(s);
  }
  return emit<T>(
      tape, std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
      [a, b, n, f, stats](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& av = t.value(a);
        const Tensor<T>& bv = t.value(b);
        for (int i = 0; i < n; ++i) {
          const double na = (*stats)[3 * i], nb = (*stats)[3 * i + 1], s = (*stats)[3 * i + 2];
          const double g = gy[i];
          if (t.needs_grad(a)) {
            Tensor<T>& ga = t.grad_mut(a);
            for (int j = 0; j < f; ++j)
              ga[i * f + j] += static_cast<T>(g * (bv[i * f + j] / (na * nb) - s * av[i * f + j] / (na * na)));
          }
          if (t.needs_grad(b)) {
            Tensor<T>& gb = t.grad_mut(b);
            for (int j = 0; j < f; ++j)
              gb[i * f + j] += static_cast<T>(g * (av[i * f + j] / (na * nb) - s * bv[i * f + j] / (nb * nb)));
          }
        }
      },
      "cosine_rows");
}

template <typename T>
int hinge(Tape<T>& tape, int x, double margin) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<T>(std::max(0.0, in[i] + margin));
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x),
      [x, margin](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& in = t.value(x);
        Tensor<T>& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < in.size(); ++i)
          if (in[i] + margin > 0) gx[i] += gy[i];
      },
      "hinge");
}

template <typename T>
int neg_log_half_cos(Tape<T>& tape, int s) {
  const Tensor<T>& in = tape.value(s);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = static_cast<T>(-std::log(std::max(kCosFloor, 1.0 + in[i]) / 2.0));
  return emit<T>(
      tape, std::move(out), tape.needs_grad(s),
      [s](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& in = t.value(s);
        Tensor<T>& gx = t.grad_mut(s);
        for (std::size_t i = 0; i < in.size(); ++i)
          gx[i] += static_cast<T>(-gy[i] / std::max(kCosFloor, 1.0 + in[i]));
      },
      "neg_log_half_cos");
}

template <typename T>
int concat_channels(Tape<T>& tape, int a, int b) {
  const auto& as = tape.value(a).shape();
  const auto& bs = tape.value(b).shape();
  require_rank(as, 4, "concat_channels");
  require(bs.size() == 4 && as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3], "concat_channels: shape mismatch");
  const int n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor<T> out({n, ca + cb, as[2], as[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(tape.value(a).data() + static_cast<std::size_t>(i) * ca * hw, ca * hw,
                out.data() + static_cast<std::size_t>(i) * (ca + cb) * hw);
    std::copy_n(tape.value(b).data() + static_cast<std::size_t>(i) * cb * hw, cb * hw,
                out.data() + (static_cast<std::size_t>(i) * (ca + cb) + ca) * hw);
  }
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b, n, ca, cb, hw](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    for (int i = 0; i < n; ++i) {
      const T* src = gy.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      if (t.needs_grad(a)) {
        T* dst = t.grad_mut(a).data() + static_cast<std::size_t>(i) * ca * hw;
        for (int k = 0; k < ca * hw; ++k) dst[k] += src[k];
      }
      if (t.needs_grad(b)) {
        T* dst = t.grad_mut(b).data() + static_cast<std::size_t>(i) * cb * hw;
        for (int k = 0; k < cb * hw; ++k) dst[k] += src[ca * hw + k];
      }
    }
  });
}

template <typename T>
int concat_batch(Tape<T>& tape, const std::vector<int>& parts) {
  require(!parts.empty(), "concat_batch: no parts");
  std::vector<int> shape = tape.value(parts[0]).shape();
  require(!shape.empty(), "concat_batch: scalar part");
  int total = 0;
  bool needs = false;
  for (int p : parts) {
    const auto& s = tape.value(p).shape();
    require(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1),
            "concat_batch: trailing shape mismatch");
    total += s[0];
    needs = needs || tape.needs_grad(p);
  }
  shape[0] = total;
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (int p : parts) {
    std::copy(tape.value(p).span().begin(), tape.value(p).span().end(), out.data() + off);
    off += tape.value(p).size();
  }
  return tape.push(std::move(out), needs, [parts](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t len = t.value(p).size();
      if (t.needs_grad(p)) {
        Tensor<T>& g = t.grad_mut(p);
        for (std::size_t i = 0; i < len; ++i) g[i] += gy[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
int slice_batch(Tape<T>& tape, int x, int begin, int count) {
  std::vector<int> shape = tape.value(x).shape();
  require(!shape.empty() && begin >= 0 && count >= 0 && begin + count <= shape[0], "slice_batch: range out of bounds");
  const std::size_t per = tape.value(x).size() / static_cast<std::size_t>(std::max(1, shape[0]));
  shape[0] = count;
  Tensor<T> out(shape);
  std::copy_n(tape.value(x).data() + begin * per, count * per, out.data());
  return tape.push(std::move(out), tape.needs_grad(x), [x, begin, count, per](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    T* g = t.grad_mut(x).data() + begin * per;
    for (std::size_t i = 0; i < count * per; ++i) g[i] += gy[i];
  });
}

template <typename T>
int spatial_transform(Tape<T>& tape, int x, int u) {
  const auto& xs = tape.value(x).shape();
  require_rank(xs, 4, "spatial_transform");
  require(xs[2] == xs[3], "spatial_transform: feature map must be square, got " + shape_string(xs));
  const auto& us = tape.value(u).shape();
  require(us.size() == 2 && us[0] == xs[0] && us[1] == 2, "spatial_transform: rotation must be [N, 2]");
  const int n = xs[0], c = xs[1], s = xs[2];
  const double center = (s - 1) / 2.0;
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& uv = tape.value(u);
  Tensor<T> out(xs);
  for (int i = 0; i < n; ++i) {
    const double u1 = uv[2 * i], u2 = uv[2 * i + 1];
    for (int py = 0; py < s; ++py)
      for (int px = 0; px < s; ++px) {
        const double dx = px - center, dy = py - center;
        const double sx = center + u1 * dx + u2 * dy;
        const double sy = center - u2 * dx + u1 * dy;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const int cx[4] = {x0, x0 + 1, x0, x0 + 1}, cy[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int ch = 0; ch < c; ++ch) {
          const T* plane = in.data() + (static_cast<std::size_t>(i) * c + ch) * s * s;
          double v = 0;
          for (int k = 0; k < 4; ++k)
            if (cx[k] >= 0 && cx[k] < s && cy[k] >= 0 && cy[k] < s) v += wts[k] * plane[cy[k] * s + cx[k]];
          out[((static_cast<std::size_t>(i) * c + ch) * s + py) * s + px] = static_cast<T>(v);
        }
      }
  }
  return emit<T>(
      tape, std::move(out), tape.needs_grad(x) || tape.needs_grad(u),
      [x, u, n, c, s, center](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& in = t.value(x);
        const Tensor<T>& uv = t.value(u);
        const bool gx = t.needs_grad(x), gu = t.needs_grad(u);
        for (int i = 0; i < n; ++i) {
          const double u1 = uv[2 * i], u2 = uv[2 * i + 1];
          double du1 = 0, du2 = 0;
          for (int py = 0; py < s; ++py)
            for (int px = 0; px < s; ++px) {
              const double dx = px - center, dy = py - center;
              const double sx = center + u1 * dx + u2 * dy;
              const double sy = center - u2 * dx + u1 * dy;
              const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
              const double fx = sx - x0, fy = sy - y0;
              auto inside = [s](int a, int b) { return a >= 0 && a < s && b >= 0 && b < s; };
              for (int ch = 0; ch < c; ++ch) {
                const std::size_t plane_off = (static_cast<std::size_t>(i) * c + ch) * s * s;
                const double g = gy[plane_off + static_cast<std::size_t>(py) * s + px];
                if (g == 0) continue;
                const T* plane = in.data() + plane_off;
                auto val = [&](int a, int b) { return inside(a, b) ? static_cast<double>(plane[b * s + a]) : 0.0; };
                if (gx) {
                  T* gp = t.grad_mut(x).data() + plane_off;
                  const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
                  const int cx[4] = {x0, x0 + 1, x0, x0 + 1}, cy[4] = {y0, y0, y0 + 1, y0 + 1};
                  for (int k = 0; k < 4; ++k)
                    if (inside(cx[k], cy[k])) gp[cy[k] * s + cx[k]] += static_cast<T>(g * wts[k]);
                }
                if (gu) {
                  const double v00 = val(x0, y0), v10 = val(x0 + 1, y0), v01 = val(x0, y0 + 1), v11 = val(x0 + 1, y0 + 1);
                  const double dsx = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
                  const double dsy = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
                  du1 += g * (dsx * dx + dsy * dy);
                  du2 += g * (dsx * dy - dsy * dx);
                }
              }
            }
          if (gu) {
            Tensor<T>& g = t.grad_mut(u);
            g[2 * i] += static_cast<T>(du1);
            g[2 * i + 1] += static_cast<T>(du2);
          }
        }
      },
      "spatial_transform");
}

namespace {
template <typename S>
double cosine_impl(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa <= 0 || bb <= 0) throw InvalidArgument("cosine similarity of a zero vector");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}
}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine_similarity(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

#define OVE6D_INSTANTIATE(T)                                                                    \
  template int conv2d<T>(Tape<T>&, int, int, int, int);                                         \
  template int batch_norm<T>(Tape<T>&, int, int, int, const BatchNormState<T>&, bool);          \
  template int relu<T>(Tape<T>&, int);                                                          \
  template int max_pool2d<T>(Tape<T>&, int);                                                    \
  template int global_avg_pool<T>(Tape<T>&, int);                                               \
  template int fully_connected<T>(Tape<T>&, int, int, int);                                     \
  template int flatten<T>(Tape<T>&, int);                                                       \
  template int add<T>(Tape<T>&, int, int);                                                      \
  template int linear_combination<T>(Tape<T>&, const std::vector<std::pair<int, double>>&);     \
  template int sum_all<T>(Tape<T>&, int, double);                                               \
  template int l2_normalize_rows<T>(Tape<T>&, int);                                             \
  template int cosine_rows<T>(Tape<T>&, int, int);                                              \
  template int hinge<T>(Tape<T>&, int, double);                                                 \
  template int neg_log_half_cos<T>(Tape<T>&, int);                                              \
  template int concat_channels<T>(Tape<T>&, int, int);                                          \
  template int concat_batch<T>(Tape<T>&, const std::vector<int>&);                              \
  template int slice_batch<T>(Tape<T>&, int, int, int);                                         \
  template int spatial_transform<T>(Tape<T>&, int, int);

OVE6D_INSTANTIATE(float)
OVE6D_INSTANTIATE(double)

}  // namespace ove6d::nn
