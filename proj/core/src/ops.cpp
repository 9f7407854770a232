#include "bers/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bers {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using CMapRM = Eigen::Map<const MatrixRM>;

int64_t conv_out_dim(int64_t in, int64_t k, int64_t s, int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

struct ConvDims {
  int64_t n, cin, t, h, w;
  int64_t cout, kt, kh, kw;
  int64_t to, ho, wo;
  int64_t groups, cg, cog;     // input/output channels per group
  int64_t patch;               // cg*kt*kh*kw, col rows per group
  int64_t positions;           // to*ho*wo
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dSpec& spec) {
  if (x.rank() != 5)
    throw DimensionError("conv3d: input must be rank 5, got " + shape_str(x.shape()));
  if (w.rank() != 5)
    throw DimensionError("conv3d: weight must be rank 5, got " + shape_str(w.shape()));
  ConvDims d;
  d.n = x.dim(0); d.cin = x.dim(1); d.t = x.dim(2); d.h = x.dim(3); d.w = x.dim(4);
  d.cout = w.dim(0); d.kt = w.dim(2); d.kh = w.dim(3); d.kw = w.dim(4);
  d.groups = spec.groups;
  if (d.groups <= 0 || d.cin % d.groups != 0 || d.cout % d.groups != 0)
    throw ConfigError("conv3d: groups=" + std::to_string(d.groups) +
                      " must divide Cin=" + std::to_string(d.cin) +
                      " and Cout=" + std::to_string(d.cout));
  if (w.dim(1) != d.cin / d.groups)
    throw DimensionError("conv3d: weight channel axis is " + std::to_string(w.dim(1)) +
                         ", expected Cin/groups=" + std::to_string(d.cin / d.groups));
  if (b.rank() != 1 || b.dim(0) != d.cout)
    throw DimensionError("conv3d: bias must have shape [Cout=" + std::to_string(d.cout) + "]");
  d.to = conv_out_dim(d.t, d.kt, spec.stride[0], spec.padding[0]);
  d.ho = conv_out_dim(d.h, d.kh, spec.stride[1], spec.padding[1]);
  d.wo = conv_out_dim(d.w, d.kw, spec.stride[2], spec.padding[2]);
  if (d.to <= 0) throw DimensionError("conv3d: kernel does not fit padded input on axis T");
  if (d.ho <= 0) throw DimensionError("conv3d: kernel does not fit padded input on axis H");
  if (d.wo <= 0) throw DimensionError("conv3d: kernel does not fit padded input on axis W");
  d.cg = d.cin / d.groups;
  d.cog = d.cout / d.groups;
  d.patch = d.cg * d.kt * d.kh * d.kw;
  d.positions = d.to * d.ho * d.wo;
  return d;
}

// col layout: rows indexed by (c_in, kt, kh, kw) over all input channels,
// columns by output position (to,ho,wo). Group g owns the contiguous row
// block [g*patch, (g+1)*patch).
void im2col(const double* x, const ConvDims& d, const Conv3dSpec& spec, double* col) {
  const int64_t sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
  const int64_t pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
  double* out = col;
  for (int64_t c = 0; c < d.cin; ++c) {
    const double* xc = x + c * d.t * d.h * d.w;
    for (int64_t kt = 0; kt < d.kt; ++kt)
      for (int64_t kh = 0; kh < d.kh; ++kh)
        for (int64_t kw = 0; kw < d.kw; ++kw) {
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t ti = to * sT - pT + kt;
            if (ti < 0 || ti >= d.t) {
              std::memset(out, 0, sizeof(double) * d.ho * d.wo);
              out += d.ho * d.wo;
              continue;
            }
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t hi = ho * sH - pH + kh;
              if (hi < 0 || hi >= d.h) {
                std::memset(out, 0, sizeof(double) * d.wo);
                out += d.wo;
                continue;
              }
              const double* row = xc + (ti * d.h + hi) * d.w;
              for (int64_t wo = 0; wo < d.wo; ++wo) {
                const int64_t wi = wo * sW - pW + kw;
                *out++ = (wi >= 0 && wi < d.w) ? row[wi] : 0.0;
              }
            }
          }
        }
  }
}

void col2im_add(const double* col, const ConvDims& d, const Conv3dSpec& spec, double* dx) {
  const int64_t sT = spec.stride[0], sH = spec.stride[1], sW = spec.stride[2];
  const int64_t pT = spec.padding[0], pH = spec.padding[1], pW = spec.padding[2];
  const double* in = col;
  for (int64_t c = 0; c < d.cin; ++c) {
    double* xc = dx + c * d.t * d.h * d.w;
    for (int64_t kt = 0; kt < d.kt; ++kt)
      for (int64_t kh = 0; kh < d.kh; ++kh)
        for (int64_t kw = 0; kw < d.kw; ++kw) {
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t ti = to * sT - pT + kt;
            if (ti < 0 || ti >= d.t) {
              in += d.ho * d.wo;
              continue;
            }
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t hi = ho * sH - pH + kh;
              if (hi < 0 || hi >= d.h) {
                in += d.wo;
                continue;
              }
              double* row = xc + (ti * d.h + hi) * d.w;
              for (int64_t wo = 0; wo < d.wo; ++wo) {
                const int64_t wi = wo * sW - pW + kw;
                if (wi >= 0 && wi < d.w) row[wi] += *in;
                ++in;
              }
            }
          }
        }
  }
}

}  // namespace

Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv3dSpec& spec) {
  const ConvDims d = conv_dims(x, w, b, spec);
  Tensor y({d.n, d.cout, d.to, d.ho, d.wo});

  std::vector<double> col(static_cast<size_t>(d.cin * d.kt * d.kh * d.kw * d.positions));
  for (int64_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.cin * d.t * d.h * d.w, d, spec, col.data());
    double* yn = y.data() + n * d.cout * d.positions;
    for (int64_t g = 0; g < d.groups; ++g) {
      CMapRM wg(w.data() + g * d.cog * d.patch, d.cog, d.patch);
      CMapRM cg(col.data() + g * d.patch * d.positions, d.patch, d.positions);
      MapRM og(yn + g * d.cog * d.positions, d.cog, d.positions);
      og.noalias() = wg * cg;
    }
    for (int64_t c = 0; c < d.cout; ++c) {
      const double bias = b.data()[c];
      double* row = yn + c * d.positions;
      for (int64_t p = 0; p < d.positions; ++p) row[p] += bias;
    }
  }

  if (grad_enabled(tape, {&x, &w, &b})) {
    y.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = b, yc = y;
    Conv3dSpec sp = spec;
    tape->record("conv3d", [xc, wc, bc, yc, sp, d]() mutable {
      const double* gy = yc.grad();
      std::vector<double> col(static_cast<size_t>(d.cin * d.kt * d.kh * d.kw * d.positions));
      std::vector<double> dcol(col.size());
      const bool need_dx = xc.requires_grad();
      double* dx = need_dx ? xc.grad() : nullptr;
      double* dw = wc.requires_grad() ? wc.grad() : nullptr;
      double* db = bc.requires_grad() ? bc.grad() : nullptr;
      for (int64_t n = 0; n < d.n; ++n) {
        const double* gyn = gy + n * d.cout * d.positions;
        if (dw) {
          im2col(xc.data() + n * d.cin * d.t * d.h * d.w, d, sp, col.data());
          for (int64_t g = 0; g < d.groups; ++g) {
            CMapRM gyg(gyn + g * d.cog * d.positions, d.cog, d.positions);
            CMapRM cg(col.data() + g * d.patch * d.positions, d.patch, d.positions);
            MapRM dwg(dw + g * d.cog * d.patch, d.cog, d.patch);
            dwg.noalias() += gyg * cg.transpose();
          }
        }
        if (db) {
          for (int64_t c = 0; c < d.cout; ++c) {
            double s = 0.0;
            const double* row = gyn + c * d.positions;
            for (int64_t p = 0; p < d.positions; ++p) s += row[p];
            db[c] += s;
          }
        }
        if (need_dx) {
          for (int64_t g = 0; g < d.groups; ++g) {
            CMapRM wg(wc.data() + g * d.cog * d.patch, d.cog, d.patch);
            CMapRM gyg(gyn + g * d.cog * d.positions, d.cog, d.positions);
            MapRM dcg(dcol.data() + g * d.patch * d.positions, d.patch, d.positions);
            dcg.noalias() = wg.transpose() * gyg;
          }
          col2im_add(dcol.data(), d, sp, dx + n * d.cin * d.t * d.h * d.w);
        }
      }
    });
  }
  return y;
}

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (grad_enabled(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("relu", [xc, yc]() mutable {
      const double* gy = yc.grad();
      const double* xd = xc.data();
      double* gx = xc.grad();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i)
        if (xd[i] > 0.0) gx[i] += gy[i];
    });
  }
  return y;
}

Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& sc, const Tensor& sh,
                  BatchNormState& state, Mode mode, double eps) {
  if (x.rank() < 2) throw DimensionError("batch_norm: input must be [N,C,...]");
  const int64_t n = x.dim(0);
  const int64_t c = x.dim(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int64_t m = n * spatial;  // elements per channel
  if (sc.numel() != c || sh.numel() != c)
    throw DimensionError("batch_norm: scale/shift must have C=" + std::to_string(c) + " elements");
  if (static_cast<int64_t>(state.running_mean.size()) != c)
    throw ConfigError("batch_norm: running stats sized for " +
                      std::to_string(state.running_mean.size()) + " channels, input has " +
                      std::to_string(c));
  if (mode == Mode::kTrain && m < 2)
    throw DataError("batch_norm: degenerate batch, need >= 2 elements per channel");

  Tensor y(x.shape());
  std::vector<double> mean(c), ivar(c);
  if (mode == Mode::kTrain) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * spatial;
        for (int64_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double mu = s / m;
      double v = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * spatial;
        for (int64_t i = 0; i < spatial; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      v /= m;
      mean[ch] = mu;
      ivar[ch] = 1.0 / std::sqrt(v + eps);
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * v;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      ivar[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
    }
  }
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (b * c + ch) * spatial;
      double* q = y.data() + (b * c + ch) * spatial;
      const double g = sc.data()[ch], bt = sh.data()[ch], mu = mean[ch], iv = ivar[ch];
      for (int64_t i = 0; i < spatial; ++i) q[i] = g * (p[i] - mu) * iv + bt;
    }

  if (grad_enabled(tape, {&x, &sc, &sh})) {
    y.set_requires_grad(true);
    Tensor xc = x, scc = sc, shc = sh, yc = y;
    const bool train = mode == Mode::kTrain;
    tape->record("batch_norm", [xc, scc, shc, yc, mean, ivar, n, c, spatial, m, train]() mutable {
      const double* gy = yc.grad();
      double* gx = xc.requires_grad() ? xc.grad() : nullptr;
      double* gsc = scc.requires_grad() ? scc.grad() : nullptr;
      double* gsh = shc.requires_grad() ? shc.grad() : nullptr;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double mu = mean[ch], iv = ivar[ch], g = scc.data()[ch];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int64_t b = 0; b < n; ++b) {
          const double* xp = xc.data() + (b * c + ch) * spatial;
          const double* gp = gy + (b * c + ch) * spatial;
          for (int64_t i = 0; i < spatial; ++i) {
            sum_gy += gp[i];
            sum_gy_xhat += gp[i] * (xp[i] - mu) * iv;
          }
        }
        if (gsc) gsc[ch] += sum_gy_xhat;
        if (gsh) gsh[ch] += sum_gy;
        if (!gx) continue;
        if (train) {
          for (int64_t b = 0; b < n; ++b) {
            const double* xp = xc.data() + (b * c + ch) * spatial;
            const double* gp = gy + (b * c + ch) * spatial;
            double* dp = gx + (b * c + ch) * spatial;
            for (int64_t i = 0; i < spatial; ++i) {
              const double xhat = (xp[i] - mu) * iv;
              dp[i] += g * iv * (gp[i] - sum_gy / m - xhat * sum_gy_xhat / m);
            }
          }
        } else {
          for (int64_t b = 0; b < n; ++b) {
            const double* gp = gy + (b * c + ch) * spatial;
            double* dp = gx + (b * c + ch) * spatial;
            for (int64_t i = 0; i < spatial; ++i) dp[i] += g * iv * gp[i];
          }
        }
      }
    });
  }
  return y;
}

Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  if (x.rank() < 3) throw DimensionError("global_avg_pool: input must be [N,C,spatial...]");
  const int64_t n = x.dim(0), c = x.dim(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  Tensor y({n, c});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (b * c + ch) * spatial;
      double s = 0.0;
      for (int64_t i = 0; i < spatial; ++i) s += p[i];
      y.data()[b * c + ch] = s / spatial;
    }
  if (grad_enabled(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("global_avg_pool", [xc, yc, n, c, spatial]() mutable {
      const double* gy = yc.grad();
      double* gx = xc.grad();
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          const double g = gy[b * c + ch] / spatial;
          double* p = gx + (b * c + ch) * spatial;
          for (int64_t i = 0; i < spatial; ++i) p[i] += g;
        }
    });
  }
  return y;
}

Tensor fully_connected(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw DimensionError("fully_connected: expected x [N,D], w [K,D], b [K]");
  const int64_t n = x.dim(0), dIn = x.dim(1), k = w.dim(0);
  if (w.dim(1) != dIn)
    throw DimensionError("fully_connected: weight inner dim " + std::to_string(w.dim(1)) +
                         " != input dim " + std::to_string(dIn));
  if (b.dim(0) != k) throw DimensionError("fully_connected: bias dim != K");
  Tensor y({n, k});
  {
    CMapRM xm(x.data(), n, dIn);
    CMapRM wm(w.data(), k, dIn);
    MapRM ym(y.data(), n, k);
    ym.noalias() = xm * wm.transpose();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < k; ++j) y.data()[i * k + j] += b.data()[j];
  }
  if (grad_enabled(tape, {&x, &w, &b})) {
    y.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = b, yc = y;
    tape->record("fully_connected", [xc, wc, bc, yc, n, dIn, k]() mutable {
      CMapRM gym(yc.grad(), n, k);
      if (xc.requires_grad()) {
        MapRM gxm(xc.grad(), n, dIn);
        CMapRM wm(wc.data(), k, dIn);
        gxm.noalias() += gym * wm;
      }
      if (wc.requires_grad()) {
        MapRM gwm(wc.grad(), k, dIn);
        CMapRM xm(xc.data(), n, dIn);
        gwm.noalias() += gym.transpose() * xm;
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) gb[j] += yc.grad()[i * k + j];
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const std::vector<int64_t>& labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
  for (int64_t i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= k)
      throw LabelError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0," + std::to_string(k) + ")");
  // probs saved for backward
  Tensor probs({n, k});
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[labels[i]];
    double* prow = probs.data() + i * k;
    for (int64_t j = 0; j < k; ++j) prow[j] = std::exp(row[j] - lse);
  }
  Tensor y = Tensor::scalar(loss / n);
  if (grad_enabled(tape, {&logits})) {
    y.set_requires_grad(true);
    Tensor lc = logits, yc = y;
    std::vector<int64_t> lab = labels;
    tape->record("softmax_cross_entropy", [lc, yc, probs, lab, n, k]() mutable {
      const double g = yc.grad()[0] / n;
      double* gl = lc.grad();
      for (int64_t i = 0; i < n; ++i) {
        const double* prow = probs.data() + i * k;
        for (int64_t j = 0; j < k; ++j) gl[i * k + j] += g * (prow[j] - (lab[i] == j ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

Tensor mse_distance(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse_distance");
  const int64_t n = a.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor y = Tensor::scalar(s / n);
  if (grad_enabled(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape->record("mse_distance", [ac, bc, yc, n]() mutable {
      const double g = 2.0 * yc.grad()[0] / n;
      double* ga = ac.requires_grad() ? ac.grad() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        const double d = ac.data()[i] - bc.data()[i];
        if (ga) ga[i] += g * d;
        if (gb) gb[i] -= g * d;
      }
    });
  }
  return y;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + b.data()[i];
  if (grad_enabled(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    tape->record("add", [ac, bc, yc, n]() mutable {
      const double* gy = yc.grad();
      if (ac.requires_grad()) {
        double* ga = ac.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  Tensor y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y.data()[i] = c * a.data()[i];
  if (grad_enabled(tape, {&a})) {
    y.set_requires_grad(true);
    Tensor ac = a, yc = y;
    tape->record("scale", [ac, yc, c, n]() mutable {
      const double* gy = yc.grad();
      double* ga = ac.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += c * gy[i];
    });
  }
  return y;
}

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int64_t n = parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n)
      throw DimensionError("concat_cols: all parts must be [N,D] with equal N");
    total += p.dim(1);
  }
  Tensor y({n, total});
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t d = p.dim(1);
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(y.data() + i * total + off, p.data() + i * d, sizeof(double) * d);
    off += d;
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    y.set_requires_grad(true);
    std::vector<Tensor> pc = parts;
    Tensor yc = y;
    tape->record("concat_cols", [pc, yc, n, total]() mutable {
      const double* gy = yc.grad();
      int64_t off = 0;
      for (Tensor& p : pc) {
        const int64_t d = p.dim(1);
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) gp[i * d + j] += gy[i * total + off + j];
        }
        off += d;
      }
    });
  }
  return y;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: input must be [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor y({n, k});
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    for (int64_t j = 0; j < k; ++j) y.data()[i * k + j] = std::exp(row[j] - mx) / sum;
  }
  return y;
}

}  // namespace bers
