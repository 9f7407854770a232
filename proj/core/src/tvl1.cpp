#include "bers/tvl1.hpp"

#include <algorithm>
#include <cmath>

#include "bers/counters.hpp"

namespace bers {

namespace {

// Image-sized double plane.
struct Plane {
  int64_t h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int64_t h, int64_t w) : h(h), w(w), v(h * w, 0.0) {}
  double& at(int64_t y, int64_t x) { return v[y * w + x]; }
  double at(int64_t y, int64_t x) const { return v[y * w + x]; }
};

double bilinear(const Plane& img, double y, double x) {
  x = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x1 = std::min(x0 + 1, img.w - 1);
  const int64_t y1 = std::min(y0 + 1, img.h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
         fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
}

// 3x3 binomial blur with replicate borders, applied before downsampling.
Plane blur3(const Plane& in) {
  static const double k[3] = {0.25, 0.5, 0.25};
  Plane tmp(in.h, in.w), out(in.h, in.w);
  for (int64_t y = 0; y < in.h; ++y)
    for (int64_t x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -1; i <= 1; ++i)
        s += k[i + 1] * in.at(y, std::clamp<int64_t>(x + i, 0, in.w - 1));
      tmp.at(y, x) = s;
    }
  for (int64_t y = 0; y < in.h; ++y)
    for (int64_t x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -1; i <= 1; ++i)
        s += k[i + 1] * tmp.at(std::clamp<int64_t>(y + i, 0, in.h - 1), x);
      out.at(y, x) = s;
    }
  return out;
}

Plane resize(const Plane& in, int64_t h, int64_t w) {
  Plane out(h, w);
  const double sy = static_cast<double>(in.h) / h;
  const double sx = static_cast<double>(in.w) / w;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      out.at(y, x) = bilinear(in, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return out;
}

// Central differences, replicate borders.
void gradients(const Plane& img, Plane& gx, Plane& gy) {
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      const int64_t xp = std::min(x + 1, img.w - 1), xm = std::max<int64_t>(x - 1, 0);
      const int64_t yp = std::min(y + 1, img.h - 1), ym = std::max<int64_t>(y - 1, 0);
      gx.at(y, x) = 0.5 * (img.at(y, xp) - img.at(y, xm));
      gy.at(y, x) = 0.5 * (img.at(yp, x) - img.at(ym, x));
    }
}

// Forward differences with zero at the far border (matches the energy and
// the divergence below as its negative adjoint).
void forward_grad(const Plane& f, Plane& fx, Plane& fy) {
  for (int64_t y = 0; y < f.h; ++y)
    for (int64_t x = 0; x < f.w; ++x) {
      fx.at(y, x) = (x + 1 < f.w) ? f.at(y, x + 1) - f.at(y, x) : 0.0;
      fy.at(y, x) = (y + 1 < f.h) ? f.at(y + 1, x) - f.at(y, x) : 0.0;
    }
}

double divergence_at(const Plane& p1, const Plane& p2, int64_t y, int64_t x) {
  double d = 0.0;
  if (x == 0)
    d += p1.at(y, x);
  else if (x == p1.w - 1)
    d += -p1.at(y, x - 1);
  else
    d += p1.at(y, x) - p1.at(y, x - 1);
  if (y == 0)
    d += p2.at(y, x);
  else if (y == p2.h - 1)
    d += -p2.at(y - 1, x);
  else
    d += p2.at(y, x) - p2.at(y - 1, x);
  return d;
}

// 5x5 median filter with clamped borders; applied to the flow after each warp
// (Wedel et al.'s robustness step) to suppress outliers the pointwise data
// term introduces.
Plane median5(const Plane& in) {
  Plane out(in.h, in.w);
  double window[25];
  for (int64_t y = 0; y < in.h; ++y)
    for (int64_t x = 0; x < in.w; ++x) {
      int k = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          window[k++] = in.at(std::clamp<int64_t>(y + dy, 0, in.h - 1),
                              std::clamp<int64_t>(x + dx, 0, in.w - 1));
      std::nth_element(window, window + 12, window + 25);
      out.at(y, x) = window[12];
    }
  return out;
}

double level_energy(const Plane& u, const Plane& v, const Plane& i0, const Plane& i1,
                    double lambda) {
  FlowField f(u.h, u.w);
  f.u = u.v;
  f.v = v.v;
  GrayFrame g0(i0.h, i0.w), g1(i1.h, i1.w);
  g0.intensity = i0.v;
  g1.intensity = i1.v;
  return energy(f, g0, g1, lambda);
}

// One pyramid level of the dual TV-L1 scheme (Zach et al. / Chambolle dual
// updates). When guard_energy is set, each warp's result is kept only if it
// does not increase the energy.
void solve_level(const Plane& i0, const Plane& i1, Plane& u, Plane& v, const Tvl1Params& prm,
                 bool guard_energy, std::vector<double>* trace) {
  const int64_t h = i0.h, w = i0.w, n = h * w;
  Plane i1x(h, w), i1y(h, w);
  gradients(i1, i1x, i1y);

  Plane i1w(h, w), i1wx(h, w), i1wy(h, w);
  Plane p11(h, w), p12(h, w), p21(h, w), p22(h, w);
  Plane v1(h, w), v2(h, w), gxp(h, w), gyp(h, w);

  const double lt = prm.data_weight * prm.tightness;
  const double taut = prm.dual_step / prm.tightness;

  double best_energy = guard_energy ? level_energy(u, v, i0, i1, prm.data_weight) : 0.0;

  for (int warp = 0; warp < prm.warps; ++warp) {
    Plane u0 = u, v0 = v;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t y = i / w, x = i % w;
      i1w.v[i] = bilinear(i1, y + v0.v[i], x + u0.v[i]);
      i1wx.v[i] = bilinear(i1x, y + v0.v[i], x + u0.v[i]);
      i1wy.v[i] = bilinear(i1y, y + v0.v[i], x + u0.v[i]);
    }
    std::fill(p11.v.begin(), p11.v.end(), 0.0);
    std::fill(p12.v.begin(), p12.v.end(), 0.0);
    std::fill(p21.v.begin(), p21.v.end(), 0.0);
    std::fill(p22.v.begin(), p22.v.end(), 0.0);

    for (int iter = 0; iter < prm.inner_iterations; ++iter) {
      // pointwise thresholding of the linearized data term
      for (int64_t i = 0; i < n; ++i) {
        const double rho = i1w.v[i] + i1wx.v[i] * (u.v[i] - u0.v[i]) +
                           i1wy.v[i] * (v.v[i] - v0.v[i]) - i0.v[i];
        const double grad = i1wx.v[i] * i1wx.v[i] + i1wy.v[i] * i1wy.v[i];
        double d1 = 0.0, d2 = 0.0;
        if (rho < -lt * grad) {
          d1 = lt * i1wx.v[i];
          d2 = lt * i1wy.v[i];
        } else if (rho > lt * grad) {
          d1 = -lt * i1wx.v[i];
          d2 = -lt * i1wy.v[i];
        } else if (grad > 1e-12) {
          d1 = -rho / grad * i1wx.v[i];
          d2 = -rho / grad * i1wy.v[i];
        }
        v1.v[i] = u.v[i] + d1;
        v2.v[i] = v.v[i] + d2;
      }
      // proximal TV step on u,v via the dual variables
      double change = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const int64_t y = i / w, x = i % w;
        const double nu = v1.v[i] + prm.tightness * divergence_at(p11, p12, y, x);
        const double nv = v2.v[i] + prm.tightness * divergence_at(p21, p22, y, x);
        change += (nu - u.v[i]) * (nu - u.v[i]) + (nv - v.v[i]) * (nv - v.v[i]);
        u.v[i] = nu;
        v.v[i] = nv;
      }
      forward_grad(u, gxp, gyp);
      for (int64_t i = 0; i < n; ++i) {
        const double norm = 1.0 + taut * std::sqrt(gxp.v[i] * gxp.v[i] + gyp.v[i] * gyp.v[i]);
        p11.v[i] = (p11.v[i] + taut * gxp.v[i]) / norm;
        p12.v[i] = (p12.v[i] + taut * gyp.v[i]) / norm;
      }
      forward_grad(v, gxp, gyp);
      for (int64_t i = 0; i < n; ++i) {
        const double norm = 1.0 + taut * std::sqrt(gxp.v[i] * gxp.v[i] + gyp.v[i] * gyp.v[i]);
        p21.v[i] = (p21.v[i] + taut * gxp.v[i]) / norm;
        p22.v[i] = (p22.v[i] + taut * gyp.v[i]) / norm;
      }
      if (change / n < prm.stop_epsilon * prm.stop_epsilon) break;
    }
    u = median5(u);
    v = median5(v);
    if (guard_energy) {
      const double e = level_energy(u, v, i0, i1, prm.data_weight);
      if (e > best_energy) {
        u = u0;
        v = v0;
        if (trace) trace->push_back(best_energy);
        break;
      }
      best_energy = e;
      if (trace) trace->push_back(e);
    }
  }
}

}  // namespace

void Tvl1Params::validate() const {
  if (dual_step <= 0.0 || dual_step > 0.25)
    throw ConfigError("tvl1: dual step tau must be in (0, 0.25]");
  if (data_weight <= 0.0 || tightness <= 0.0 || scale_factor <= 0.0 || scale_factor >= 1.0 ||
      warps <= 0 || inner_iterations <= 0 || max_levels <= 0 || stop_epsilon <= 0.0)
    throw ConfigError("tvl1: all parameters must be positive, scale factor in (0,1)");
}

FlowField compute_flow(const GrayFrame& prev, const GrayFrame& next, const Tvl1Params& params,
                       std::vector<double>* finest_energy_trace) {
  params.validate();
  if (prev.height != next.height || prev.width != next.width)
    throw DimensionError("compute_flow: frame sizes differ");
  if (std::min(prev.height, prev.width) < 8)
    throw DimensionError("compute_flow: min frame dimension is 8");
  counters().tvl1_calls++;

  Plane i0(prev.height, prev.width), i1(next.height, next.width);
  i0.v = prev.intensity;
  i1.v = next.intensity;
  // The data weight is calibrated for intensities in 8-bit range; inputs are
  // in [0,1], so scale by 255. The energy guard and trace are evaluated in
  // these solver units too (scaled frames with the same data weight).
  for (double& x : i0.v) x *= 255.0;
  for (double& x : i1.v) x *= 255.0;

  // pyramid; coarsest side stays >= 8 px
  std::vector<Plane> pyr0{i0}, pyr1{i1};
  for (int l = 1; l < params.max_levels; ++l) {
    const Plane& prev0 = pyr0.back();
    const int64_t nh = static_cast<int64_t>(std::lround(prev0.h * params.scale_factor));
    const int64_t nw = static_cast<int64_t>(std::lround(prev0.w * params.scale_factor));
    if (std::min(nh, nw) < 8) break;
    pyr0.push_back(resize(blur3(pyr0.back()), nh, nw));
    pyr1.push_back(resize(blur3(pyr1.back()), nh, nw));
  }

  Plane u(pyr0.back().h, pyr0.back().w), v(pyr0.back().h, pyr0.back().w);
  for (int l = static_cast<int>(pyr0.size()) - 1; l >= 0; --l) {
    solve_level(pyr0[l], pyr1[l], u, v, params, /*guard_energy=*/l == 0,
                l == 0 ? finest_energy_trace : nullptr);
    if (l > 0) {
      const Plane& up0 = pyr0[l - 1];
      Plane nu = resize(u, up0.h, up0.w), nv = resize(v, up0.h, up0.w);
      const double fx = static_cast<double>(up0.w) / pyr0[l].w;
      const double fy = static_cast<double>(up0.h) / pyr0[l].h;
      for (double& x : nu.v) x *= fx;
      for (double& x : nv.v) x *= fy;
      u = std::move(nu);
      v = std::move(nv);
    }
  }

  FlowField out(prev.height, prev.width);
  out.u = std::move(u.v);
  out.v = std::move(v.v);
  return out;
}

double energy(const FlowField& flow, const GrayFrame& prev, const GrayFrame& next,
              double data_weight) {
  if (flow.height != prev.height || flow.width != prev.width || prev.height != next.height ||
      prev.width != next.width)
    throw DimensionError("energy: inconsistent dimensions");
  const int64_t h = flow.height, w = flow.width;
  Plane i1(h, w);
  i1.v = next.intensity;
  double e = 0.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      const double ux = (x + 1 < w) ? flow.u[i + 1] - flow.u[i] : 0.0;
      const double uy = (y + 1 < h) ? flow.u[i + w] - flow.u[i] : 0.0;
      const double vx = (x + 1 < w) ? flow.v[i + 1] - flow.v[i] : 0.0;
      const double vy = (y + 1 < h) ? flow.v[i + w] - flow.v[i] : 0.0;
      e += std::sqrt(ux * ux + uy * uy) + std::sqrt(vx * vx + vy * vy);
      const double warped = bilinear(i1, y + flow.v[i], x + flow.u[i]);
      e += data_weight * std::abs(warped - prev.intensity[i]);
    }
  return e;
}

FlowStack clip_flow_stack(const VideoClip& clip, const Tvl1Params& params) {
  if (clip.frames < 2) throw DimensionError("clip_flow_stack: clip must have >= 2 frames");
  FlowStack stack;
  stack.reserve(clip.frames - 1);
  for (int64_t t = 0; t + 1 < clip.frames; ++t)
    stack.push_back(compute_flow(luminance_frame(clip, t), luminance_frame(clip, t + 1), params));
  return stack;
}

}  // namespace bers
