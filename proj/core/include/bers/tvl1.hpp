#pragma once

#include <cstdint>
#include <vector>

#include "bers/video.hpp"

namespace bers {

/// Per-pixel displacement field in pixels; u horizontal (+x), v vertical (+y).
struct FlowField {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(int64_t h, int64_t w) : height(h), width(w), u(h * w, 0.0), v(h * w, 0.0) {}
};

using FlowStack = std::vector<FlowField>;

struct Tvl1Params {
  double data_weight = 0.15;   // lambda of the L1 data term
  double tightness = 0.3;      // theta coupling the data and TV subproblems
  double dual_step = 0.25;     // tau, must stay <= 0.25 for the dual ascent
  int warps = 5;
  int inner_iterations = 30;
  double scale_factor = 0.5;
  int max_levels = 5;          // coarsest level still keeps min side >= 8 px
  double stop_epsilon = 0.01;

  void validate() const;
};

/// Duality-based TV-L1 flow between two frames of equal size (min side >= 8).
/// Coarse-to-fine; at the finest level a warp iteration is only accepted if
/// it does not increase the TV-L1 energy, so the per-warp energy trace is
/// non-increasing. When finest_energy_trace is given it receives the energy
/// after every finest-level warp.
FlowField compute_flow(const GrayFrame& prev, const GrayFrame& next, const Tvl1Params& params,
                       std::vector<double>* finest_energy_trace = nullptr);

/// TV-L1 objective: sum_x |grad u| + |grad v| + lambda * sum_x |I1(x+w) - I0(x)|,
/// forward differences, bilinear sampling clamped to the image rectangle.
double energy(const FlowField& flow, const GrayFrame& prev, const GrayFrame& next,
              double data_weight);

/// Field i is compute_flow(luminance(frame i), luminance(frame i+1)).
FlowStack clip_flow_stack(const VideoClip& clip, const Tvl1Params& params);

}  // namespace bers
