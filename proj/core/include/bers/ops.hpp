#pragma once

#include <array>
#include <vector>

#include "bers/autograd.hpp"
#include "bers/tensor.hpp"

namespace bers {

enum class Mode { kTrain, kEval };

struct Conv3dSpec {
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
  int64_t groups = 1;
};

/// x [N,Cin,T,H,W], w [Cout,Cin/groups,kT,kH,kW], b [Cout].
/// Output [N,Cout,T',H',W'] with X' = floor((X+2p-k)/s)+1.
Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv3dSpec& spec);

Tensor relu(Tape* tape, const Tensor& x);

/// Per-channel running statistics updated in train mode (momentum 0.1).
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;

  explicit BatchNormState(int64_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// x [N,C,spatial...]; normalizes over batch and spatial positions per channel.
Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& scale, const Tensor& shift,
                  BatchNormState& state, Mode mode, double eps = 1e-5);

/// [N,C,T,H,W] -> [N,C], mean over all spatial positions.
Tensor global_avg_pool(Tape* tape, const Tensor& x);

/// x [N,D], w [K,D], b [K] -> [N,K] = x w^T + b.
Tensor fully_connected(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const std::vector<int64_t>& labels);

/// Mean over all elements of (a-b)^2.
Tensor mse_distance(Tape* tape, const Tensor& a, const Tensor& b);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);

/// Concatenate [N,D_i] blocks along the feature axis.
Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts);

/// Row-wise softmax of [N,K]; forward only (no tape record).
Tensor softmax_rows(const Tensor& logits);

}  // namespace bers
