#include "bers/autograd.hpp"

namespace bers {

void Tape::backward(Tensor loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  loss.grad()[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward_fn();
}

}  // namespace bers
