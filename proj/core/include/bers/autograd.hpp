#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bers/tensor.hpp"

namespace bers {

/// Reverse-mode tape. Forward ops append one record each; backward replays
/// the records once, in reverse insertion order. Insertion order is a valid
/// topological order because every op's inputs already exist when it runs.
class Tape {
 public:
  struct Record {
    std::string op;
    std::function<void()> backward_fn;
  };

  void record(std::string op, std::function<void()> backward_fn) {
    records_.push_back({std::move(op), std::move(backward_fn)});
  }

  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape. Grads accumulate;
  /// callers zero them between steps.
  void backward(Tensor loss);

 private:
  std::vector<Record> records_;
};

/// True when an op invoked with this tape pointer should record a backward
/// closure for the given inputs.
inline bool grad_enabled(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace bers
