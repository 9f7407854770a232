#pragma once

#include <atomic>
#include <cstdint>

namespace bers {

/// Process-wide instrumentation proving which pipelines ran: the RGB-only
/// inference path must leave tvl1_calls and teacher_forwards at zero.
struct Counters {
  std::atomic<uint64_t> tvl1_calls{0};
  std::atomic<uint64_t> teacher_forwards{0};
  std::atomic<uint64_t> student_forwards{0};

  void reset() {
    tvl1_calls = 0;
    teacher_forwards = 0;
    student_forwards = 0;
  }
};

Counters& counters();

}  // namespace bers
