#include "bers/counters.hpp"

namespace bers {

Counters& counters() {
  static Counters instance;
  return instance;
}

}  // namespace bers
