#pragma once

#include <string>
#include <vector>

#include "bers/tvl1.hpp"

namespace bers {

/// Two u8 planes (u then v), values clamped to [-bound, bound] and mapped
/// linearly onto [0,255] with round-half-up.
struct QuantizedFlow {
  int64_t height = 0;
  int64_t width = 0;
  double bound = 20.0;
  std::vector<uint8_t> u;
  std::vector<uint8_t> v;
};

QuantizedFlow quantize_flow(const FlowField& field, double bound = 20.0);
FlowField dequantize_flow(const QuantizedFlow& q);

uint8_t quantize_component(double value, double bound);
double dequantize_component(uint8_t byte, double bound);

/// .bflo container: magic "BFLO", version u8=1, u32 LE height, u32 LE width,
/// f64 bound, then height*width bytes of u plane followed by the v plane.
void write_bflo(const std::string& path, const QuantizedFlow& q);
QuantizedFlow read_bflo(const std::string& path);

}  // namespace bers
