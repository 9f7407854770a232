#include "bers/flow_io.hpp"

#include <algorithm>
#include <cmath>

#include "bers/io_util.hpp"

namespace bers {

uint8_t quantize_component(double value, double bound) {
  const double clamped = std::clamp(value, -bound, bound);
  const double scaled = (clamped + bound) / (2.0 * bound) * 255.0;
  return static_cast<uint8_t>(std::floor(scaled + 0.5));  // half-up
}

double dequantize_component(uint8_t byte, double bound) {
  return static_cast<double>(byte) / 255.0 * 2.0 * bound - bound;
}

QuantizedFlow quantize_flow(const FlowField& field, double bound) {
  if (bound <= 0.0) throw ConfigError("quantize_flow: bound must be positive");
  QuantizedFlow q;
  q.height = field.height;
  q.width = field.width;
  q.bound = bound;
  q.u.resize(field.u.size());
  q.v.resize(field.v.size());
  for (size_t i = 0; i < field.u.size(); ++i) q.u[i] = quantize_component(field.u[i], bound);
  for (size_t i = 0; i < field.v.size(); ++i) q.v[i] = quantize_component(field.v[i], bound);
  return q;
}

FlowField dequantize_flow(const QuantizedFlow& q) {
  FlowField f(q.height, q.width);
  for (size_t i = 0; i < q.u.size(); ++i) f.u[i] = dequantize_component(q.u[i], q.bound);
  for (size_t i = 0; i < q.v.size(); ++i) f.v[i] = dequantize_component(q.v[i], q.bound);
  return f;
}

void write_bflo(const std::string& path, const QuantizedFlow& q) {
  ByteWriter w;
  w.bytes("BFLO", 4);
  w.u8(1);
  w.u32(static_cast<uint32_t>(q.height));
  w.u32(static_cast<uint32_t>(q.width));
  w.f64(q.bound);
  w.bytes(q.u.data(), q.u.size());
  w.bytes(q.v.data(), q.v.size());
  write_file(path, w.data());
}

QuantizedFlow read_bflo(const std::string& path) {
  ByteReader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "BFLO") throw FormatError("not a .bflo file: " + path);
  const uint8_t version = r.u8();
  if (version != 1) throw FormatError(".bflo version " + std::to_string(version) + " unsupported");
  QuantizedFlow q;
  q.height = r.u32();
  q.width = r.u32();
  q.bound = r.f64();
  const size_t n = static_cast<size_t>(q.height * q.width);
  q.u.resize(n);
  q.v.resize(n);
  r.bytes(q.u.data(), n);
  r.bytes(q.v.data(), n);
  if (r.remaining() != 0) throw IntegrityError(".bflo has trailing bytes: " + path);
  return q;
}

}  // namespace bers
