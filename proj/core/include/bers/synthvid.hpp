#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bers/video.hpp"

namespace bers {

enum class DatasetKind : uint8_t { kMotion = 0, kStatic = 1, kMixed = 2 };

/// Motion classes are movement directions of a textured object over a noisy
/// background (appearance randomized per clip); static classes are object
/// shapes with zero motion; mixed is both with disjoint label ranges
/// (first classes/2 motion, rest static).
struct DatasetSpec {
  DatasetKind kind = DatasetKind::kMotion;
  int64_t classes = 8;
  int64_t clips_per_class = 64;
  int64_t frames = 8;
  int64_t height = 32;
  int64_t width = 32;
  int64_t object_min = 8;
  int64_t object_max = 12;
  double noise_amplitude = 0.05;
  double speed = 2.0;
  uint64_t seed = 0;

  void validate() const;
  /// Ground-truth (vx, vy) in px/frame for a label; (0,0) for static labels.
  void label_velocity(int64_t label, double& vx, double& vy) const;
  int64_t motion_classes() const;
};

enum class Split : uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

struct LabeledClip {
  VideoClip clip;
  int64_t label = 0;
  uint32_t id = 0;
  Split split = Split::kTrain;
  double vx = 0.0;  // generator ground truth, not serialized
  double vy = 0.0;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<LabeledClip> clips;

  std::vector<size_t> split_indices(Split split) const;
};

/// Deterministic in spec.seed, pure per clip id. Splits are 70/15/15 within
/// each class, assigned by clip order.
Dataset generate(const DatasetSpec& spec);

/// .bvds container: magic "BVDS", version u8=1, spec block, CRC32 of the clip
/// section, then per clip: id u32, label u16, T*H*W*3 bytes (RGB u8).
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

}  // namespace bers
