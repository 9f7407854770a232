#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bers/ops.hpp"

namespace bers {

/// Scaled 3D ResNeXt-style backbone configuration shared by teacher and
/// student. The derived final feature-map shape must be identical for both
/// (teacher consumes T-1 flow frames) so the distillation term is well-typed.
struct BackboneConfig {
  std::array<int64_t, 4> stage_blocks{1, 1, 1, 1};
  int64_t base_width = 8;
  int64_t cardinality = 4;
  int64_t input_channels = 3;  // student; the flow teacher always uses 2
  int64_t clip_t = 8;
  int64_t clip_h = 32;
  int64_t clip_w = 32;
  int64_t classes = 8;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;

  /// [C,T',H',W'] of the final stage for an input of t frames.
  Shape feature_shape(int64_t t) const;
  /// Output shape of the penultimate stage (bypass 1 tap point).
  Shape penultimate_shape(int64_t t) const;
  /// Fusion head input width: pooled1 + pooled2 + pooled3.
  int64_t fusion_dim() const;
};

struct Conv3dLayer {
  Tensor w, b;
  Conv3dSpec spec;
  Tensor forward(Tape* tape, const Tensor& x) const { return conv3d(tape, x, w, b, spec); }
};

struct BatchNorm3dLayer {
  Tensor scale, shift;
  BatchNormState state;
  Tensor forward(Tape* tape, const Tensor& x, Mode mode) {
    return batch_norm(tape, x, scale, shift, state, mode);
  }
};

/// ResNeXt bottleneck: 1x1x1 -> grouped 3x3x3 (stride here) -> 1x1x1, with a
/// projection skip when the shape changes.
struct ResNextBlock {
  Conv3dLayer conv1, conv2, conv3;
  BatchNorm3dLayer bn1, bn2, bn3;
  bool has_proj = false;
  Conv3dLayer proj;
  BatchNorm3dLayer proj_bn;

  Tensor forward(Tape* tape, const Tensor& x, Mode mode);
};

/// Channel-preserving bypass unit: two grouped 3x3x3 convs with norm+ReLU and
/// an identity skip.
struct BypassBlock {
  Conv3dLayer conv1, conv2;
  BatchNorm3dLayer bn1, bn2;

  Tensor forward(Tape* tape, const Tensor& x, Mode mode);
};

struct Backbone {
  Conv3dLayer stem;
  BatchNorm3dLayer stem_bn;
  std::vector<std::vector<ResNextBlock>> stages;

  struct Maps {
    Tensor penultimate;  // output of stage 3
    Tensor final;        // output of stage 4
  };
  Maps forward(Tape* tape, const Tensor& x, Mode mode);
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;
using NamedBuffers = std::vector<std::pair<std::string, std::vector<double>*>>;

struct StudentForward {
  Tensor logits;    // [N,K]
  Tensor feature2;  // final feature map, matched against the teacher
  Tensor pooled1, pooled2, pooled3;
};

struct StudentNet {
  BackboneConfig config;
  Backbone backbone;
  BypassBlock bypass1, bypass2;
  Tensor fc_w, fc_b;

  NamedParams named_parameters();
  NamedBuffers named_buffers();
  std::vector<Tensor> parameters();
  void set_requires_grad(bool value);
};

struct TeacherNet {
  BackboneConfig config;
  Backbone backbone;
  Tensor fc_w, fc_b;

  NamedParams named_parameters();
  NamedBuffers named_buffers();
  std::vector<Tensor> parameters();
  void set_requires_grad(bool value);
};

/// Deterministic He-style initialization from the seed.
StudentNet build_student(const BackboneConfig& config, uint64_t seed);
TeacherNet build_teacher(const BackboneConfig& config, uint64_t seed);

StudentForward forward_student(StudentNet& net, Tape* tape, const Tensor& clips, Mode mode);

struct TeacherForward {
  Tensor logits;
  Tensor feature1;
};
TeacherForward forward_teacher(TeacherNet& net, Tape* tape, const Tensor& flows, Mode mode);

struct CheckpointMeta {
  uint32_t epoch = 0;
  double lambda = 0.0;
  uint64_t seed = 0;
};

/// .bck container: magic "BCK1", type tag, config and metadata block, CRC32
/// of the tensor section, then named tensors.
void save_checkpoint(StudentNet& net, const std::string& path, const CheckpointMeta& meta = {});
void save_checkpoint(TeacherNet& net, const std::string& path, const CheckpointMeta& meta = {});
StudentNet load_student_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);
TeacherNet load_teacher_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

/// True when the file's type tag marks a student checkpoint.
bool checkpoint_is_student(const std::string& path);

/// SHA-256 over all parameters and running stats in naming order.
std::string parameter_hash(StudentNet& net);
std::string parameter_hash(TeacherNet& net);

}  // namespace bers
