#include "bers/net.hpp"

#include <cmath>
#include <random>

#include "bers/counters.hpp"
#include "bers/io_util.hpp"

namespace bers {

namespace {

int64_t conv_out(int64_t in, int64_t k, int64_t s, int64_t p) { return (in + 2 * p - k) / s + 1; }

struct Dims3 {
  int64_t t, h, w;
};

Dims3 stem_out(const BackboneConfig& c, int64_t t) {
  return {conv_out(t, 3, 1, 1), conv_out(c.clip_h, 7, 2, 3), conv_out(c.clip_w, 7, 2, 3)};
}

Dims3 stage_out(Dims3 d, bool downsample) {
  if (!downsample) return d;
  return {conv_out(d.t, 3, 2, 1), conv_out(d.h, 3, 2, 1), conv_out(d.w, 3, 2, 1)};
}

Dims3 dims_after_stage(const BackboneConfig& c, int64_t t, int stage) {
  Dims3 d = stem_out(c, t);
  for (int i = 0; i <= stage; ++i) d = stage_out(d, i > 0);
  return d;
}

struct Initializer {
  std::mt19937_64 rng;
  explicit Initializer(uint64_t seed) : rng(seed) {}

  Tensor conv_weight(Shape shape, int64_t groups) {
    const int64_t fan_in = shape[1] * shape[2] * shape[3] * shape[4];
    (void)groups;
    return he_normal(std::move(shape), fan_in);
  }
  Tensor fc_weight(int64_t k, int64_t d) { return he_normal({k, d}, d); }

  Tensor he_normal(Shape shape, int64_t fan_in) {
    Tensor t(std::move(shape), /*requires_grad=*/true);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : t.vec()) v = dist(rng);
    return t;
  }
};

// Backbone and bypass convs are always followed by batch norm, which cancels
// any additive bias; they are built without one (the bias tensor stays a
// frozen zero so conv3d's signature is satisfied).
Conv3dLayer make_conv(Initializer& init, int64_t out_ch, int64_t in_ch, std::array<int64_t, 3> k,
                      std::array<int64_t, 3> stride, std::array<int64_t, 3> pad, int64_t groups) {
  Conv3dLayer layer;
  layer.w = init.conv_weight({out_ch, in_ch / groups, k[0], k[1], k[2]}, groups);
  layer.b = Tensor::zeros({out_ch}, /*requires_grad=*/false);
  layer.spec = {stride, pad, groups};
  return layer;
}

BatchNorm3dLayer make_bn(int64_t channels) {
  BatchNorm3dLayer layer;
  layer.scale = Tensor::full({channels}, 1.0, /*requires_grad=*/true);
  layer.shift = Tensor::zeros({channels}, /*requires_grad=*/true);
  layer.state = BatchNormState(channels);
  return layer;
}

ResNextBlock make_block(Initializer& init, int64_t in_ch, int64_t width, int64_t stride,
                        int64_t cardinality) {
  ResNextBlock b;
  b.conv1 = make_conv(init, width, in_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
  b.bn1 = make_bn(width);
  b.conv2 = make_conv(init, width, width, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1},
                      cardinality);
  b.bn2 = make_bn(width);
  b.conv3 = make_conv(init, width, width, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
  b.bn3 = make_bn(width);
  b.has_proj = in_ch != width || stride != 1;
  if (b.has_proj) {
    b.proj = make_conv(init, width, in_ch, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0}, 1);
    b.proj_bn = make_bn(width);
  }
  return b;
}

BypassBlock make_bypass(Initializer& init, int64_t channels, int64_t cardinality) {
  BypassBlock b;
  b.conv1 = make_conv(init, channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, cardinality);
  b.bn1 = make_bn(channels);
  b.conv2 = make_conv(init, channels, channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, cardinality);
  b.bn2 = make_bn(channels);
  return b;
}

Backbone make_backbone(Initializer& init, const BackboneConfig& c, int64_t in_channels) {
  Backbone bb;
  bb.stem = make_conv(init, c.base_width, in_channels, {3, 7, 7}, {1, 2, 2}, {1, 3, 3}, 1);
  bb.stem_bn = make_bn(c.base_width);
  int64_t in_ch = c.base_width;
  for (int i = 0; i < 4; ++i) {
    const int64_t width = c.base_width << i;
    std::vector<ResNextBlock> stage;
    for (int64_t j = 0; j < c.stage_blocks[i]; ++j) {
      const int64_t stride = (j == 0 && i > 0) ? 2 : 1;
      stage.push_back(make_block(init, j == 0 ? in_ch : width, width, stride, c.cardinality));
    }
    bb.stages.push_back(std::move(stage));
    in_ch = width;
  }
  return bb;
}

void collect_conv(NamedParams& out, const std::string& prefix, Conv3dLayer& l) {
  out.emplace_back(prefix + ".w", l.w);
}

void collect_bn(NamedParams& out, const std::string& prefix, BatchNorm3dLayer& l) {
  out.emplace_back(prefix + ".scale", l.scale);
  out.emplace_back(prefix + ".shift", l.shift);
}

void collect_bn_buffers(NamedBuffers& out, const std::string& prefix, BatchNorm3dLayer& l) {
  out.emplace_back(prefix + ".running_mean", &l.state.running_mean);
  out.emplace_back(prefix + ".running_var", &l.state.running_var);
}

void collect_block(NamedParams& p, const std::string& prefix, ResNextBlock& b) {
  collect_conv(p, prefix + ".conv1", b.conv1);
  collect_bn(p, prefix + ".bn1", b.bn1);
  collect_conv(p, prefix + ".conv2", b.conv2);
  collect_bn(p, prefix + ".bn2", b.bn2);
  collect_conv(p, prefix + ".conv3", b.conv3);
  collect_bn(p, prefix + ".bn3", b.bn3);
  if (b.has_proj) {
    collect_conv(p, prefix + ".proj", b.proj);
    collect_bn(p, prefix + ".proj_bn", b.proj_bn);
  }
}

void collect_block_buffers(NamedBuffers& p, const std::string& prefix, ResNextBlock& b) {
  collect_bn_buffers(p, prefix + ".bn1", b.bn1);
  collect_bn_buffers(p, prefix + ".bn2", b.bn2);
  collect_bn_buffers(p, prefix + ".bn3", b.bn3);
  if (b.has_proj) collect_bn_buffers(p, prefix + ".proj_bn", b.proj_bn);
}

void collect_backbone(NamedParams& p, Backbone& bb) {
  collect_conv(p, "stem", bb.stem);
  collect_bn(p, "stem_bn", bb.stem_bn);
  for (size_t i = 0; i < bb.stages.size(); ++i)
    for (size_t j = 0; j < bb.stages[i].size(); ++j)
      collect_block(p, "stage" + std::to_string(i + 1) + ".block" + std::to_string(j),
                    bb.stages[i][j]);
}

void collect_backbone_buffers(NamedBuffers& p, Backbone& bb) {
  collect_bn_buffers(p, "stem_bn", bb.stem_bn);
  for (size_t i = 0; i < bb.stages.size(); ++i)
    for (size_t j = 0; j < bb.stages[i].size(); ++j)
      collect_block_buffers(p, "stage" + std::to_string(i + 1) + ".block" + std::to_string(j),
                            bb.stages[i][j]);
}

void collect_bypass(NamedParams& p, const std::string& prefix, BypassBlock& b) {
  collect_conv(p, prefix + ".conv1", b.conv1);
  collect_bn(p, prefix + ".bn1", b.bn1);
  collect_conv(p, prefix + ".conv2", b.conv2);
  collect_bn(p, prefix + ".bn2", b.bn2);
}

void collect_bypass_buffers(NamedBuffers& p, const std::string& prefix, BypassBlock& b) {
  collect_bn_buffers(p, prefix + ".bn1", b.bn1);
  collect_bn_buffers(p, prefix + ".bn2", b.bn2);
}

}  // namespace

void BackboneConfig::validate() const {
  if (base_width < 1 || cardinality < 1) throw ConfigError("config: widths must be positive");
  if (base_width % cardinality != 0)
    throw ConfigError("config: base width " + std::to_string(base_width) +
                      " not divisible by cardinality " + std::to_string(cardinality));
  for (int64_t n : stage_blocks)
    if (n < 1) throw ConfigError("config: every stage needs >= 1 block");
  if (input_channels < 1) throw ConfigError("config: input channels must be positive");
  if (clip_t < 2) throw ConfigError("config: clips need >= 2 frames");
  if (classes < 2) throw ConfigError("config: need >= 2 classes");
  const Shape fs = feature_shape(clip_t);
  for (int64_t d : fs)
    if (d < 1) throw ConfigError("config: clip too small for the stride schedule");
  const Shape ft = feature_shape(clip_t - 1);
  if (fs != ft)
    throw ConfigError("config: teacher feature shape " + shape_str(ft) +
                      " differs from student " + shape_str(fs) +
                      "; the distillation term would be ill-typed");
}

Shape BackboneConfig::feature_shape(int64_t t) const {
  const Dims3 d = dims_after_stage(*this, t, 3);
  return {base_width * 8, d.t, d.h, d.w};
}

Shape BackboneConfig::penultimate_shape(int64_t t) const {
  const Dims3 d = dims_after_stage(*this, t, 2);
  return {base_width * 4, d.t, d.h, d.w};
}

int64_t BackboneConfig::fusion_dim() const { return base_width * 4 + base_width * 8 * 2; }

Tensor ResNextBlock::forward(Tape* tape, const Tensor& x, Mode mode) {
  Tensor h = relu(tape, bn1.forward(tape, conv1.forward(tape, x), mode));
  h = relu(tape, bn2.forward(tape, conv2.forward(tape, h), mode));
  h = bn3.forward(tape, conv3.forward(tape, h), mode);
  Tensor skip = has_proj ? proj_bn.forward(tape, proj.forward(tape, x), mode) : x;
  return relu(tape, add(tape, h, skip));
}

Tensor BypassBlock::forward(Tape* tape, const Tensor& x, Mode mode) {
  Tensor h = relu(tape, bn1.forward(tape, conv1.forward(tape, x), mode));
  h = bn2.forward(tape, conv2.forward(tape, h), mode);
  return relu(tape, add(tape, h, x));
}

Backbone::Maps Backbone::forward(Tape* tape, const Tensor& x, Mode mode) {
  Tensor h = relu(tape, stem_bn.forward(tape, stem.forward(tape, x), mode));
  Tensor penultimate;
  for (size_t i = 0; i < stages.size(); ++i) {
    for (ResNextBlock& block : stages[i]) h = block.forward(tape, h, mode);
    if (i + 2 == stages.size()) penultimate = h;
  }
  return {penultimate, h};
}

NamedParams StudentNet::named_parameters() {
  NamedParams p;
  collect_backbone(p, backbone);
  collect_bypass(p, "bypass1", bypass1);
  collect_bypass(p, "bypass2", bypass2);
  p.emplace_back("fc.w", fc_w);
  p.emplace_back("fc.b", fc_b);
  return p;
}

NamedBuffers StudentNet::named_buffers() {
  NamedBuffers p;
  collect_backbone_buffers(p, backbone);
  collect_bypass_buffers(p, "bypass1", bypass1);
  collect_bypass_buffers(p, "bypass2", bypass2);
  return p;
}

NamedParams TeacherNet::named_parameters() {
  NamedParams p;
  collect_backbone(p, backbone);
  p.emplace_back("fc.w", fc_w);
  p.emplace_back("fc.b", fc_b);
  return p;
}

NamedBuffers TeacherNet::named_buffers() {
  NamedBuffers p;
  collect_backbone_buffers(p, backbone);
  return p;
}

std::vector<Tensor> StudentNet::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor> TeacherNet::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void StudentNet::set_requires_grad(bool value) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(value);
}

void TeacherNet::set_requires_grad(bool value) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(value);
}

StudentNet build_student(const BackboneConfig& config, uint64_t seed) {
  config.validate();
  Initializer init(seed);
  StudentNet net;
  net.config = config;
  net.backbone = make_backbone(init, config, config.input_channels);
  net.bypass1 = make_bypass(init, config.base_width * 4, config.cardinality);
  net.bypass2 = make_bypass(init, config.base_width * 8, config.cardinality);
  net.fc_w = init.fc_weight(config.classes, config.fusion_dim());
  net.fc_b = Tensor::zeros({config.classes}, /*requires_grad=*/true);
  return net;
}

TeacherNet build_teacher(const BackboneConfig& config, uint64_t seed) {
  config.validate();
  Initializer init(seed);
  TeacherNet net;
  net.config = config;
  net.backbone = make_backbone(init, config, /*in_channels=*/2);
  net.fc_w = init.fc_weight(config.classes, config.base_width * 8);
  net.fc_b = Tensor::zeros({config.classes}, /*requires_grad=*/true);
  return net;
}

StudentForward forward_student(StudentNet& net, Tape* tape, const Tensor& clips, Mode mode) {
  const BackboneConfig& c = net.config;
  if (clips.rank() != 5 || clips.dim(1) != c.input_channels || clips.dim(2) != c.clip_t ||
      clips.dim(3) != c.clip_h || clips.dim(4) != c.clip_w)
    throw DimensionError("forward_student: expected [N," + std::to_string(c.input_channels) + "," +
                         std::to_string(c.clip_t) + "," + std::to_string(c.clip_h) + "," +
                         std::to_string(c.clip_w) + "], got " + shape_str(clips.shape()));
  counters().student_forwards += static_cast<uint64_t>(clips.dim(0));

  Backbone::Maps maps = net.backbone.forward(tape, clips, mode);
  StudentForward out;
  out.feature2 = maps.final;
  out.pooled1 = global_avg_pool(tape, net.bypass1.forward(tape, maps.penultimate, mode));
  out.pooled2 = global_avg_pool(tape, net.bypass2.forward(tape, maps.final, mode));
  out.pooled3 = global_avg_pool(tape, maps.final);
  Tensor fused = concat_cols(tape, {out.pooled1, out.pooled2, out.pooled3});
  out.logits = fully_connected(tape, fused, net.fc_w, net.fc_b);
  return out;
}

TeacherForward forward_teacher(TeacherNet& net, Tape* tape, const Tensor& flows, Mode mode) {
  const BackboneConfig& c = net.config;
  if (flows.rank() != 5 || flows.dim(1) != 2 || flows.dim(2) != c.clip_t - 1 ||
      flows.dim(3) != c.clip_h || flows.dim(4) != c.clip_w)
    throw DimensionError("forward_teacher: expected [N,2," + std::to_string(c.clip_t - 1) + "," +
                         std::to_string(c.clip_h) + "," + std::to_string(c.clip_w) + "], got " +
                         shape_str(flows.shape()));
  counters().teacher_forwards += static_cast<uint64_t>(flows.dim(0));

  Backbone::Maps maps = net.backbone.forward(tape, flows, mode);
  TeacherForward out;
  out.feature1 = maps.final;
  Tensor pooled = global_avg_pool(tape, maps.final);
  out.logits = fully_connected(tape, pooled, net.fc_w, net.fc_b);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr uint8_t kTagTeacher = 0;
constexpr uint8_t kTagStudent = 1;

void write_config(ByteWriter& w, const BackboneConfig& c) {
  for (int64_t n : c.stage_blocks) w.u32(static_cast<uint32_t>(n));
  w.u32(static_cast<uint32_t>(c.base_width));
  w.u32(static_cast<uint32_t>(c.cardinality));
  w.u32(static_cast<uint32_t>(c.input_channels));
  w.u32(static_cast<uint32_t>(c.clip_t));
  w.u32(static_cast<uint32_t>(c.clip_h));
  w.u32(static_cast<uint32_t>(c.clip_w));
  w.u32(static_cast<uint32_t>(c.classes));
}

BackboneConfig read_config(ByteReader& r) {
  BackboneConfig c;
  for (int64_t& n : c.stage_blocks) n = r.u32();
  c.base_width = r.u32();
  c.cardinality = r.u32();
  c.input_channels = r.u32();
  c.clip_t = r.u32();
  c.clip_h = r.u32();
  c.clip_w = r.u32();
  c.classes = r.u32();
  return c;
}

void write_named_tensor(ByteWriter& w, const std::string& name, const Shape& shape,
                        const std::vector<double>& data) {
  w.str(name);
  w.u8(static_cast<uint8_t>(shape.size()));
  for (int64_t d : shape) w.u32(static_cast<uint32_t>(d));
  for (double v : data) w.f64(v);
}

void save_impl(const std::string& path, uint8_t tag, const BackboneConfig& config,
               const CheckpointMeta& meta, NamedParams params, NamedBuffers buffers) {
  ByteWriter tensors;
  tensors.u32(static_cast<uint32_t>(params.size() + buffers.size()));
  for (auto& [name, t] : params) write_named_tensor(tensors, name, t.shape(), t.vec());
  for (auto& [name, buf] : buffers)
    write_named_tensor(tensors, name, {static_cast<int64_t>(buf->size())}, *buf);

  ByteWriter w;
  w.bytes("BCK1", 4);
  w.u8(1);  // format version
  w.u8(tag);
  write_config(w, config);
  w.u32(meta.epoch);
  w.f64(meta.lambda);
  w.u64(meta.seed);
  w.u32(crc32_of(tensors.data().data(), tensors.size()));
  w.bytes(tensors.data().data(), tensors.size());
  write_file(path, w.data());
}

struct LoadedCheckpoint {
  uint8_t tag;
  BackboneConfig config;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> tensors;
};

LoadedCheckpoint load_impl(const std::string& path) {
  ByteReader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "BCK1") throw FormatError("not a .bck checkpoint: " + path);
  const uint8_t version = r.u8();
  if (version != 1) throw FormatError(".bck version " + std::to_string(version) + " unsupported");
  LoadedCheckpoint out;
  out.tag = r.u8();
  out.config = read_config(r);
  out.meta.epoch = r.u32();
  out.meta.lambda = r.f64();
  out.meta.seed = r.u64();
  const uint32_t stored_crc = r.u32();
  if (crc32_of(r.data().data() + r.pos(), r.remaining()) != stored_crc)
    throw IntegrityError(".bck checksum mismatch: " + path);
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const uint8_t rank = r.u8();
    Shape shape(rank);
    int64_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      numel *= d;
    }
    std::vector<double> data(static_cast<size_t>(numel));
    for (double& v : data) v = r.f64();
    out.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw IntegrityError(".bck has trailing bytes: " + path);
  return out;
}

void apply_tensors(const LoadedCheckpoint& ck, NamedParams params, NamedBuffers buffers,
                   const std::string& path) {
  size_t idx = 0;
  auto next = [&](const std::string& name) -> const std::pair<Shape, std::vector<double>>& {
    if (idx >= ck.tensors.size() || ck.tensors[idx].first != name)
      throw FormatError(".bck tensor order mismatch at '" + name + "': " + path);
    return ck.tensors[idx++].second;
  };
  for (auto& [name, t] : params) {
    const auto& [shape, data] = next(name);
    if (shape != t.shape())
      throw ConfigError(".bck tensor '" + name + "' shape " + shape_str(shape) +
                        " does not match model " + shape_str(t.shape()));
    t.vec() = data;
  }
  for (auto& [name, buf] : buffers) {
    const auto& [shape, data] = next(name);
    if (data.size() != buf->size())
      throw ConfigError(".bck buffer '" + name + "' size mismatch");
    *buf = data;
  }
  if (idx != ck.tensors.size()) throw FormatError(".bck contains unexpected extra tensors");
}

template <typename Net>
std::string hash_impl(Net& net) {
  ByteWriter w;
  for (auto& [name, t] : net.named_parameters()) {
    w.str(name);
    for (double v : t.vec()) w.f64(v);
  }
  for (auto& [name, buf] : net.named_buffers()) {
    w.str(name);
    for (double v : *buf) w.f64(v);
  }
  return sha256_hex(w.data().data(), w.size());
}

}  // namespace

void save_checkpoint(StudentNet& net, const std::string& path, const CheckpointMeta& meta) {
  save_impl(path, kTagStudent, net.config, meta, net.named_parameters(), net.named_buffers());
}

void save_checkpoint(TeacherNet& net, const std::string& path, const CheckpointMeta& meta) {
  save_impl(path, kTagTeacher, net.config, meta, net.named_parameters(), net.named_buffers());
}

StudentNet load_student_checkpoint(const std::string& path, CheckpointMeta* meta) {
  LoadedCheckpoint ck = load_impl(path);
  if (ck.tag != kTagStudent)
    throw ConfigError("checkpoint is not a student network: " + path);
  StudentNet net = build_student(ck.config, ck.meta.seed);
  apply_tensors(ck, net.named_parameters(), net.named_buffers(), path);
  if (meta) *meta = ck.meta;
  return net;
}

TeacherNet load_teacher_checkpoint(const std::string& path, CheckpointMeta* meta) {
  LoadedCheckpoint ck = load_impl(path);
  if (ck.tag != kTagTeacher)
    throw ConfigError("checkpoint is not a teacher network: " + path);
  TeacherNet net = build_teacher(ck.config, ck.meta.seed);
  apply_tensors(ck, net.named_parameters(), net.named_buffers(), path);
  if (meta) *meta = ck.meta;
  return net;
}

bool checkpoint_is_student(const std::string& path) {
  return load_impl(path).tag == kTagStudent;
}

std::string parameter_hash(StudentNet& net) { return hash_impl(net); }
std::string parameter_hash(TeacherNet& net) { return hash_impl(net); }

}  // namespace bers
