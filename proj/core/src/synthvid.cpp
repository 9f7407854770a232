#include "bers/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bers/io_util.hpp"

namespace bers {

GrayFrame luminance_frame(const VideoClip& clip, int64_t t) {
  GrayFrame g(clip.height, clip.width);
  for (int64_t y = 0; y < clip.height; ++y)
    for (int64_t x = 0; x < clip.width; ++x)
      g.at(y, x) =
          0.299 * clip.at(t, y, x, 0) + 0.587 * clip.at(t, y, x, 1) + 0.114 * clip.at(t, y, x, 2);
  return g;
}

std::vector<GrayFrame> luminance(const VideoClip& clip) {
  std::vector<GrayFrame> frames;
  frames.reserve(clip.frames);
  for (int64_t t = 0; t < clip.frames; ++t) frames.push_back(luminance_frame(clip, t));
  return frames;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double quant8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Shape alpha masks indexed by static class label.
bool shape_mask(int shape, int64_t size, int64_t dy, int64_t dx) {
  const double r = size / 2.0;
  const double cy = dy - (size - 1) / 2.0, cx = dx - (size - 1) / 2.0;
  switch (shape % 8) {
    case 0: return true;                                       // square
    case 1: return cy * cy + cx * cx <= r * r;                 // disc
    case 2: {                                                  // ring
      const double d2 = cy * cy + cx * cx;
      return d2 <= r * r && d2 >= (r / 2) * (r / 2);
    }
    case 3: return std::abs(cy) <= r / 2.5 || std::abs(cx) <= r / 2.5;  // cross
    case 4: return std::abs(cy) + std::abs(cx) <= r;           // diamond
    case 5: return std::abs(cy) <= r / 2.5;                    // horizontal bar
    case 6: return std::abs(cx) <= r / 2.5;                    // vertical bar
    case 7: return cx >= cy;                                   // half square (triangle)
    default: return true;
  }
}

VideoClip make_clip(const DatasetSpec& spec, int64_t label, uint32_t id, double vx, double vy,
                    int shape_override) {
  std::mt19937_64 rng(splitmix64(spec.seed * 0x100000001b3ULL + id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int64_t size =
      spec.object_min +
      static_cast<int64_t>(rng() % static_cast<uint64_t>(spec.object_max - spec.object_min + 1));
  const int shape = shape_override >= 0 ? shape_override : static_cast<int>(rng() % 2);

  // per-clip randomized appearance: texture patch riding on the object
  std::vector<double> texture(size * size * 3);
  double base[3];
  for (double& b : base) b = 0.4 + 0.6 * unit(rng);
  for (int64_t i = 0; i < size * size; ++i)
    for (int64_t c = 0; c < 3; ++c)
      texture[i * 3 + c] = std::clamp(base[c] + 0.4 * (unit(rng) - 0.5), 0.2, 1.0);

  // static per-clip background noise
  std::vector<double> background(spec.height * spec.width * 3);
  for (double& v : background) v = spec.noise_amplitude * unit(rng);

  const double cy0 = unit(rng) * spec.height;
  const double cx0 = unit(rng) * spec.width;

  VideoClip clip(spec.frames, spec.height, spec.width);
  for (int64_t t = 0; t < spec.frames; ++t) {
    for (int64_t y = 0; y < spec.height; ++y)
      for (int64_t x = 0; x < spec.width; ++x)
        for (int64_t c = 0; c < 3; ++c)
          clip.at(t, y, x, c) = quant8(background[(y * spec.width + x) * 3 + c]);
    // periodic wraparound placement, integer pixel grid
    const int64_t oy = static_cast<int64_t>(std::lround(cy0 + t * vy));
    const int64_t ox = static_cast<int64_t>(std::lround(cx0 + t * vx));
    for (int64_t dy = 0; dy < size; ++dy)
      for (int64_t dx = 0; dx < size; ++dx) {
        if (!shape_mask(shape, size, dy, dx)) continue;
        const int64_t y = ((oy + dy) % spec.height + spec.height) % spec.height;
        const int64_t x = ((ox + dx) % spec.width + spec.width) % spec.width;
        for (int64_t c = 0; c < 3; ++c)
          clip.at(t, y, x, c) = quant8(texture[(dy * size + dx) * 3 + c]);
      }
  }
  (void)label;
  return clip;
}

void write_spec(ByteWriter& w, const DatasetSpec& s) {
  w.u8(static_cast<uint8_t>(s.kind));
  w.u32(static_cast<uint32_t>(s.classes));
  w.u32(static_cast<uint32_t>(s.clips_per_class));
  w.u32(static_cast<uint32_t>(s.frames));
  w.u32(static_cast<uint32_t>(s.height));
  w.u32(static_cast<uint32_t>(s.width));
  w.u32(static_cast<uint32_t>(s.object_min));
  w.u32(static_cast<uint32_t>(s.object_max));
  w.f64(s.noise_amplitude);
  w.f64(s.speed);
  w.u64(s.seed);
}

DatasetSpec read_spec(ByteReader& r) {
  DatasetSpec s;
  s.kind = static_cast<DatasetKind>(r.u8());
  s.classes = r.u32();
  s.clips_per_class = r.u32();
  s.frames = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  s.object_min = r.u32();
  s.object_max = r.u32();
  s.noise_amplitude = r.f64();
  s.speed = r.f64();
  s.seed = r.u64();
  return s;
}

void assign_splits(Dataset& ds) {
  const int64_t n = ds.spec.clips_per_class;
  const int64_t n_val = std::max<int64_t>(1, n * 15 / 100);
  const int64_t n_test = std::max<int64_t>(1, n * 15 / 100);
  for (auto& lc : ds.clips) {
    const int64_t within = lc.id % n;  // clips generated class-major
    lc.split = within < n - n_val - n_test ? Split::kTrain
               : within < n - n_test      ? Split::kVal
                                          : Split::kTest;
  }
}

}  // namespace

int64_t DatasetSpec::motion_classes() const {
  switch (kind) {
    case DatasetKind::kMotion: return classes;
    case DatasetKind::kStatic: return 0;
    case DatasetKind::kMixed: return classes / 2;
  }
  return 0;
}

void DatasetSpec::validate() const {
  if (classes < 1 || clips_per_class < 1) throw ConfigError("dataset spec: empty dataset");
  if (frames < 2) throw ConfigError("dataset spec: clips need >= 2 frames");
  if (height < 1 || width < 1) throw ConfigError("dataset spec: empty frames");
  if (object_min < 1 || object_max < object_min)
    throw ConfigError("dataset spec: bad object size range");
  if (object_max > std::min(height, width))
    throw ConfigError("dataset spec: object larger than frame");
  if (noise_amplitude < 0.0 || noise_amplitude > 1.0)
    throw ConfigError("dataset spec: noise amplitude outside [0,1]");
  const int64_t mc = motion_classes();
  if (mc != 0) {
    if (mc != 4 && mc != 8)
      throw ConfigError("dataset spec: motion classes must be 4 or 8 directions");
    if (speed < 1.0) throw ConfigError("dataset spec: speed must be >= 1 px/frame");
  }
  if (kind == DatasetKind::kStatic && classes > 8)
    throw ConfigError("dataset spec: at most 8 static shape classes");
  if (kind == DatasetKind::kMixed && classes - classes / 2 > 8)
    throw ConfigError("dataset spec: at most 8 static shape classes in mixed datasets");
}

void DatasetSpec::label_velocity(int64_t label, double& vx, double& vy) const {
  const int64_t mc = motion_classes();
  if (label < mc) {
    const double angle = 2.0 * kPi * label / mc;
    vx = speed * std::cos(angle);
    vy = speed * std::sin(angle);
  } else {
    vx = 0.0;
    vy = 0.0;
  }
}

std::vector<size_t> Dataset::split_indices(Split split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == split) out.push_back(i);
  return out;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const int64_t mc = spec.motion_classes();
  uint32_t id = 0;
  for (int64_t label = 0; label < spec.classes; ++label) {
    double vx, vy;
    spec.label_velocity(label, vx, vy);
    const bool is_static = label >= mc;
    for (int64_t k = 0; k < spec.clips_per_class; ++k, ++id) {
      LabeledClip lc;
      lc.label = label;
      lc.id = id;
      lc.vx = vx;
      lc.vy = vy;
      // static classes are shape-defined; motion classes randomize shape
      lc.clip = make_clip(spec, label, id, vx, vy,
                          is_static ? static_cast<int>(label - mc) : -1);
      ds.clips.push_back(std::move(lc));
    }
  }
  // clips are generated class-major: id = label * clips_per_class + k
  std::sort(ds.clips.begin(), ds.clips.end(),
            [](const LabeledClip& a, const LabeledClip& b) { return a.id < b.id; });
  assign_splits(ds);
  return ds;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  ByteWriter clipsec;
  for (const LabeledClip& lc : dataset.clips) {
    clipsec.u32(lc.id);
    clipsec.u16(static_cast<uint16_t>(lc.label));
    const VideoClip& c = lc.clip;
    for (double v : c.rgb) clipsec.u8(static_cast<uint8_t>(std::lround(v * 255.0)));
  }
  ByteWriter w;
  w.bytes("BVDS", 4);
  w.u8(1);
  write_spec(w, dataset.spec);
  w.u32(crc32_of(clipsec.data().data(), clipsec.size()));
  w.bytes(clipsec.data().data(), clipsec.size());
  write_file(path, w.data());
}

Dataset read_dataset(const std::string& path) {
  ByteReader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "BVDS") throw FormatError("not a .bvds file: " + path);
  const uint8_t version = r.u8();
  if (version != 1) throw FormatError(".bvds version " + std::to_string(version) + " unsupported");
  Dataset ds;
  ds.spec = read_spec(r);
  ds.spec.validate();
  const uint32_t stored_crc = r.u32();
  const size_t payload_off = r.pos();
  if (crc32_of(r.data().data() + payload_off, r.remaining()) != stored_crc)
    throw IntegrityError(".bvds checksum mismatch: " + path);
  const int64_t total = ds.spec.classes * ds.spec.clips_per_class;
  const size_t clip_bytes = static_cast<size_t>(ds.spec.frames * ds.spec.height * ds.spec.width * 3);
  for (int64_t i = 0; i < total; ++i) {
    LabeledClip lc;
    lc.id = r.u32();
    lc.label = r.u16();
    if (lc.label >= ds.spec.classes) throw IntegrityError(".bvds label out of range");
    lc.clip = VideoClip(ds.spec.frames, ds.spec.height, ds.spec.width);
    std::vector<uint8_t> raw(clip_bytes);
    r.bytes(raw.data(), raw.size());
    for (size_t j = 0; j < raw.size(); ++j) lc.clip.rgb[j] = raw[j] / 255.0;
    ds.spec.label_velocity(lc.label, lc.vx, lc.vy);
    ds.clips.push_back(std::move(lc));
  }
  if (r.remaining() != 0) throw IntegrityError(".bvds has trailing bytes: " + path);
  assign_splits(ds);
  return ds;
}

}  // namespace bers
