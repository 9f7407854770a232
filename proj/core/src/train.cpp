#include "bers/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bers/io_util.hpp"
#include "bers/optim.hpp"

namespace bers {

namespace {

uint64_t fnv64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t tvl1_params_hash(const Tvl1Params& p) {
  uint64_t h = fnv64(&p.data_weight, sizeof(double));
  h = fnv64(&p.tightness, sizeof(double), h);
  h = fnv64(&p.dual_step, sizeof(double), h);
  h = fnv64(&p.warps, sizeof(int), h);
  h = fnv64(&p.inner_iterations, sizeof(int), h);
  h = fnv64(&p.scale_factor, sizeof(double), h);
  h = fnv64(&p.max_levels, sizeof(int), h);
  h = fnv64(&p.stop_epsilon, sizeof(double), h);
  return h;
}

// f64 flow cache file, internal to FlowProvider.
void write_flow_cache(const std::string& path, uint64_t phash, const FlowStack& stack) {
  ByteWriter body;
  body.u64(phash);
  body.u32(static_cast<uint32_t>(stack.size()));
  body.u32(stack.empty() ? 0 : static_cast<uint32_t>(stack[0].height));
  body.u32(stack.empty() ? 0 : static_cast<uint32_t>(stack[0].width));
  for (const FlowField& f : stack) {
    for (double v : f.u) body.f64(v);
    for (double v : f.v) body.f64(v);
  }
  ByteWriter w;
  w.bytes("BFC1", 4);
  w.u32(crc32_of(body.data().data(), body.size()));
  w.bytes(body.data().data(), body.size());
  write_file(path, w.data());
}

std::optional<FlowStack> read_flow_cache(const std::string& path, uint64_t phash) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  ByteReader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "BFC1") return std::nullopt;
  const uint32_t crc = r.u32();
  if (crc32_of(r.data().data() + r.pos(), r.remaining()) != crc) return std::nullopt;
  if (r.u64() != phash) return std::nullopt;
  const uint32_t count = r.u32();
  const uint32_t h = r.u32(), w = r.u32();
  FlowStack stack;
  stack.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    FlowField f(h, w);
    for (double& v : f.u) v = r.f64();
    for (double& v : f.v) v = r.f64();
    stack.push_back(std::move(f));
  }
  return stack;
}

double batch_accuracy(const Tensor& logits, const std::vector<int64_t>& labels) {
  const int64_t n = logits.dim(0), k = logits.dim(1);
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / n;
}

std::vector<std::vector<size_t>> make_batches(std::vector<size_t> indices, int batch_size,
                                              uint64_t seed, int epoch) {
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < indices.size(); i += batch_size) {
    std::vector<size_t> b(indices.begin() + i,
                          indices.begin() + std::min(indices.size(), i + batch_size));
    if (static_cast<int>(b.size()) >= 2) batches.push_back(std::move(b));
  }
  return batches;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.lr_milestones)
    if (epoch >= m) lr *= cfg.lr_decay_factor;
  return lr;
}

template <typename Forward>
EvalResult evaluate_impl(const Dataset& dataset, Split split, int64_t classes, Forward&& fwd) {
  EvalResult res;
  res.indices = dataset.split_indices(split);
  if (res.indices.empty()) throw DataError("evaluate: empty dataset split");
  res.per_class_accuracy.assign(classes, 0.0);
  res.per_class_total.assign(classes, 0);
  std::vector<int64_t> correct(classes, 0);
  constexpr size_t kChunk = 8;
  for (size_t i = 0; i < res.indices.size(); i += kChunk) {
    std::vector<size_t> chunk(res.indices.begin() + i,
                              res.indices.begin() + std::min(res.indices.size(), i + kChunk));
    Tensor logits = fwd(chunk);
    const int64_t k = logits.dim(1);
    for (size_t j = 0; j < chunk.size(); ++j) {
      const double* row = logits.data() + j * k;
      int64_t best = 0;
      for (int64_t c = 1; c < k; ++c)
        if (row[c] > row[best]) best = c;
      res.predictions.push_back(best);
      const int64_t label = dataset.clips[chunk[j]].label;
      res.per_class_total[label]++;
      if (best == label) correct[label]++;
    }
  }
  int64_t total_correct = 0;
  for (int64_t c = 0; c < classes; ++c) {
    total_correct += correct[c];
    res.per_class_accuracy[c] =
        res.per_class_total[c] ? static_cast<double>(correct[c]) / res.per_class_total[c] : 0.0;
  }
  res.accuracy = static_cast<double>(total_correct) / res.indices.size();
  return res;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train config: batch size must be >= 2 (batch norm)");
  if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train config: momentum in [0,1)");
  if (lambda < 0.0) throw ConfigError("train config: lambda must be >= 0");
}

BackboneConfig config_for(const Dataset& dataset, const TrainConfig& cfg) {
  BackboneConfig c;
  c.base_width = cfg.base_width;
  c.cardinality = cfg.cardinality;
  c.input_channels = 3;
  c.clip_t = dataset.spec.frames;
  c.clip_h = dataset.spec.height;
  c.clip_w = dataset.spec.width;
  c.classes = dataset.spec.classes;
  c.validate();
  return c;
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "epoch,L_a,Loss1,total,train_acc,val_acc,seconds\n";
  for (const EpochRecord& e : epochs) {
    out.precision(17);
    out << e.epoch << ',' << e.la << ',' << e.loss1 << ',' << e.total << ',' << e.train_acc << ','
        << e.val_acc << ',' << e.seconds << '\n';
  }
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  write_csv(out);
}

FlowProvider::FlowProvider(const Dataset& dataset, Tvl1Params params,
                           std::optional<std::string> cache_dir)
    : dataset_(dataset), params_(params), cache_dir_(std::move(cache_dir)),
      params_hash_(tvl1_params_hash(params)) {
  params_.validate();
  if (cache_dir_) std::filesystem::create_directories(*cache_dir_);
}

const FlowStack& FlowProvider::get(size_t clip_index) {
  const LabeledClip& lc = dataset_.clips.at(clip_index);
  auto it = memo_.find(lc.id);
  if (it != memo_.end()) return it->second;
  if (cache_dir_) {
    const std::string path = *cache_dir_ + "/flow_" + std::to_string(lc.id) + "_" +
                             std::to_string(params_hash_) + ".bfc";
    if (auto cached = read_flow_cache(path, params_hash_))
      return memo_.emplace(lc.id, std::move(*cached)).first->second;
    FlowStack stack = clip_flow_stack(lc.clip, params_);
    write_flow_cache(path, params_hash_, stack);
    return memo_.emplace(lc.id, std::move(stack)).first->second;
  }
  return memo_.emplace(lc.id, clip_flow_stack(lc.clip, params_)).first->second;
}

Tensor clips_to_tensor(const Dataset& dataset, const std::vector<size_t>& indices) {
  const DatasetSpec& s = dataset.spec;
  const int64_t n = static_cast<int64_t>(indices.size());
  Tensor t({n, 3, s.frames, s.height, s.width});
  for (int64_t i = 0; i < n; ++i) {
    const VideoClip& c = dataset.clips[indices[i]].clip;
    for (int64_t f = 0; f < s.frames; ++f)
      for (int64_t y = 0; y < s.height; ++y)
        for (int64_t x = 0; x < s.width; ++x)
          for (int64_t ch = 0; ch < 3; ++ch)
            t.data()[(((i * 3 + ch) * s.frames + f) * s.height + y) * s.width + x] =
                c.at(f, y, x, ch);
  }
  return t;
}

Tensor flows_to_tensor(FlowProvider& flows, const std::vector<size_t>& indices) {
  const FlowStack& first = flows.get(indices.at(0));
  const int64_t tm1 = static_cast<int64_t>(first.size());
  const int64_t h = first[0].height, w = first[0].width;
  const int64_t n = static_cast<int64_t>(indices.size());
  Tensor t({n, 2, tm1, h, w});
  for (int64_t i = 0; i < n; ++i) {
    const FlowStack& stack = flows.get(indices[i]);
    for (int64_t f = 0; f < tm1; ++f) {
      double* up = t.data() + (((i * 2 + 0) * tm1 + f) * h) * w;
      double* vp = t.data() + (((i * 2 + 1) * tm1 + f) * h) * w;
      std::copy(stack[f].u.begin(), stack[f].u.end(), up);
      std::copy(stack[f].v.begin(), stack[f].v.end(), vp);
    }
  }
  return t;
}

std::vector<int64_t> labels_of(const Dataset& dataset, const std::vector<size_t>& indices) {
  std::vector<int64_t> labels;
  labels.reserve(indices.size());
  for (size_t i : indices) labels.push_back(dataset.clips[i].label);
  return labels;
}

LossReport compute_student_loss(Tape& tape, StudentNet& student, TeacherNet& teacher,
                                const Tensor& clips, const Tensor& flows,
                                const std::vector<int64_t>& labels, double lambda) {
  if (lambda < 0.0) throw ConfigError("compute_student_loss: lambda must be >= 0");
  if (teacher.config.feature_shape(teacher.config.clip_t - 1) !=
      student.config.feature_shape(student.config.clip_t))
    throw ConfigError("compute_student_loss: teacher/student feature shapes differ");

  // teacher runs off-tape in eval mode; its features enter the loss as
  // constants, so only student parameters receive gradient
  TeacherForward tf = forward_teacher(teacher, nullptr, flows, Mode::kEval);
  StudentForward sf = forward_student(student, &tape, clips, Mode::kTrain);
  check_same_shape(tf.feature1, sf.feature2, "compute_student_loss");

  Tensor la = softmax_cross_entropy(&tape, sf.logits, labels);
  LossReport report;
  report.la = la.item();
  report.accuracy = batch_accuracy(sf.logits, labels);

  Tensor total;
  if (lambda == 0.0) {
    report.loss1 = mse_distance(nullptr, sf.feature2, tf.feature1).item();
    total = la;
  } else {
    Tensor loss1 = mse_distance(&tape, sf.feature2, tf.feature1);
    report.loss1 = loss1.item();
    total = add(&tape, la, scale(&tape, loss1, lambda));
  }
  report.total = total.item();
  tape.backward(total);
  return report;
}

TeacherTrainResult train_teacher(const Dataset& dataset, const TrainConfig& cfg,
                                 FlowProvider& flows, TrainLog* live_log) {
  cfg.validate();
  if (dataset.clips.empty()) throw DataError("train_teacher: empty dataset");
  const std::vector<size_t> train_idx = dataset.split_indices(Split::kTrain);
  if (train_idx.empty()) throw DataError("train_teacher: empty training split");

  BackboneConfig config = config_for(dataset, cfg);
  TeacherTrainResult res{build_teacher(config, cfg.seed), {}};
  SgdOptimizer opt(res.net.parameters(), cfg.lr, cfg.momentum);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.set_lr(lr_at_epoch(cfg, epoch));
    double sum_loss = 0.0, sum_acc = 0.0;
    int nbatches = 0;
    for (const std::vector<size_t>& batch :
         make_batches(train_idx, cfg.batch_size, cfg.seed, epoch)) {
      Tensor fb = flows_to_tensor(flows, batch);
      const std::vector<int64_t> labels = labels_of(dataset, batch);
      Tape tape;
      TeacherForward tf = forward_teacher(res.net, &tape, fb, Mode::kTrain);
      Tensor loss = softmax_cross_entropy(&tape, tf.logits, labels);
      if (!std::isfinite(loss.item()))
        throw DivergenceError("train_teacher: non-finite loss at epoch " + std::to_string(epoch) +
                                  " batch " + std::to_string(nbatches),
                              epoch, nbatches);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      sum_loss += loss.item();
      sum_acc += batch_accuracy(tf.logits, labels);
      ++nbatches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.la = sum_loss / nbatches;
    rec.loss1 = 0.0;
    rec.total = rec.la;
    rec.train_acc = sum_acc / nbatches;
    try {
      rec.val_acc = evaluate_teacher(res.net, dataset, Split::kVal, flows).accuracy;
    } catch (const DataError&) {
      rec.val_acc = 0.0;  // no validation split
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (live_log) live_log->epochs.push_back(rec);
    if (cfg.early_stop_train_acc > 0.0 && rec.train_acc >= cfg.early_stop_train_acc) break;
  }
  return res;
}

StudentTrainResult train_student(const Dataset& dataset, TeacherNet& teacher,
                                 const TrainConfig& cfg, FlowProvider& flows, TrainLog* live_log) {
  cfg.validate();
  if (dataset.clips.empty()) throw DataError("train_student: empty dataset");
  const std::vector<size_t> train_idx = dataset.split_indices(Split::kTrain);
  if (train_idx.empty()) throw DataError("train_student: empty training split");
  BackboneConfig config = config_for(dataset, cfg);
  if (teacher.config.base_width != config.base_width ||
      teacher.config.cardinality != config.cardinality ||
      teacher.config.stage_blocks != config.stage_blocks ||
      teacher.config.classes != config.classes || teacher.config.clip_t != config.clip_t ||
      teacher.config.clip_h != config.clip_h || teacher.config.clip_w != config.clip_w)
    throw ConfigError("train_student: teacher checkpoint incompatible with dataset config");

  teacher.set_requires_grad(false);
  const std::string teacher_hash_before = parameter_hash(teacher);

  StudentTrainResult res{build_student(config, cfg.seed), {}};
  SgdOptimizer opt(res.net.parameters(), cfg.lr, cfg.momentum);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.set_lr(lr_at_epoch(cfg, epoch));
    double sum_la = 0.0, sum_loss1 = 0.0, sum_total = 0.0, sum_acc = 0.0;
    int nbatches = 0;
    for (const std::vector<size_t>& batch :
         make_batches(train_idx, cfg.batch_size, cfg.seed, epoch)) {
      Tensor cb = clips_to_tensor(dataset, batch);
      Tensor fb = flows_to_tensor(flows, batch);
      const std::vector<int64_t> labels = labels_of(dataset, batch);
      Tape tape;
      opt.zero_grad();
      LossReport rep =
          compute_student_loss(tape, res.net, teacher, cb, fb, labels, cfg.lambda);
      if (!std::isfinite(rep.total))
        throw DivergenceError("train_student: non-finite loss at epoch " + std::to_string(epoch) +
                                  " batch " + std::to_string(nbatches),
                              epoch, nbatches);
      opt.step();
      sum_la += rep.la;
      sum_loss1 += rep.loss1;
      sum_total += rep.total;
      sum_acc += rep.accuracy;
      ++nbatches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.la = sum_la / nbatches;
    rec.loss1 = sum_loss1 / nbatches;
    rec.total = sum_total / nbatches;
    rec.train_acc = sum_acc / nbatches;
    try {
      rec.val_acc = evaluate_student(res.net, dataset, Split::kVal).accuracy;
    } catch (const DataError&) {
      rec.val_acc = 0.0;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (live_log) live_log->epochs.push_back(rec);
    if (cfg.early_stop_train_acc > 0.0 && rec.train_acc >= cfg.early_stop_train_acc) break;
  }

  if (parameter_hash(teacher) != teacher_hash_before)
    throw ContractError("train_student: teacher parameters changed during phase 2");
  return res;
}

GridSearchResult grid_search_lambda(const Dataset& dataset, TeacherNet& teacher,
                                    const TrainConfig& base,
                                    const std::vector<double>& candidates, FlowProvider& flows) {
  if (candidates.empty()) throw ConfigError("grid_search_lambda: no candidates");
  GridSearchResult res;
  bool have_best = false;
  double best_acc = -1.0;
  for (double lam : candidates) {
    TrainConfig cfg = base;
    cfg.lambda = lam;
    StudentTrainResult run = train_student(dataset, teacher, cfg, flows);
    const double acc = evaluate_student(run.net, dataset, Split::kVal).accuracy;
    res.table.emplace_back(lam, acc);
    // ties broken by smaller lambda
    if (!have_best || acc > best_acc || (acc == best_acc && lam < res.best_lambda)) {
      have_best = true;
      best_acc = acc;
      res.best_lambda = lam;
      res.best_net = std::move(run.net);
      res.best_log = std::move(run.log);
    }
  }
  return res;
}

EvalResult evaluate_student(StudentNet& net, const Dataset& dataset, Split split) {
  return evaluate_impl(dataset, split, net.config.classes, [&](const std::vector<size_t>& chunk) {
    return forward_student(net, nullptr, clips_to_tensor(dataset, chunk), Mode::kEval).logits;
  });
}

EvalResult evaluate_teacher(TeacherNet& net, const Dataset& dataset, Split split,
                            FlowProvider& flows) {
  return evaluate_impl(dataset, split, net.config.classes, [&](const std::vector<size_t>& chunk) {
    return forward_teacher(net, nullptr, flows_to_tensor(flows, chunk), Mode::kEval).logits;
  });
}

}  // namespace bers
