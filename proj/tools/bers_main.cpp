// bers: single-binary CLI for the BERS pipeline — data generation, the two
// training phases, evaluation tables, RGB-only inference, flow export, and
// the latency benchmark. Exit codes: 0 success, 1 usage/config, 2
// data/format, 3 divergence.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bers/counters.hpp"
#include "bers/errors.hpp"
#include "bers/flow_io.hpp"
#include "bers/net.hpp"
#include "bers/synthvid.hpp"
#include "bers/train.hpp"
#include "bers/tvl1.hpp"

namespace {

using namespace bers;

// ---------------------------------------------------------------------------
// helpers

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

int64_t argmax_row(const Tensor& logits, int64_t row) {
  const int64_t k = logits.dim(1);
  const double* p = logits.data() + row * k;
  return std::max_element(p, p + k) - p;
}

Tensor flow_stack_to_tensor(const FlowStack& stack) {
  const int64_t t = static_cast<int64_t>(stack.size());
  const int64_t h = stack[0].height, w = stack[0].width;
  Tensor x = Tensor::zeros({1, 2, t, h, w});
  for (int64_t i = 0; i < t; ++i) {
    std::copy(stack[i].u.begin(), stack[i].u.end(), x.vec().begin() + (0 * t + i) * h * w);
    std::copy(stack[i].v.begin(), stack[i].v.end(), x.vec().begin() + (1 * t + i) * h * w);
  }
  return x;
}

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

LatencyStats stats_of(std::vector<double> ms) {
  LatencyStats s;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
  std::sort(ms.begin(), ms.end());
  s.median_ms = ms[ms.size() / 2];
  s.p95_ms = ms[std::min(ms.size() - 1, static_cast<size_t>(0.95 * (ms.size() - 1) + 0.5))];
  return s;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string kind = "motion";
  DatasetSpec spec;
  std::string out;
};

void run_gen_data(const GenArgs& a) {
  DatasetSpec spec = a.spec;
  if (a.kind == "motion")
    spec.kind = DatasetKind::kMotion;
  else if (a.kind == "static")
    spec.kind = DatasetKind::kStatic;
  else
    spec.kind = DatasetKind::kMixed;
  Dataset ds = generate(spec);
  write_dataset(a.out, ds);
  std::cout << "wrote " << ds.clips.size() << " clips (" << spec.classes << " classes, T="
            << spec.frames << ", " << spec.height << "x" << spec.width << ") to " << a.out
            << "\n";
}

// ---------------------------------------------------------------------------
// train-teacher / train-student

struct TrainArgs {
  std::string data;
  std::string out;
  std::string log_path;       // default: out + ".csv"
  std::string teacher;        // train-student only
  std::string grid;           // train-student only, comma separated lambdas
  std::string flow_cache;
  TrainConfig cfg;
};

std::string log_path_of(const TrainArgs& a) {
  return a.log_path.empty() ? a.out + ".csv" : a.log_path;
}

std::optional<std::string> cache_of(const TrainArgs& a) {
  if (a.flow_cache.empty()) return std::nullopt;
  return a.flow_cache;
}

void run_train_teacher(const TrainArgs& a) {
  Dataset ds = read_dataset(a.data);
  FlowProvider flows(ds, {}, cache_of(a));
  TrainLog live;
  try {
    TeacherTrainResult res = train_teacher(ds, a.cfg, flows, &live);
    CheckpointMeta meta;
    meta.epoch = static_cast<uint32_t>(res.log.epochs.size());
    meta.seed = a.cfg.seed;
    save_checkpoint(res.net, a.out, meta);
    res.log.write_csv(log_path_of(a));
    const EpochRecord& last = res.log.epochs.back();
    std::cout << "teacher trained: " << res.log.epochs.size() << " epochs, train_acc "
              << last.train_acc << ", val_acc " << last.val_acc << "\n"
              << "checkpoint: " << a.out << "\nlog: " << log_path_of(a) << "\n";
  } catch (const DivergenceError&) {
    live.write_csv(log_path_of(a));  // keep what finished before the blow-up
    throw;
  }
}

void run_train_student(const TrainArgs& a) {
  Dataset ds = read_dataset(a.data);
  FlowProvider flows(ds, {}, cache_of(a));
  TeacherNet teacher = load_teacher_checkpoint(a.teacher);

  if (!a.grid.empty()) {
    const std::vector<double> candidates = parse_double_list(a.grid);
    GridSearchResult res = grid_search_lambda(ds, teacher, a.cfg, candidates, flows);
    CheckpointMeta meta;
    meta.epoch = static_cast<uint32_t>(res.best_log.epochs.size());
    meta.lambda = res.best_lambda;
    meta.seed = a.cfg.seed;
    save_checkpoint(res.best_net, a.out, meta);
    res.best_log.write_csv(log_path_of(a));
    std::ostringstream grid_csv;
    grid_csv << "lambda,val_acc\n";
    grid_csv.precision(17);
    for (auto& [lambda, acc] : res.table) grid_csv << lambda << "," << acc << "\n";
    grid_csv << "chosen," << res.best_lambda << "\n";
    write_text_file(a.out + ".grid.csv", grid_csv.str());
    std::cout << "grid search over " << res.table.size() << " candidates; chosen lambda "
              << res.best_lambda << "\n";
    for (auto& [lambda, acc] : res.table)
      std::cout << "  lambda=" << lambda << "  val_acc=" << acc << "\n";
    std::cout << "checkpoint: " << a.out << "\nlog: " << log_path_of(a) << "\ngrid table: "
              << a.out << ".grid.csv\n";
    return;
  }

  TrainConfig cfg = a.cfg;
  TrainLog live;
  try {
    StudentTrainResult res = train_student(ds, teacher, cfg, flows, &live);
    CheckpointMeta meta;
    meta.epoch = static_cast<uint32_t>(res.log.epochs.size());
    meta.lambda = cfg.lambda;
    meta.seed = cfg.seed;
    save_checkpoint(res.net, a.out, meta);
    res.log.write_csv(log_path_of(a));
    const EpochRecord& last = res.log.epochs.back();
    std::cout << "student trained (lambda=" << cfg.lambda << "): " << res.log.epochs.size()
              << " epochs, train_acc " << last.train_acc << ", val_acc " << last.val_acc << "\n"
              << "checkpoint: " << a.out << "\nlog: " << log_path_of(a) << "\n";
  } catch (const DivergenceError&) {
    live.write_csv(log_path_of(a));
    throw;
  }
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string counters_path;  // default: out + ".counters.csv"
};

void run_infer(const InferArgs& a) {
  if (!checkpoint_is_student(a.model))
    throw ConfigError("infer: " + a.model +
                      " is a teacher checkpoint; inference runs the student alone");
  StudentNet net = load_student_checkpoint(a.model);
  Dataset ds = read_dataset(a.data);

  counters().reset();
  std::ostringstream pred_csv;
  pred_csv << "clip_id,label,prediction\n";
  std::vector<size_t> order(ds.clips.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t start = 0; start < order.size(); start += 8) {
    const size_t end = std::min(order.size(), start + 8);
    const std::vector<size_t> chunk(order.begin() + start, order.begin() + end);
    Tensor logits = forward_student(net, nullptr, clips_to_tensor(ds, chunk), Mode::kEval).logits;
    for (size_t j = 0; j < chunk.size(); ++j)
      pred_csv << ds.clips[chunk[j]].id << "," << ds.clips[chunk[j]].label << ","
               << argmax_row(logits, static_cast<int64_t>(j)) << "\n";
  }
  write_text_file(a.out, pred_csv.str());

  const Counters& c = counters();
  std::ostringstream counter_csv;
  counter_csv << "tvl1_calls,teacher_forwards,student_forwards\n"
              << c.tvl1_calls.load() << "," << c.teacher_forwards.load() << ","
              << c.student_forwards.load() << "\n";
  const std::string cpath = a.counters_path.empty() ? a.out + ".counters.csv" : a.counters_path;
  write_text_file(cpath, counter_csv.str());

  std::cout << "inferred " << ds.clips.size() << " clips -> " << a.out << "\n"
            << "purity counters: tvl1=" << c.tvl1_calls.load()
            << " teacher_forwards=" << c.teacher_forwards.load()
            << " student_forwards=" << c.student_forwards.load() << " (" << cpath << ")\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> students;
  std::vector<std::string> teachers;
  bool combined = false;
  bool per_class = false;
  std::string data;
  std::string split = "test";
  std::string out;
  std::string flow_cache;
};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("eval: unknown split '" + s + "'");
}

void run_eval(const EvalArgs& a) {
  if (a.students.empty() && a.teachers.empty())
    throw ConfigError("eval: supply at least one --student or --teacher checkpoint");
  if (a.combined && (a.students.empty() || a.teachers.empty()))
    throw ConfigError("eval: --combined needs one student and one teacher");

  Dataset ds = read_dataset(a.data);
  const Split split = parse_split(a.split);
  std::optional<std::string> cache;
  if (!a.flow_cache.empty()) cache = a.flow_cache;
  FlowProvider flows(ds, {}, cache);

  std::vector<std::pair<std::string, EvalResult>> rows;
  std::vector<StudentNet> students;
  std::vector<TeacherNet> teachers;
  for (const std::string& path : a.students) {
    students.push_back(load_student_checkpoint(path));
    rows.emplace_back("student:" + path, evaluate_student(students.back(), ds, split));
  }
  for (const std::string& path : a.teachers) {
    teachers.push_back(load_teacher_checkpoint(path));
    rows.emplace_back("teacher:" + path, evaluate_teacher(teachers.back(), ds, split, flows));
  }
  if (a.combined) {
    // Table-1-style "+RGB" row: mean of the two softmax outputs per clip.
    StudentNet& s = students.front();
    TeacherNet& t = teachers.front();
    EvalResult res;
    res.indices = ds.split_indices(split);
    res.per_class_accuracy.assign(ds.spec.classes, 0.0);
    res.per_class_total.assign(ds.spec.classes, 0);
    std::vector<int64_t> per_class_correct(ds.spec.classes, 0);
    int64_t correct = 0;
    for (size_t start = 0; start < res.indices.size(); start += 8) {
      const size_t end = std::min(res.indices.size(), start + 8);
      const std::vector<size_t> chunk(res.indices.begin() + start, res.indices.begin() + end);
      Tensor ps = softmax_rows(
          forward_student(s, nullptr, clips_to_tensor(ds, chunk), Mode::kEval).logits);
      Tensor pt = softmax_rows(
          forward_teacher(t, nullptr, flows_to_tensor(flows, chunk), Mode::kEval).logits);
      Tensor fused = add(nullptr, scale(nullptr, ps, 0.5), scale(nullptr, pt, 0.5));
      for (size_t j = 0; j < chunk.size(); ++j) {
        const int64_t pred = argmax_row(fused, static_cast<int64_t>(j));
        const int64_t label = ds.clips[chunk[j]].label;
        res.predictions.push_back(pred);
        res.per_class_total[label]++;
        if (pred == label) {
          ++correct;
          per_class_correct[label]++;
        }
      }
    }
    res.accuracy = static_cast<double>(correct) / res.indices.size();
    for (int64_t c = 0; c < ds.spec.classes; ++c)
      if (res.per_class_total[c])
        res.per_class_accuracy[c] =
            static_cast<double>(per_class_correct[c]) / res.per_class_total[c];
    rows.emplace_back("combined", std::move(res));
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "stream,class,accuracy,count\n";
  std::cout << "split: " << split_name(split) << "\n";
  for (auto& [name, res] : rows) {
    csv << name << ",all," << res.accuracy << "," << res.indices.size() << "\n";
    std::cout << "  " << name << "  accuracy=" << res.accuracy << "  (" << res.indices.size()
              << " clips)\n";
    if (a.per_class)
      for (int64_t c = 0; c < ds.spec.classes; ++c) {
        csv << name << "," << c << "," << res.per_class_accuracy[c] << ","
            << res.per_class_total[c] << "\n";
        std::cout << "    class " << c << ": " << res.per_class_accuracy[c] << " ("
                  << res.per_class_total[c] << " clips)\n";
      }
  }
  if (!a.out.empty()) write_text_file(a.out, csv.str());
}

// ---------------------------------------------------------------------------
// flow

struct FlowArgs {
  std::string data;
  int64_t clip = 0;
  std::string out_dir;
  double bound = 20.0;
  Tvl1Params params;
};

void run_flow(const FlowArgs& a) {
  Dataset ds = read_dataset(a.data);
  if (a.clip < 0 || a.clip >= static_cast<int64_t>(ds.clips.size()))
    throw ConfigError("flow: clip index out of range");
  std::filesystem::create_directories(a.out_dir);
  FlowStack stack = clip_flow_stack(ds.clips[a.clip].clip, a.params);
  for (size_t i = 0; i < stack.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "flow_%03zu.bflo", i);
    write_bflo((std::filesystem::path(a.out_dir) / name).string(),
               quantize_flow(stack[i], a.bound));
  }
  std::cout << "wrote " << stack.size() << " .bflo files to " << a.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string student;
  std::string teacher;
  std::string data;
  int repeat = 5;
  int64_t limit = 0;  // 0 = all clips
  std::string out;
};

struct PipelineReport {
  std::string name;
  LatencyStats stats;
  double accuracy = 0.0;
  std::vector<double> per_repeat_mean_ms;
  uint64_t tvl1_calls = 0;            // counters over one repetition
  uint64_t teacher_forwards = 0;
  uint64_t student_forwards = 0;
};

void run_bench(const BenchArgs& a) {
  if (a.repeat < 3) throw ConfigError("bench: --repeat must be >= 3");
  StudentNet student = load_student_checkpoint(a.student);
  TeacherNet teacher = load_teacher_checkpoint(a.teacher);
  Dataset ds = read_dataset(a.data);

  std::vector<size_t> clips(ds.clips.size());
  std::iota(clips.begin(), clips.end(), size_t{0});
  if (a.limit > 0 && a.limit < static_cast<int64_t>(clips.size())) clips.resize(a.limit);
  if (clips.empty()) throw DataError("bench: dataset has no clips");

  const Tvl1Params flow_params;
  // One inference job per pipeline; returns the predicted class so accuracy
  // rides along with the timing.
  auto rgb_only = [&](size_t i) {
    Tensor logits =
        forward_student(student, nullptr, clips_to_tensor(ds, {i}), Mode::kEval).logits;
    return argmax_row(logits, 0);
  };
  auto flow_teacher = [&](size_t i) {
    Tensor fb = flow_stack_to_tensor(clip_flow_stack(ds.clips[i].clip, flow_params));
    return argmax_row(forward_teacher(teacher, nullptr, fb, Mode::kEval).logits, 0);
  };
  auto combined = [&](size_t i) {
    Tensor ps = softmax_rows(
        forward_student(student, nullptr, clips_to_tensor(ds, {i}), Mode::kEval).logits);
    Tensor fb = flow_stack_to_tensor(clip_flow_stack(ds.clips[i].clip, flow_params));
    Tensor pt = softmax_rows(forward_teacher(teacher, nullptr, fb, Mode::kEval).logits);
    return argmax_row(add(nullptr, scale(nullptr, ps, 0.5), scale(nullptr, pt, 0.5)), 0);
  };

  auto measure = [&](const std::string& name, auto&& job) {
    PipelineReport rep;
    rep.name = name;
    for (size_t w = 0; w < std::min<size_t>(2, clips.size()); ++w) job(clips[w]);  // warm-up
    std::vector<double> all_ms;
    int64_t correct = 0;
    for (int r = 0; r < a.repeat; ++r) {
      if (r == 0) counters().reset();
      double repeat_sum = 0.0;
      for (size_t i : clips) {
        const auto t0 = std::chrono::steady_clock::now();
        const int64_t pred = job(i);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        all_ms.push_back(ms);
        repeat_sum += ms;
        if (r == 0 && pred == ds.clips[i].label) ++correct;
      }
      if (r == 0) {
        rep.tvl1_calls = counters().tvl1_calls.load();
        rep.teacher_forwards = counters().teacher_forwards.load();
        rep.student_forwards = counters().student_forwards.load();
      }
      rep.per_repeat_mean_ms.push_back(repeat_sum / clips.size());
    }
    rep.stats = stats_of(all_ms);
    rep.accuracy = static_cast<double>(correct) / clips.size();
    return rep;
  };

  // Pipelines run sequentially, never interleaved, so one cannot skew the
  // other's latency numbers.
  const PipelineReport rgb = measure("rgb_only", rgb_only);
  const PipelineReport flow = measure("flow_teacher", flow_teacher);
  const PipelineReport comb = measure("combined", combined);

  const double ratio = comb.stats.mean_ms / rgb.stats.mean_ms;
  bool strict_every_repeat = true;
  for (int r = 0; r < a.repeat; ++r)
    if (!(rgb.per_repeat_mean_ms[r] < comb.per_repeat_mean_ms[r])) strict_every_repeat = false;

  const std::string hardware = std::to_string(std::thread::hardware_concurrency()) +
                               " hardware threads; pipelines run single-threaded";

  std::ostringstream csv;
  csv.precision(17);
  csv << "pipeline,mean_ms,median_ms,p95_ms,accuracy,tvl1_calls,teacher_forwards,"
         "student_forwards\n";
  for (const PipelineReport* rep : {&rgb, &flow, &comb})
    csv << rep->name << "," << rep->stats.mean_ms << "," << rep->stats.median_ms << ","
        << rep->stats.p95_ms << "," << rep->accuracy << "," << rep->tvl1_calls << ","
        << rep->teacher_forwards << "," << rep->student_forwards << "\n";
  csv << "ratio_combined_over_rgb," << ratio << ",,,,,,\n";
  if (!a.out.empty()) write_text_file(a.out, csv.str());

  std::cout << "bench: " << clips.size() << " clips x " << a.repeat << " repeats (" << hardware
            << ")\n";
  for (const PipelineReport* rep : {&rgb, &flow, &comb})
    std::cout << "  " << rep->name << ": mean " << rep->stats.mean_ms << " ms, median "
              << rep->stats.median_ms << " ms, p95 " << rep->stats.p95_ms << " ms, accuracy "
              << rep->accuracy << " [tvl1=" << rep->tvl1_calls
              << " teacher=" << rep->teacher_forwards << " student=" << rep->student_forwards
              << " per repetition]\n";
  std::cout << "  speedup ratio combined/rgb_only: " << ratio << "\n"
            << "  rgb_only faster than combined on every repetition: "
            << (strict_every_repeat ? "yes" : "no") << "\n";
  if (!a.out.empty()) std::cout << "  report: " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// wiring

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--data", a.data, ".bvds dataset")->required();
  cmd->add_option("--out", a.out, "checkpoint output path")->required();
  cmd->add_option("--log", a.log_path, "CSV log path (default: <out>.csv)");
  cmd->add_option("--flow-cache", a.flow_cache, "directory for the on-disk flow cache");
  cmd->add_option("--epochs", a.cfg.epochs, "training epochs");
  cmd->add_option("--batch", a.cfg.batch_size, "batch size (>= 2)");
  cmd->add_option("--lr", a.cfg.lr, "learning rate");
  cmd->add_option("--momentum", a.cfg.momentum, "SGD momentum");
  cmd->add_option("--seed", a.cfg.seed, "random seed governing all randomness");
  cmd->add_option("--lr-decay", a.cfg.lr_decay_factor, "lr decay factor at milestones");
  cmd->add_option("--milestones", a.cfg.lr_milestones, "1-based epochs at which lr decays");
  cmd->add_option("--early-stop-acc", a.cfg.early_stop_train_acc,
                  "stop once train accuracy reaches this (0 disables)");
  cmd->add_option("--base-width", a.cfg.base_width, "backbone base width");
  cmd->add_option("--cardinality", a.cfg.cardinality, "grouped-conv cardinality");
}

int dispatch(int argc, char** argv) {
  CLI::App app{"BERS action recognition: flow-distilled RGB student at desk scale"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic .bvds dataset");
  cmd_gen->add_option("--kind", gen.kind, "motion|static|mixed")
      ->check(CLI::IsMember({"motion", "static", "mixed"}));
  cmd_gen->add_option("--classes", gen.spec.classes, "number of classes");
  cmd_gen->add_option("--clips-per-class", gen.spec.clips_per_class, "clips per class");
  cmd_gen->add_option("--frames", gen.spec.frames, "frames per clip");
  cmd_gen->add_option("--height", gen.spec.height, "frame height");
  cmd_gen->add_option("--width", gen.spec.width, "frame width");
  cmd_gen->add_option("--object-min", gen.spec.object_min, "min object side in px");
  cmd_gen->add_option("--object-max", gen.spec.object_max, "max object side in px");
  cmd_gen->add_option("--noise", gen.spec.noise_amplitude, "background noise amplitude");
  cmd_gen->add_option("--speed", gen.spec.speed, "object speed in px/frame");
  cmd_gen->add_option("--seed", gen.spec.seed, "dataset seed");
  cmd_gen->add_option("--out", gen.out, "output .bvds path")->required();
  cmd_gen->callback([&] { run_gen_data(gen); });

  TrainArgs tt;
  CLI::App* cmd_tt = app.add_subcommand("train-teacher", "phase 1: train the flow teacher");
  add_train_flags(cmd_tt, tt);
  cmd_tt->callback([&] { run_train_teacher(tt); });

  TrainArgs ts;
  CLI::App* cmd_ts =
      app.add_subcommand("train-student", "phase 2: distill into the RGB student");
  add_train_flags(cmd_ts, ts);
  cmd_ts->add_option("--teacher", ts.teacher, "frozen teacher checkpoint")->required();
  CLI::Option* opt_lambda =
      cmd_ts->add_option("--lambda", ts.cfg.lambda, "distillation weight (Eq. 2)");
  cmd_ts->add_option("--grid", ts.grid, "comma-separated lambda candidates to grid-search")
      ->excludes(opt_lambda);
  cmd_ts->callback([&] { run_train_student(ts); });

  InferArgs inf;
  CLI::App* cmd_inf = app.add_subcommand("infer", "RGB-only inference with the student");
  cmd_inf->add_option("--model", inf.model, "student checkpoint")->required();
  cmd_inf->add_option("--data", inf.data, ".bvds dataset")->required();
  cmd_inf->add_option("--out", inf.out, "predictions CSV path")->required();
  cmd_inf->add_option("--counters", inf.counters_path,
                      "purity-counter CSV path (default: <out>.counters.csv)");
  cmd_inf->callback([&] { run_infer(inf); });

  EvalArgs ev;
  CLI::App* cmd_ev = app.add_subcommand("eval", "accuracy table for one or more models");
  cmd_ev->add_option("--student", ev.students, "student checkpoint (repeatable)");
  cmd_ev->add_option("--teacher", ev.teachers, "teacher checkpoint (repeatable)");
  cmd_ev->add_flag("--combined", ev.combined,
                   "add a softmax-averaged student+teacher row (uses the first of each)");
  cmd_ev->add_flag("--per-class", ev.per_class, "add per-class rows");
  cmd_ev->add_option("--data", ev.data, ".bvds dataset")->required();
  cmd_ev->add_option("--split", ev.split, "train|val|test (default test)")
      ->check(CLI::IsMember({"train", "val", "test"}));
  cmd_ev->add_option("--out", ev.out, "CSV output path");
  cmd_ev->add_option("--flow-cache", ev.flow_cache, "directory for the on-disk flow cache");
  cmd_ev->callback([&] { run_eval(ev); });

  FlowArgs fl;
  CLI::App* cmd_fl = app.add_subcommand("flow", "export TV-L1 flow of one clip as .bflo files");
  cmd_fl->add_option("--data", fl.data, ".bvds dataset")->required();
  cmd_fl->add_option("--clip", fl.clip, "clip index (default 0)");
  cmd_fl->add_option("--out-dir", fl.out_dir, "output directory")->required();
  cmd_fl->add_option("--bound", fl.bound, "quantization bound in px");
  cmd_fl->add_option("--data-weight", fl.params.data_weight, "TV-L1 lambda");
  cmd_fl->add_option("--warps", fl.params.warps, "warps per pyramid level");
  cmd_fl->add_option("--inner", fl.params.inner_iterations, "inner iterations per warp");
  cmd_fl->callback([&] { run_flow(fl); });

  BenchArgs be;
  CLI::App* cmd_be =
      app.add_subcommand("bench", "latency comparison: rgb_only vs flow_teacher vs combined");
  cmd_be->add_option("--student", be.student, "student checkpoint")->required();
  cmd_be->add_option("--teacher", be.teacher, "teacher checkpoint")->required();
  cmd_be->add_option("--data", be.data, ".bvds dataset")->required();
  cmd_be->add_option("--repeat", be.repeat, "repetitions (>= 3)");
  cmd_be->add_option("--limit", be.limit, "cap the number of clips (0 = all)");
  cmd_be->add_option("--out", be.out, "CSV report path");
  cmd_be->callback([&] { run_bench(be); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors are exit 1, --help is success
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;  // config/usage-level failures
  }
}
