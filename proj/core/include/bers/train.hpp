#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bers/net.hpp"
#include "bers/synthvid.hpp"
#include "bers/tvl1.hpp"

namespace bers {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double lambda = 1.0;
  uint64_t seed = 0;
  double lr_decay_factor = 0.1;
  std::vector<int> lr_milestones = {20};  // 1-based epochs at which lr decays
  double early_stop_train_acc = 0.0;      // stop once reached; 0 disables
  int64_t base_width = 8;
  int64_t cardinality = 4;

  void validate() const;
};

BackboneConfig config_for(const Dataset& dataset, const TrainConfig& cfg);

/// Decomposed quantities of the combined objective:
/// total = L_a + lambda * Loss1.
struct LossReport {
  double la = 0.0;
  double loss1 = 0.0;
  double total = 0.0;
  double accuracy = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double la = 0.0;
  double loss1 = 0.0;
  double total = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
};

/// Computes TV-L1 flow per clip once, memoized in memory and optionally
/// persisted to a directory keyed by (clip id, parameter hash). The cache
/// stores full f64 fields so cached and fresh runs are bit-identical.
class FlowProvider {
 public:
  explicit FlowProvider(const Dataset& dataset, Tvl1Params params = {},
                        std::optional<std::string> cache_dir = std::nullopt);

  const FlowStack& get(size_t clip_index);
  const Tvl1Params& params() const { return params_; }

 private:
  const Dataset& dataset_;
  Tvl1Params params_;
  std::optional<std::string> cache_dir_;
  uint64_t params_hash_;
  std::unordered_map<uint32_t, FlowStack> memo_;
};

/// Batch assembly: clips as [N,3,T,H,W], flow stacks as [N,2,T-1,H,W].
Tensor clips_to_tensor(const Dataset& dataset, const std::vector<size_t>& indices);
Tensor flows_to_tensor(FlowProvider& flows, const std::vector<size_t>& indices);
std::vector<int64_t> labels_of(const Dataset& dataset, const std::vector<size_t>& indices);

/// Forward both nets, assemble the combined loss, and backpropagate into the
/// student only; the teacher runs in eval mode off-tape and receives no
/// gradient.
LossReport compute_student_loss(Tape& tape, StudentNet& student, TeacherNet& teacher,
                                const Tensor& clips, const Tensor& flows,
                                const std::vector<int64_t>& labels, double lambda);

struct TeacherTrainResult {
  TeacherNet net;
  TrainLog log;
};
/// When live_log is given it receives each epoch record as it completes, so
/// a caller still holds the partial log if training aborts with
/// DivergenceError.
TeacherTrainResult train_teacher(const Dataset& dataset, const TrainConfig& cfg,
                                 FlowProvider& flows, TrainLog* live_log = nullptr);

struct StudentTrainResult {
  StudentNet net;
  TrainLog log;
};
StudentTrainResult train_student(const Dataset& dataset, TeacherNet& teacher,
                                 const TrainConfig& cfg, FlowProvider& flows,
                                 TrainLog* live_log = nullptr);

struct GridSearchResult {
  double best_lambda = 0.0;
  std::vector<std::pair<double, double>> table;  // (lambda, validation accuracy)
  StudentNet best_net;
  TrainLog best_log;
};
GridSearchResult grid_search_lambda(const Dataset& dataset, TeacherNet& teacher,
                                    const TrainConfig& base,
                                    const std::vector<double>& candidates, FlowProvider& flows);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int64_t> per_class_total;
  std::vector<int64_t> predictions;  // aligned with the evaluated indices
  std::vector<size_t> indices;
};
EvalResult evaluate_student(StudentNet& net, const Dataset& dataset, Split split);
EvalResult evaluate_teacher(TeacherNet& net, const Dataset& dataset, Split split,
                            FlowProvider& flows);

}  // namespace bers
