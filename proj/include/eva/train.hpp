// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "eva/adapter.hpp"
#include "eva/net.hpp"

namespace eva {

enum class Optimizer { sgd, adamw };
enum class Schedule { constant, linear_decay };

struct TrainConfig {
  std::size_t steps = 300;
  double lr = 1e-2;
  Optimizer optimizer = Optimizer::sgd;
  std::size_t batch_size = 16;  // informational; batches come from the stream
  std::uint64_t seed = 0;
  double warmup_fraction = 0.0;
  Schedule schedule = Schedule::constant;
  LossKind loss = LossKind::mse;
  double loss_threshold = 0.0;  // steps_to_threshold fires at loss <= this; 0 disables

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;      // pre-update loss of the step's batch
  double grad_norm = 0.0; // global l2 over all adapter gradients
};

struct RunMetrics {
  std::vector<StepRecord> records;
  double final_loss = 0.0;
  std::optional<std::size_t> steps_to_threshold;
};

// Fine-tune the adapters against a frozen base network. The adapters map is
// updated in place; base weights are never touched. Deterministic for a
// fixed (config, stream). Throws NumericError if the loss turns NaN/Inf.
RunMetrics finetune(const ToyNetwork& base, AdapterMap& adapters, DataStream& stream, const TrainConfig& cfg);

struct ModeSummary {
  InitMode mode;
  std::vector<double> mean_loss;       // per step, across seeds
  std::vector<double> std_loss;
  std::vector<double> mean_grad_norm;
  double mean_final_loss = 0.0;
  double std_final_loss = 0.0;
  // seeds that never reach the threshold count as steps + 1 (censored)
  double mean_steps_to_threshold = 0.0;
  double mean_gradnorm_step1 = 0.0;
  std::vector<RunMetrics> runs;  // one per seed
  bool partial = false;          // a run aborted; summary covers the rest
};

struct ComparisonSetup {
  TeacherStudentConfig task;
  StreamConfig stream;
  TrainConfig train;
  VarianceMeasure measure = VarianceMeasure::eva;
  double alpha = 1.0;
};

struct ComparisonReport {
  std::vector<ModeSummary> modes;  // input order
  std::size_t threads_used = 1;
};

// Paired comparison across init modes: each seed index sees the same
// teacher/student pair and the same data order in every mode. Runs fan out
// to at most `threads` workers.
ComparisonReport compare_inits(const std::vector<InitMode>& modes, const std::vector<std::uint64_t>& seeds,
                               const ComparisonSetup& setup, std::size_t threads = 1);

// Builds adapters for one mode on one seed's task: SVD pass + redistribution
// for data-driven modes, uniform allocation otherwise. Exposed so the CLI and
// tests share the exact pipeline.
AdapterMap build_adapters_for_mode(const ToyNetwork& student, const DataSource& data, const InitMode& mode,
                                   const ComparisonSetup& setup, std::size_t* batches_consumed = nullptr,
                                   bool* all_converged = nullptr, std::vector<SvdState>* states_out = nullptr,
                                   RankAllocation* alloc_out = nullptr);

// Central finite differences over every adapter entry vs the analytic
// gradients; returns the worst relative error.
double gradient_check(const ToyNetwork& net, AdapterMap& adapters, const Batch& batch, double eps,
                      LossKind loss = LossKind::mse);

Optimizer parse_optimizer(const std::string& text);
std::string optimizer_name(Optimizer o);

}  // namespace eva
