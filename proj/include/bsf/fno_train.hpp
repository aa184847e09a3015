#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "bsf/dataset.hpp"
#include "bsf/fno.hpp"
#include "bsf/optim.hpp"

namespace bsf {

struct NoTrainOptions {
  int epochs = 200;
  int batch_size = 16;
  int batches_per_epoch = 0;  // 0: ceil(n_train / batch_size)
  std::uint64_t seed = 0;
  AdamWSettings adamw;
  FrozenGroups frozen;
};

struct NoLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  std::vector<int> lengths;
  std::vector<double> test_rel_l2;
};

struct NoTrainResult {
  FnoModel model;
  std::vector<NoLogRow> log;
  int best_epoch = -1;
  double best_score = 0.0;
};

// Mean over the batch of the per-sequence mean squared output error.
// If `grad` is given, the gradient of that loss is accumulated into it.
double prefix_batch_loss(const FnoModel& model, const PrefixBatch& batch,
                         std::vector<double>* grad = nullptr, const FrozenGroups& frozen = {});

// sqrt(sum ||Y - F(U)||^2 / sum ||Y||^2) over the first `len` steps of each trajectory.
double relative_l2(const FnoModel& model, const std::vector<Trajectory>& trajs, int len);

// Probed lengths for the training log: min, midpoint and max prefix length.
std::vector<int> probe_lengths(const FnoConfig& cfg);

// Minimises the prefix-sampled risk with AdamW and returns the checkpoint with
// the lowest mean test relative L2 over the probed lengths.
NoTrainResult train_no(const std::vector<Trajectory>& train, const std::vector<Trajectory>& test,
                       const FnoConfig& cfg, const NoTrainOptions& opt,
                       const std::function<void(const NoLogRow&)>& on_epoch = {});

void write_no_log_csv(const std::vector<NoLogRow>& log, const std::filesystem::path& path);

}  // namespace bsf
