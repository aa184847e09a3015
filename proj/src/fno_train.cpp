#include "bsf/fno_train.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "bsf/errors.hpp"

namespace bsf {

double prefix_batch_loss(const FnoModel& model, const PrefixBatch& batch,
                         std::vector<double>* grad, const FrozenGroups& frozen) {
  const double B = static_cast<double>(batch.inputs.size());
  const double len = static_cast<double>(batch.prefix_len);
  double total = 0.0;
  FnoTape tape;
  for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
    const Eigen::MatrixXd pred = fno_forward(model, batch.inputs[b], grad ? &tape : nullptr);
    const Eigen::MatrixXd err = pred - batch.targets[b];
    total += err.squaredNorm() / len;
    if (grad) fno_backward_accumulate(model, tape, (2.0 / (B * len)) * err, *grad, frozen);
  }
  return total / B;
}

double relative_l2(const FnoModel& model, const std::vector<Trajectory>& trajs, int len) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& tr : trajs) {
    if (tr.length() < len) throw ConfigError("trajectory shorter than the probed length");
    const Eigen::MatrixXd pred = fno_forward(model, tr.U.topRows(len));
    num += (pred - tr.Y.topRows(len)).squaredNorm();
    den += tr.Y.topRows(len).squaredNorm();
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<int> probe_lengths(const FnoConfig& cfg) {
  if (cfg.min_len == cfg.max_len) return {cfg.max_len};
  return {cfg.min_len, (cfg.min_len + cfg.max_len) / 2, cfg.max_len};
}

NoTrainResult train_no(const std::vector<Trajectory>& train, const std::vector<Trajectory>& test,
                       const FnoConfig& cfg, const NoTrainOptions& opt,
                       const std::function<void(const NoLogRow&)>& on_epoch) {
  if (train.empty()) throw ConfigError("operator training needs at least one trajectory");
  NoTrainResult result{FnoModel::random(cfg, opt.seed), {}, -1, 0.0};
  FnoModel& model = result.model;
  FnoModel best = model;
  AdamW optimizer(model.size(), opt.adamw);
  std::mt19937_64 rng(opt.seed ^ 0x5DEECE66DULL);
  const int per_epoch = opt.batches_per_epoch > 0
                            ? opt.batches_per_epoch
                            : static_cast<int>((train.size() + opt.batch_size - 1) / opt.batch_size);
  const auto lengths = probe_lengths(cfg);
  std::vector<double> grad(model.size());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int k = 0; k < per_epoch; ++k) {
      const PrefixBatch batch = sample_prefix_batch(train, opt.batch_size, cfg.min_len, cfg.max_len, rng);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = prefix_batch_loss(model, batch, &grad, opt.frozen);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "operator training diverged at epoch " << epoch << ", batch " << k
            << " (prefix length " << batch.prefix_len << ")";
        throw DivergenceError(msg.str());
      }
      loss_sum += loss;
      optimizer.step(model.params(), grad);
    }

    NoLogRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / per_epoch;
    row.lengths = lengths;
    double score = 0.0;
    for (int len : lengths) {
      const double r = test.empty() ? std::sqrt(row.train_loss) : relative_l2(model, test, len);
      row.test_rel_l2.push_back(r);
      score += r / lengths.size();
    }
    if (!std::isfinite(score)) throw DivergenceError("operator test error became non-finite");
    if (result.best_epoch < 0 || score < result.best_score) {
      result.best_epoch = epoch;
      result.best_score = score;
      best = model;
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.model = std::move(best);
  return result;
}

void write_no_log_csv(const std::vector<NoLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << "epoch,train_loss";
  if (!log.empty()) {
    for (int len : log.front().lengths) out << ",test_rel_l2@" << len;
  }
  out << "\n";
  out.precision(10);
  for (const auto& row : log) {
    out << row.epoch << "," << row.train_loss;
    for (double r : row.test_rel_l2) out << "," << r;
    out << "\n";
  }
}

}  // namespace bsf
