// Command-line entry point: collect, train-no, train-bcbf, run, eval, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsf/bcbf.hpp"
#include "bsf/dataset.hpp"
#include "bsf/errors.hpp"
#include "bsf/fno_train.hpp"
#include "bsf/harness.hpp"

namespace fs = std::filesystem;
using namespace bsf;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

TaskSpec task_from(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  return load_task_spec(c.config);
}

std::uint64_t seed_from(const Common& c, const TaskSpec& spec) { return c.seed_given ? c.seed : spec.seed; }

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "task file (TOML)");
  if (config_required) opt->required();
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& v) { c.seed = v, c.seed_given = true; }, "master seed");
}

// Task file stored next to run outputs so eval/report can rebuild the safe set.
TaskSpec task_of_run(const fs::path& dir, const Common& c) {
  if (!c.config.empty()) return load_task_spec(c.config);
  const fs::path p = dir / "task.toml";
  if (!fs::exists(p)) throw ConfigError("'" + dir.string() + "' has no task.toml; pass --config");
  return load_task_spec(p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary safety filter experiments"};
  app.require_subcommand(1);

  Common col_c, tno_c, tb_c, run_c, ev_c, rep_c;

  auto* col = app.add_subcommand("collect", "record base-policy rollouts");
  add_common(col, col_c, true);
  int col_n = 256;
  std::string col_out;
  col->add_option("--n", col_n, "number of rollouts");
  col->add_option("--out", col_out, "output directory")->required();

  auto* tno = app.add_subcommand("train-no", "train the neural operator");
  add_common(tno, tno_c, true);
  std::string tno_data, tno_out;
  bool fixed_horizon = false;
  NoTrainOptions no_opt;
  FnoConfig fno_cfg;
  int tno_test = -1;
  tno->add_option("--data", tno_data, "trajectory directory")->required();
  tno->add_option("--out", tno_out, "checkpoint path")->required();
  tno->add_flag("--fixed-horizon", fixed_horizon, "disable prefix sampling (offline baseline)");
  tno->add_option("--epochs", no_opt.epochs);
  tno->add_option("--batch-size", no_opt.batch_size);
  tno->add_option("--lr", no_opt.adamw.lr);
  tno->add_option("--channels", fno_cfg.channels);
  tno->add_option("--layers", fno_cfg.layers);
  tno->add_option("--modes", fno_cfg.modes);
  tno->add_option("--min-len", fno_cfg.min_len);
  tno->add_option("--max-len", fno_cfg.max_len);
  tno->add_option("--n-test", tno_test, "held-out trajectories (default 20%)");

  auto* tb = app.add_subcommand("train-bcbf", "train the barrier");
  add_common(tb, tb_c, true);
  std::string tb_data, tb_out;
  BarrierTrainOptions b_opt;
  int tb_test = -1;
  tb->add_option("--data", tb_data, "trajectory directory")->required();
  tb->add_option("--out", tb_out, "checkpoint path")->required();
  tb->add_option("--epochs", b_opt.epochs);
  tb->add_option("--batch-size", b_opt.batch_size);
  tb->add_option("--lr", b_opt.nadam.lr);
  tb->add_option("--weight-decay", b_opt.nadam.weight_decay);
  tb->add_option("--decoupled-decay", b_opt.nadam.decoupled_weight_decay, "shrink weights instead of an L2 gradient term");
  tb->add_option("--margin", b_opt.loss.margin);
  tb->add_option("--lambda-d", b_opt.loss.lambda_decrease);
  tb->add_option("--n-test", tb_test, "held-out trajectories (default 20%)");

  auto* run = app.add_subcommand("run", "evaluate a controller variant");
  add_common(run, run_c, true);
  std::string run_no, run_bcbf, run_variant = "filtered", run_out;
  int run_n = 128;
  double beta = -1.0, alpha = -1.0, Cgain = -1.0;
  run->add_option("--no", run_no, "operator checkpoint (fixed-horizon one for --variant offline)");
  run->add_option("--bcbf", run_bcbf, "barrier checkpoint");
  run->add_option("--beta", beta, "mismatch threshold");
  run->add_option("--alpha", alpha, "class-K gain");
  run->add_option("--C", Cgain, "finite-time gain");
  run->add_option("--variant", run_variant, "base | filtered | offline");
  run->add_option("--n", run_n, "rollouts");
  run->add_option("--out", run_out, "run directory")->required();

  auto* ev = app.add_subcommand("eval", "recompute metrics of a stored run");
  add_common(ev, ev_c, false);
  std::string ev_in;
  ev->add_option("--in", ev_in, "run directory")->required();

  auto* rep = app.add_subcommand("report", "summarise stored runs");
  add_common(rep, rep_c, false);
  std::vector<std::string> rep_in;
  std::string rep_out;
  bool no_plots = false;
  rep->add_option("--in", rep_in, "run directories")->required();
  rep->add_option("--out", rep_out, "report directory")->required();
  rep->add_flag("--no-plots", no_plots);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*col) {
      const TaskSpec spec = task_from(col_c);
      const std::uint64_t seed = seed_from(col_c, spec);
      save_trajectories(collect(spec, col_n, seed), col_out, seed);
      std::cout << "wrote " << col_n << " trajectories to " << col_out << "\n";
    } else if (*tno || *tb) {
      const Common& c = *tno ? tno_c : tb_c;
      const TaskSpec spec = task_from(c);
      const std::uint64_t seed = seed_from(c, spec);
      const auto trajs = load_trajectories(*tno ? tno_data : tb_data);
      const int req_test = *tno ? tno_test : tb_test;
      const std::size_t n_test =
          req_test >= 0 ? static_cast<std::size_t>(req_test) : std::max<std::size_t>(1, trajs.size() / 5);
      if (n_test >= trajs.size()) throw ConfigError("not enough trajectories for the requested test split");
      const Split data = split(trajs, trajs.size() - n_test, n_test, seed);
      if (*tno) {
        no_opt.seed = seed;
        auto on_epoch = [](const NoLogRow& r) {
          std::cout << "epoch " << r.epoch << " loss " << r.train_loss;
          for (std::size_t k = 0; k < r.lengths.size(); ++k) {
            std::cout << " rel_l2@" << r.lengths[k] << " " << r.test_rel_l2[k];
          }
          std::cout << "\n";
        };
        FnoConfig cfg = fno_cfg;
        if (fixed_horizon) cfg.min_len = cfg.max_len = spec.M;
        const NoTrainResult res = train_no(data.train, data.test, cfg, no_opt, on_epoch);
        save_fno(res.model, tno_out);
        write_no_log_csv(res.log, tno_out + ".log.csv");
        std::cout << "best epoch " << res.best_epoch << " score " << res.best_score << "\n";
      } else {
        b_opt.seed = seed;
        BarrierConfig cfg;
        cfg.alpha = spec.filter.alpha;
        cfg.C = spec.filter.C;
        auto res = train_bcbf(make_barrier_samples(data.train, spec.safe_set),
                              make_barrier_samples(data.test, spec.safe_set), cfg, b_opt,
                              [](const BarrierLogRow& r) {
                                std::cout << "epoch " << r.epoch << " loss " << r.loss << " test_sign_agreement "
                                          << r.test.sign_agreement << " test_violation_rate "
                                          << r.test.violation_rate << "\n";
                              });
        save_bcbf(res.model, tb_out);
        write_barrier_log_csv(res.log, tb_out + ".log.csv");
      }
    } else if (*run) {
      const TaskSpec spec = task_from(run_c);
      const std::uint64_t seed = seed_from(run_c, spec);
      const Variant variant = parse_variant(run_variant);
      EvalModels models;
      models.filter = filter_config(spec);
      if (beta > 0.0) models.filter.beta = beta;
      if (alpha > 0.0) models.filter.alpha = alpha;
      if (Cgain >= 0.0) models.filter.C = Cgain;
      std::optional<FnoModel> fno;
      std::optional<BarrierModel> barrier;
      std::vector<fs::path> ckpts;
      if (variant != Variant::Base) {
        if (run_no.empty() || run_bcbf.empty()) throw ConfigError("--no and --bcbf are required for filtered variants");
        fno.emplace(load_fno(run_no));
        barrier.emplace(load_bcbf(run_bcbf));
        (variant == Variant::Filtered ? models.online : models.offline) = &*fno;
        models.bcbf = &*barrier;
        ckpts = {run_no, run_bcbf};
      }
      const EvalResult r = evaluate(spec, variant, models, run_n, seed);
      write_eval(r, run_out);
      {
        std::ofstream t(fs::path(run_out) / "task.toml");
        t << read_text(run_c.config);
      }
      nlohmann::json cfg = {{"task_file", run_c.config},
                            {"variant", run_variant},
                            {"n", run_n},
                            {"filter", {{"alpha", models.filter.alpha}, {"C", models.filter.C},
                                        {"beta", models.filter.beta}, {"warmup", models.filter.warmup}}}};
      write_manifest(run_out, cfg, seed, ckpts);
      std::cout << summary_table({r});
    } else if (*ev) {
      const TaskSpec spec = task_of_run(ev_in, ev_c);
      const EvalResult r = read_eval(ev_in, spec.safe_set);
      nlohmann::json j = {{"task_id", r.task_id}, {"variant", variant_name(r.variant)},
                          {"metrics", metrics_json(r.metrics)}};
      j["metrics"].erase("seeds");
      std::cout << j.dump(2) << "\n";
    } else if (*rep) {
      std::vector<EvalResult> results;
      for (const auto& d : rep_in) results.push_back(read_eval(d, task_of_run(d, rep_c).safe_set));
      report(results, rep_out, !no_plots);
      std::cout << summary_table(results);
    }
  } catch (const std::exception& e) {
    std::cerr << "bsf: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
