#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsf/trajectory.hpp"

namespace bsf {

// A directory with one CSV per trajectory (header `t,u0,u1,y0,y1`) and a
// `manifest.json` listing the files. Values are written in shortest
// round-trip form, so a save/load cycle is exact.
void save_trajectories(const std::vector<Trajectory>& trajs, const std::filesystem::path& dir,
                       std::uint64_t master_seed = 0);

// Throws ParseError naming the file (and line, for CSV errors).
std::vector<Trajectory> load_trajectories(const std::filesystem::path& dir);

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& file);
Trajectory read_trajectory_csv(const std::filesystem::path& file, const std::string& task_id,
                               std::uint64_t seed, double dt);

struct Split {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
};

// Seeded shuffle, then the first n_train go to train and the next n_test to test.
Split split(const std::vector<Trajectory>& trajs, std::size_t n_train, std::size_t n_test,
            std::uint64_t seed);

struct PrefixBatch {
  int prefix_len = 0;
  std::vector<Eigen::MatrixXd> inputs;   // B entries of prefix_len x d_u
  std::vector<Eigen::MatrixXd> targets;  // B entries of prefix_len x d_y
};

// Draws one prefix length uniformly from [min_len, max_len], then B
// trajectories with replacement, each cropped to that length.
PrefixBatch sample_prefix_batch(const std::vector<Trajectory>& train, int batch_size, int min_len,
                                int max_len, std::mt19937_64& rng);

}  // namespace bsf
