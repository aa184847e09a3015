#include "bsf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bsf/errors.hpp"

namespace bsf {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::vector<std::string> column_names(int d_u, int d_y) {
  std::vector<std::string> cols{"t"};
  for (int j = 0; j < d_u; ++j) cols.push_back("u" + std::to_string(j));
  for (int j = 0; j < d_y; ++j) cols.push_back("y" + std::to_string(j));
  return cols;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace

void write_trajectory_csv(const Trajectory& traj, const fs::path& file) {
  check_trajectory(traj);
  const int d_u = static_cast<int>(traj.U.cols());
  const int d_y = static_cast<int>(traj.Y.cols());
  std::string text = join(column_names(d_u, d_y)) + "\n";
  for (int i = 0; i < traj.length(); ++i) {
    append_number(text, traj.t(i));
    for (int j = 0; j < d_u; ++j) {
      text += ',';
      append_number(text, traj.U(i, j));
    }
    for (int j = 0; j < d_y; ++j) {
      text += ',';
      append_number(text, traj.Y(i, j));
    }
    text += '\n';
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + file.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + file.string() + "'");
}

Trajectory read_trajectory_csv(const fs::path& file, const std::string& task_id,
                               std::uint64_t seed, double dt) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError("missing trajectory file '" + file.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(file.string() + ":1: empty file");
  const auto header = split_commas(line);
  int d_u = 0;
  int d_y = 0;
  for (const auto& h : header) {
    if (!h.empty() && h[0] == 'u') ++d_u;
    if (!h.empty() && h[0] == 'y') ++d_y;
  }
  if (header.empty() || header[0] != "t" ||
      join(column_names(d_u, d_y)) != line) {
    throw ParseError(file.string() + ":1: unexpected header '" + line + "'");
  }
  const std::size_t ncols = header.size();

  std::vector<double> values;
  int lineno = 1;
  int rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != ncols) {
      std::ostringstream msg;
      msg << file.string() << ":" << lineno << ": expected " << ncols << " columns, got "
          << fields.size();
      throw ParseError(msg.str());
    }
    for (const auto& f : fields) {
      double v = 0.0;
      auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        std::ostringstream msg;
        msg << file.string() << ":" << lineno << ": invalid number '" << f << "'";
        throw ParseError(msg.str());
      }
      values.push_back(v);
    }
    ++rows;
  }

  Trajectory traj;
  traj.task_id = task_id;
  traj.seed = seed;
  traj.dt = dt;
  traj.t.resize(rows);
  traj.U.resize(rows, d_u);
  traj.Y.resize(rows, d_y);
  for (int i = 0; i < rows; ++i) {
    const double* row = values.data() + static_cast<std::size_t>(i) * ncols;
    traj.t(i) = row[0];
    for (int j = 0; j < d_u; ++j) traj.U(i, j) = row[1 + j];
    for (int j = 0; j < d_y; ++j) traj.Y(i, j) = row[1 + d_u + j];
  }
  try {
    check_trajectory(traj);
  } catch (const ShapeError& err) {
    throw ParseError(file.string() + ": " + err.what());
  }
  return traj;
}

void save_trajectories(const std::vector<Trajectory>& trajs, const fs::path& dir,
                       std::uint64_t master_seed) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "bsf-trajectories";
  manifest["version"] = 1;
  manifest["seed"] = master_seed;
  if (!trajs.empty()) {
    manifest["task_id"] = trajs.front().task_id;
    manifest["dt"] = trajs.front().dt;
    manifest["M"] = trajs.front().length();
    manifest["columns"] = column_names(static_cast<int>(trajs.front().U.cols()),
                                       static_cast<int>(trajs.front().Y.cols()));
  }
  json files = json::array();
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%05zu.csv", k);
    write_trajectory_csv(trajs[k], dir / name);
    files.push_back({{"path", name}, {"seed", trajs[k].seed}, {"task_id", trajs[k].task_id},
                     {"dt", trajs[k].dt}, {"M", trajs[k].length()}});
  }
  manifest["files"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << "\n";
}

std::vector<Trajectory> load_trajectories(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw ParseError("missing manifest '" + mpath.string() + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& err) {
    throw ParseError(mpath.string() + ": " + err.what());
  }
  if (!manifest.contains("files") || !manifest["files"].is_array()) {
    throw ParseError(mpath.string() + ": manifest has no 'files' array");
  }
  std::vector<Trajectory> trajs;
  for (const auto& entry : manifest["files"]) {
    try {
      const std::string name = entry.at("path").get<std::string>();
      const fs::path file = dir / name;
      if (!fs::exists(file)) {
        throw ParseError(mpath.string() + ": listed file '" + name + "' does not exist");
      }
      Trajectory traj = read_trajectory_csv(file, entry.at("task_id").get<std::string>(),
                                            entry.at("seed").get<std::uint64_t>(),
                                            entry.at("dt").get<double>());
      if (traj.length() != entry.at("M").get<int>()) {
        throw ParseError(file.string() + ": row count differs from manifest M");
      }
      trajs.push_back(std::move(traj));
    } catch (const json::exception& err) {
      throw ParseError(mpath.string() + ": bad file entry: " + err.what());
    }
  }
  return trajs;
}

Split split(const std::vector<Trajectory>& trajs, std::size_t n_train, std::size_t n_test,
            std::uint64_t seed) {
  if (n_train + n_test > trajs.size()) {
    throw ConfigError("split needs " + std::to_string(n_train + n_test) +
                      " trajectories but only " + std::to_string(trajs.size()) + " are available");
  }
  std::vector<std::size_t> order(trajs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split out;
  for (std::size_t k = 0; k < n_train; ++k) out.train.push_back(trajs[order[k]]);
  for (std::size_t k = 0; k < n_test; ++k) out.test.push_back(trajs[order[n_train + k]]);
  return out;
}

PrefixBatch sample_prefix_batch(const std::vector<Trajectory>& train, int batch_size, int min_len,
                                int max_len, std::mt19937_64& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (min_len < 1 || min_len > max_len) throw ConfigError("invalid prefix length range");
  if (train.empty()) throw ConfigError("no training trajectories");
  for (const auto& tr : train) {
    if (tr.length() < max_len) {
      throw ConfigError("trajectory shorter than the maximum prefix length");
    }
  }
  PrefixBatch batch;
  batch.prefix_len = std::uniform_int_distribution<int>(min_len, max_len)(rng);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  for (int b = 0; b < batch_size; ++b) {
    const Trajectory& tr = train[pick(rng)];
    batch.inputs.push_back(tr.U.topRows(batch.prefix_len));
    batch.targets.push_back(tr.Y.topRows(batch.prefix_len));
  }
  return batch;
}

}  // namespace bsf
