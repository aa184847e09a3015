#pragma once

// One-dimensional Fourier neural operator over the time axis.
//
//   v0      = P [u, t/(M-1)] + p                      pointwise lifting
//   v_{l+1} = act(W_l v_l + SpectralConv_l(v_l) + b_l) l = 0..L-1
//   y       = Q2 act(Q1 v_L + q1) + q2                 pointwise projection
//
// SpectralConv keeps the lowest `modes` rDFT coefficients of every channel,
// mixes channels with one complex matrix per mode and transforms back.
// Sequences of any length with floor(M/2)+1 >= modes are accepted.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "bsf/spectral.hpp"

namespace bsf {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

enum class Activation { Gelu, Identity };

struct FnoConfig {
  int channels = 64;
  int layers = 4;
  int modes = 16;
  int d_u = 2;
  int d_y = 2;
  bool include_time_channel = true;
  bool linear_projection = false;
  Activation activation = Activation::Gelu;
  // Prefix lengths the model was trained on.
  int min_len = 40;
  int max_len = 200;
  // Zero rows appended to the lifted sequence before the kernel layers and
  // cropped before the projection, so the last steps do not wrap onto the first.
  int pad = 0;

  int input_dim() const { return d_u + (include_time_channel ? 1 : 0); }
  // Shortest sequence that still has `modes` rDFT bins.
  int shortest_sequence() const { return 2 * (modes - 1); }
  bool operator==(const FnoConfig&) const = default;
};

void validate_fno_config(const FnoConfig& cfg);

enum class ParamGroup { Lifting = 0, Spectral = 1, Local = 2, Projection = 3 };

// Set of parameter groups excluded from gradient computation.
struct FrozenGroups {
  std::array<bool, 4> frozen{false, false, false, false};
  bool contains(ParamGroup g) const { return frozen[static_cast<int>(g)]; }
  FrozenGroups& add(ParamGroup g) {
    frozen[static_cast<int>(g)] = true;
    return *this;
  }
};

struct ParamBlock {
  std::string name;
  ParamGroup group;
  std::size_t offset = 0;
  std::vector<int> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

class FnoModel {
 public:
  explicit FnoModel(FnoConfig cfg);  // all parameters zero

  // Uniform fan-in initialisation; spectral weights scaled by 1/channels^2.
  static FnoModel random(const FnoConfig& cfg, std::uint64_t seed);

  const FnoConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t size() const { return params_.size(); }

  ConstRowMap lift_w() const { return mat(lift_w_); }
  ConstVecMap lift_b() const { return vec(lift_b_); }
  // Mode k of layer l, channels_out x channels_in.
  ConstRowMap spec_re(int l, int k) const { return mode_mat(spec_re_[l], k); }
  ConstRowMap spec_im(int l, int k) const { return mode_mat(spec_im_[l], k); }
  ConstRowMap local_w(int l) const { return mat(local_w_[l]); }
  ConstVecMap local_b(int l) const { return vec(local_b_[l]); }
  ConstRowMap proj1_w() const { return mat(proj1_w_); }
  ConstVecMap proj1_b() const { return vec(proj1_b_); }
  ConstRowMap proj2_w() const { return mat(proj2_w_); }
  ConstVecMap proj2_b() const { return vec(proj2_b_); }

  // Same views into an external buffer laid out like params().
  RowMap lift_w(double* base) const { return mat(base, lift_w_); }
  VecMap lift_b(double* base) const { return vec(base, lift_b_); }
  RowMap spec_re(double* base, int l, int k) const { return mode_mat(base, spec_re_[l], k); }
  RowMap spec_im(double* base, int l, int k) const { return mode_mat(base, spec_im_[l], k); }
  RowMap local_w(double* base, int l) const { return mat(base, local_w_[l]); }
  VecMap local_b(double* base, int l) const { return vec(base, local_b_[l]); }
  RowMap proj1_w(double* base) const { return mat(base, proj1_w_); }
  VecMap proj1_b(double* base) const { return vec(base, proj1_b_); }
  RowMap proj2_w(double* base) const { return mat(base, proj2_w_); }
  VecMap proj2_b(double* base) const { return vec(base, proj2_b_); }

  const ParamBlock& block(std::size_t index) const { return blocks_[index]; }

 private:
  std::size_t add_block(std::string name, ParamGroup group, std::vector<int> shape);
  ConstRowMap mat(std::size_t b) const;
  ConstVecMap vec(std::size_t b) const;
  ConstRowMap mode_mat(std::size_t b, int k) const;
  RowMap mat(double* base, std::size_t b) const;
  VecMap vec(double* base, std::size_t b) const;
  RowMap mode_mat(double* base, std::size_t b, int k) const;

  FnoConfig cfg_;
  std::vector<double> params_;
  std::vector<ParamBlock> blocks_;
  std::size_t lift_w_ = 0, lift_b_ = 0, proj1_w_ = 0, proj1_b_ = 0, proj2_w_ = 0, proj2_b_ = 0;
  std::vector<std::size_t> spec_re_, spec_im_, local_w_, local_b_;
};

// Forward intermediates kept for reverse-mode gradients and output Jacobians.
struct FnoTape {
  std::shared_ptr<const SpectralBasis> basis;
  Eigen::MatrixXd input;               // M x input_dim, time channel included
  std::vector<Eigen::MatrixXd> v;      // layers + 1 hidden states, M x channels
  std::vector<Eigen::MatrixXd> xr, xi; // retained coefficients per layer, modes x channels
  std::vector<Eigen::MatrixXd> h;      // pre-activations per layer
  std::vector<Eigen::MatrixXd> slope;  // activation derivative at h
  Eigen::MatrixXd head;                // projection pre-activation (two-layer head)
  Eigen::MatrixXd head_act, head_slope;
  Eigen::MatrixXd output;              // M x d_y

  int length() const { return static_cast<int>(input.rows()); }
};

// U is M x d_u. Throws ShapeError if M is too short for the mode count.
Eigen::MatrixXd fno_forward(const FnoModel& model, const Eigen::MatrixXd& U,
                            FnoTape* tape = nullptr);

// Reverse-mode gradient of <dY, output> with respect to every parameter.
// Frozen groups contribute zeros.
std::vector<double> fno_backward(const FnoModel& model, const FnoTape& tape,
                                 const Eigen::MatrixXd& dY, const FrozenGroups& frozen = {});

// Adds the gradient into `grad` (same layout as model.params()).
void fno_backward_accumulate(const FnoModel& model, const FnoTape& tape,
                             const Eigen::MatrixXd& dY, std::vector<double>& grad,
                             const FrozenGroups& frozen = {});

// d_y x d_u matrix d output(row) / d U(row), by forward-mode differentiation
// through the recorded pass.
Eigen::MatrixXd fno_output_jacobian(const FnoModel& model, const FnoTape& tape, int row);

// Directional derivative of the last output row along `direction` applied to
// the last input row.
Eigen::VectorXd fno_output_jvp(const FnoModel& model, const Eigen::MatrixXd& U,
                               const Eigen::VectorXd& direction);

void save_fno(const FnoModel& model, const std::filesystem::path& path);
FnoModel load_fno(const std::filesystem::path& path);
// Also verifies the stored architecture matches `expected` (prefix range ignored).
FnoModel load_fno(const std::filesystem::path& path, const FnoConfig& expected);

}  // namespace bsf
