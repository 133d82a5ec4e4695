// Copyright 2026 The kidvoice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Conditional flow matching over single mel frames. The vector field is a
// per-frame MLP on [x_t, time embedding, coarse mel frame, speaker vector];
// samples come from Euler integration of the learned field.

#pragma once

#include "kidvoice/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <utility>

namespace kidvoice::flowdec {

inline constexpr int kTimeEmbeddingDim = 8;

struct FlowConfig {
    int hidden = 128;
    int layers = 3;
    int euler_steps = 10;
    double sigma_min = 1e-4;
    std::uint64_t seed = 0;
    int n_mels = 40;
    int cond_dim = 40 + 16;  // coarse mel frame + speaker embedding

    int input_dim() const { return n_mels + kTimeEmbeddingDim + cond_dim; }
    /// Throws DataError on inconsistent sizes.
    void validate() const;
    bool operator==(const FlowConfig&) const = default;
};

/// Frame-wise field v(x, t, c): rows of x, entries of t and rows of c are
/// matched one to one. Returns a matrix shaped like x.
using VectorField = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                                                  const Eigen::MatrixXd& cond)>;

class FlowModel {
public:
    explicit FlowModel(const FlowConfig& cfg);

    const FlowConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    /// Weight and bias ids per dense layer, input side first.
    const std::vector<std::pair<int, int>>& dense() const { return dense_; }

    Eigen::MatrixXd velocity(const Eigen::MatrixXd& x, const Eigen::VectorXd& t, const Eigen::MatrixXd& cond) const;
    VectorField field() const;

private:
    FlowConfig cfg_;
    nn::ParamSet params_;
    std::vector<std::pair<int, int>> dense_;
};

/// sin/cos of pi*t at frequencies 1, 2, 4, 8.
Eigen::RowVectorXd time_embedding(double t);

/// x_t = (1-t) x0 + t x1 and u_t = x1 - x0. Throws DataError on a size
/// mismatch or t outside [0, 1].
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> ot_path(const Eigen::RowVectorXd& x0, const Eigen::RowVectorXd& x1,
                                                          double t);

struct FlowBatch {
    Eigen::MatrixXd x1;    // N x n_mels target frames
    Eigen::MatrixXd cond;  // N x cond_dim
};

/// Seeded noise and times used by cfm_loss.
struct CfmDraws {
    Eigen::MatrixXd x0;
    Eigen::VectorXd t;
};
CfmDraws draw_cfm(Eigen::Index frames, Eigen::Index dim, std::uint64_t seed);

/// Mean over frames of |v(x_t, t, c) - u_t|^2.
double cfm_loss(const VectorField& field, const FlowBatch& batch, std::uint64_t seed);
double cfm_loss(const FlowModel& model, const FlowBatch& batch, std::uint64_t seed);
double cfm_loss_and_grad(const FlowModel& model, const FlowBatch& batch, std::uint64_t seed, Eigen::VectorXd& grad);

/// Euler integration from N(0, I) noise, one row per condition row.
Eigen::MatrixXd sample_frames(const VectorField& field, const Eigen::MatrixXd& cond, int n_mels, int euler_steps,
                              std::uint64_t seed);
Eigen::MatrixXd sample_frames(const FlowModel& model, const Eigen::MatrixXd& cond, int euler_steps,
                              std::uint64_t seed);

}  // namespace kidvoice::flowdec
