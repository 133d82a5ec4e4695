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

// Small numerical building blocks shared by the token LM and the flow
// decoder: a flat parameter store with named matrix views, Adam, global-norm
// clipping, GELU and layer normalization with hand-written backward passes.

#pragma once

#include "kidvoice/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace kidvoice::nn {

using MatrixView = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixView = Eigen::Map<const Eigen::MatrixXd>;

struct TensorSpec {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;

    Eigen::Index size() const { return rows * cols; }
};

/// All parameters of a model live in one contiguous vector; tensors are
/// column-major views into it. Gradients use the same layout.
class ParamSet {
public:
    int add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    /// Allocates storage after all tensors were declared; zero-initialized.
    void finalize();

    MatrixView view(int id) { return view(data, id); }
    ConstMatrixView view(int id) const { return view(data, id); }
    MatrixView view(Eigen::VectorXd& flat, int id) const;
    ConstMatrixView view(const Eigen::VectorXd& flat, int id) const;

    int find(const std::string& name) const;
    const std::vector<TensorSpec>& specs() const { return specs_; }
    Eigen::Index total() const { return total_; }
    Eigen::VectorXd zeros() const { return Eigen::VectorXd::Zero(total_); }

    Eigen::VectorXd data;

private:
    std::vector<TensorSpec> specs_;
    Eigen::Index total_ = 0;
};

/// Fills a tensor with N(0, std^2) draws.
void init_normal(ParamSet& p, int id, double stddev, Rng& rng);
void init_constant(ParamSet& p, int id, double value);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index size, const AdamOptions& opts);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
    long steps() const { return t_; }

private:
    AdamOptions opts_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    long t_ = 0;
};

/// Rescales `grad` so that its L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
double clip_global_norm(Eigen::VectorXd& grad, double max_norm);

/// Rounds every entry through float32, the checkpoint storage precision.
void round_to_float(Eigen::VectorXd& v);

// ---- activations ----------------------------------------------------------

inline double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double t = std::tanh(c * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

Eigen::MatrixXd gelu(const Eigen::MatrixXd& x);
Eigen::MatrixXd gelu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);

/// Row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct LayerNormCache {
    Eigen::MatrixXd normalized;  // x_hat
    Eigen::VectorXd rstd;        // per row
};

inline constexpr double kLayerNormEps = 1e-5;

/// y = gain * (x - mean) / sqrt(var + eps) + bias, per row.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain, const Eigen::VectorXd& bias,
                           LayerNormCache* cache);

/// Returns dx; accumulates dgain/dbias.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::VectorXd& gain,
                                    const LayerNormCache& cache, Eigen::Ref<Eigen::VectorXd> dgain,
                                    Eigen::Ref<Eigen::VectorXd> dbias);

}  // namespace kidvoice::nn
