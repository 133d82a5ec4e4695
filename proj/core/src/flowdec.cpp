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

#include "kidvoice/flowdec.hpp"

#include "kidvoice/common.hpp"

#include <cmath>
#include <numbers>

namespace kidvoice::flowdec {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

void FlowConfig::validate() const {
    if (euler_steps < 1) throw DataError("FlowConfig: euler_steps must be >= 1");
    if (layers < 1) throw DataError("FlowConfig: layers must be >= 1");
    if (n_mels < 1 || cond_dim < 0) throw DataError("FlowConfig: bad dimensions");
    if (hidden < n_mels) throw DataError("FlowConfig: hidden must be >= n_mels");
    if (!(sigma_min >= 0.0)) throw DataError("FlowConfig: sigma_min must be >= 0");
}

FlowModel::FlowModel(const FlowConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int in = cfg.input_dim();
    for (int l = 0; l <= cfg.layers; ++l) {
        const int out = l == cfg.layers ? cfg.n_mels : cfg.hidden;
        const std::string s = "dense" + std::to_string(l) + ".";
        dense_.emplace_back(params_.add(s + "w", out, in), params_.add(s + "b", out, 1));
        in = out;
    }
    params_.finalize();
    Rng rng(derive_seed(cfg.seed, 0x464c));
    for (const auto& [w, b] : dense_) {
        nn::init_normal(params_, w, 1.0 / std::sqrt(static_cast<double>(params_.specs()[w].cols)), rng);
    }
}

RowVectorXd time_embedding(double t) {
    RowVectorXd e(kTimeEmbeddingDim);
    for (int i = 0; i < kTimeEmbeddingDim / 2; ++i) {
        const double a = std::numbers::pi * std::ldexp(1.0, i) * t;
        e[2 * i] = std::sin(a);
        e[2 * i + 1] = std::cos(a);
    }
    return e;
}

namespace {

MatrixXd assemble_input(const FlowConfig& cfg, const MatrixXd& x, const VectorXd& t, const MatrixXd& cond) {
    if (x.cols() != cfg.n_mels || cond.cols() != cfg.cond_dim || x.rows() != cond.rows() || t.size() != x.rows()) {
        throw DataError("flowdec: input shapes do not match the model");
    }
    MatrixXd in(x.rows(), cfg.input_dim());
    in.leftCols(cfg.n_mels) = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r) in.row(r).segment(cfg.n_mels, kTimeEmbeddingDim) = time_embedding(t[r]);
    in.rightCols(cfg.cond_dim) = cond;
    return in;
}

struct MlpCache {
    std::vector<MatrixXd> acts;  // input of each dense layer
    std::vector<MatrixXd> pre;   // pre-activations of hidden layers
};

MatrixXd mlp(const FlowModel& m, const MatrixXd& in, MlpCache* cache) {
    const auto& p = m.params();
    MatrixXd a = in;
    const auto& dense = m.dense();
    for (size_t l = 0; l < dense.size(); ++l) {
        MatrixXd z = (a * p.view(dense[l].first).transpose()).rowwise() + p.view(dense[l].second).col(0).transpose();
        if (cache != nullptr) cache->acts.push_back(a);
        if (l + 1 == dense.size()) return z;
        if (cache != nullptr) cache->pre.push_back(z);
        a = nn::gelu(z);
    }
    return a;
}

}  // namespace

MatrixXd FlowModel::velocity(const MatrixXd& x, const VectorXd& t, const MatrixXd& cond) const {
    MatrixXd v = mlp(*this, assemble_input(cfg_, x, t, cond), nullptr);
    if (!v.allFinite()) throw NumericError("flowdec: non-finite vector field");
    return v;
}

VectorField FlowModel::field() const {
    return [this](const MatrixXd& x, const VectorXd& t, const MatrixXd& c) { return velocity(x, t, c); };
}

std::pair<RowVectorXd, RowVectorXd> ot_path(const RowVectorXd& x0, const RowVectorXd& x1, double t) {
    if (x0.size() != x1.size()) throw DataError("ot_path: frame dimensions differ");
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("ot_path: t outside [0, 1]");
    return {(1.0 - t) * x0 + t * x1, x1 - x0};
}

CfmDraws draw_cfm(Eigen::Index frames, Eigen::Index dim, std::uint64_t seed) {
    Rng rng(seed);
    CfmDraws d{MatrixXd(frames, dim), VectorXd(frames)};
    for (Eigen::Index r = 0; r < frames; ++r) {
        for (Eigen::Index c = 0; c < dim; ++c) d.x0(r, c) = rng.normal();
        d.t[r] = rng.uniform();
    }
    return d;
}

namespace {

void check_batch(const FlowBatch& b) {
    if (b.x1.rows() == 0) throw DataError("cfm_loss: empty batch");
    if (b.cond.rows() != b.x1.rows()) throw DataError("cfm_loss: condition rows differ from frames");
}

// x_t and u_t for every row.
std::pair<MatrixXd, MatrixXd> path_batch(const FlowBatch& b, const CfmDraws& d) {
    MatrixXd xt(b.x1.rows(), b.x1.cols());
    for (Eigen::Index r = 0; r < b.x1.rows(); ++r) xt.row(r) = (1.0 - d.t[r]) * d.x0.row(r) + d.t[r] * b.x1.row(r);
    return {std::move(xt), b.x1 - d.x0};
}

}  // namespace

double cfm_loss(const VectorField& field, const FlowBatch& batch, std::uint64_t seed) {
    check_batch(batch);
    const CfmDraws d = draw_cfm(batch.x1.rows(), batch.x1.cols(), seed);
    const auto [xt, ut] = path_batch(batch, d);
    const double loss = (field(xt, d.t, batch.cond) - ut).squaredNorm() / static_cast<double>(batch.x1.rows());
    if (!std::isfinite(loss)) throw NumericError("cfm_loss: non-finite loss");
    return loss;
}

double cfm_loss(const FlowModel& model, const FlowBatch& batch, std::uint64_t seed) {
    return cfm_loss(model.field(), batch, seed);
}

double cfm_loss_and_grad(const FlowModel& model, const FlowBatch& batch, std::uint64_t seed, VectorXd& grad) {
    check_batch(batch);
    const auto& p = model.params();
    const CfmDraws d = draw_cfm(batch.x1.rows(), batch.x1.cols(), seed);
    const auto [xt, ut] = path_batch(batch, d);
    MlpCache cache;
    const MatrixXd v = mlp(model, assemble_input(model.config(), xt, d.t, batch.cond), &cache);
    const double n = static_cast<double>(batch.x1.rows());
    const MatrixXd diff = v - ut;
    const double loss = diff.squaredNorm() / n;
    if (!std::isfinite(loss)) throw NumericError("cfm_loss: non-finite loss");

    grad = p.zeros();
    MatrixXd dz = 2.0 * diff / n;
    const auto& dense = model.dense();
    for (int l = static_cast<int>(dense.size()) - 1; l >= 0; --l) {
        const auto [w, b] = dense[static_cast<size_t>(l)];
        p.view(grad, w) += dz.transpose() * cache.acts[static_cast<size_t>(l)];
        p.view(grad, b).col(0) += dz.colwise().sum().transpose();
        if (l == 0) break;
        dz = nn::gelu_backward(cache.pre[static_cast<size_t>(l - 1)], dz * p.view(w));
    }
    if (!grad.allFinite()) throw NumericError("cfm_loss: non-finite gradient");
    return loss;
}

MatrixXd sample_frames(const VectorField& field, const MatrixXd& cond, int n_mels, int euler_steps,
                       std::uint64_t seed) {
    if (euler_steps < 1) throw DataError("sample_frames: euler_steps must be >= 1");
    Rng rng(seed);
    MatrixXd x(cond.rows(), n_mels);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < n_mels; ++c) x(r, c) = rng.normal();
    }
    const double h = 1.0 / euler_steps;
    for (int k = 0; k < euler_steps; ++k) {
        const VectorXd t = VectorXd::Constant(x.rows(), static_cast<double>(k) / euler_steps);
        x += h * field(x, t, cond);
        if (!x.allFinite()) throw NumericError("sample_frames: non-finite state at step " + std::to_string(k));
    }
    return x;
}

MatrixXd sample_frames(const FlowModel& model, const MatrixXd& cond, int euler_steps, std::uint64_t seed) {
    return sample_frames(model.field(), cond, model.config().n_mels, euler_steps, seed);
}

}  // namespace kidvoice::flowdec
