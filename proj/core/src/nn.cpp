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

#include "kidvoice/nn.hpp"

namespace kidvoice::nn {

int ParamSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (find(name) >= 0) throw std::logic_error("ParamSet: duplicate tensor " + name);
    specs_.push_back({name, rows, cols, total_});
    total_ += rows * cols;
    return static_cast<int>(specs_.size()) - 1;
}

void ParamSet::finalize() { data = Eigen::VectorXd::Zero(total_); }

MatrixView ParamSet::view(Eigen::VectorXd& flat, int id) const {
    const auto& s = specs_.at(static_cast<size_t>(id));
    return MatrixView(flat.data() + s.offset, s.rows, s.cols);
}

ConstMatrixView ParamSet::view(const Eigen::VectorXd& flat, int id) const {
    const auto& s = specs_.at(static_cast<size_t>(id));
    return ConstMatrixView(flat.data() + s.offset, s.rows, s.cols);
}

int ParamSet::find(const std::string& name) const {
    for (size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

void init_normal(ParamSet& p, int id, double stddev, Rng& rng) {
    auto v = p.view(id);
    // Column-major fill order is part of the determinism contract.
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        for (Eigen::Index r = 0; r < v.rows(); ++r) v(r, c) = stddev * rng.normal();
    }
}

void init_constant(ParamSet& p, int id, double value) { p.view(id).setConstant(value); }

Adam::Adam(Eigen::Index size, const AdamOptions& opts)
    : opts_(opts), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
    v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    params.array() -= opts_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + opts_.eps);
}

double clip_global_norm(Eigen::VectorXd& grad, double max_norm) {
    const double norm = grad.norm();
    if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
    return norm;
}

void round_to_float(Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
}

Eigen::MatrixXd gelu(const Eigen::MatrixXd& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Eigen::MatrixXd gelu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
    return dy.cwiseProduct(x.unaryExpr([](double v) { return gelu_grad(v); }));
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        p.row(r) = (logits.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain, const Eigen::VectorXd& bias,
                           LayerNormCache* cache) {
    const auto d = static_cast<double>(x.cols());
    Eigen::MatrixXd xhat(x.rows(), x.cols());
    Eigen::VectorXd rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / d;
        const double var = (x.row(r).array() - mean).square().sum() / d;
        rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(r) = (x.row(r).array() - mean) * rstd[r];
    }
    Eigen::MatrixXd y = (xhat.array().rowwise() * gain.transpose().array()).rowwise() + bias.transpose().array();
    if (cache != nullptr) {
        cache->normalized = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::VectorXd& gain,
                                    const LayerNormCache& cache, Eigen::Ref<Eigen::VectorXd> dgain,
                                    Eigen::Ref<Eigen::VectorXd> dbias) {
    const auto d = static_cast<double>(dy.cols());
    dgain += dy.cwiseProduct(cache.normalized).colwise().sum().transpose();
    dbias += dy.colwise().sum().transpose();
    const Eigen::MatrixXd dxhat = dy.array().rowwise() * gain.transpose().array();
    Eigen::MatrixXd dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(cache.normalized.row(r)) / d;
        dx.row(r) = cache.rstd[r] * (dxhat.row(r).array() - m1 - cache.normalized.row(r).array() * m2);
    }
    return dx;
}

}  // namespace kidvoice::nn
