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

#include "kidvoice/speechcodec.hpp"

#include "kidvoice/common.hpp"

#include <cmath>
#include <limits>

namespace kidvoice::speechcodec {

namespace {

// Squared distances from every frame (rows of x) to every centroid.
Eigen::MatrixXd pairwise_sq(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c) {
    Eigen::MatrixXd d(x.rows(), c.rows());
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
        d.col(j) = (x.rowwise() - c.row(j)).rowwise().squaredNorm();
    }
    return d;
}

}  // namespace

Codebook train_codebook(std::span<const dsp::MelSpectrogram> mels, const KMeansOptions& opts) {
    Eigen::Index total = 0, dim = -1;
    for (const auto& m : mels) {
        total += m.frames.rows();
        if (dim < 0) dim = m.frames.cols();
        if (m.frames.cols() != dim) throw DataError("train_codebook: mel widths differ");
    }
    Eigen::MatrixXd frames(total, std::max<Eigen::Index>(dim, 0));
    Eigen::Index at = 0;
    for (const auto& m : mels) {
        frames.middleRows(at, m.frames.rows()) = m.frames;
        at += m.frames.rows();
    }
    return train_codebook(frames, opts);
}

Codebook train_codebook(const Eigen::MatrixXd& x, const KMeansOptions& opts) {
    const Eigen::Index n = x.rows();
    const int k = opts.k;
    if (k < 2) throw DataError("train_codebook: K must be >= 2");
    if (n < k) {
        throw DataError("train_codebook: " + std::to_string(n) + " frames is fewer than K=" + std::to_string(k));
    }
    if (!x.allFinite()) throw NumericError("train_codebook: non-finite frames");

    Rng rng(opts.seed);
    Eigen::MatrixXd c(k, x.cols());
    // k-means++ seeding.
    c.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<size_t>(n))));
    Eigen::VectorXd best = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        const double sum = best.sum();
        if (!(sum > 0.0)) {
            throw DataError("train_codebook: fewer distinct frames than K=" + std::to_string(k));
        }
        const double r = rng.uniform() * sum;
        double acc = 0.0;
        Eigen::Index pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += best[i];
            if (acc > r && best[i] > 0.0) {
                pick = i;
                break;
            }
        }
        while (best[pick] <= 0.0 && pick > 0) --pick;
        c.row(j) = x.row(pick);
        best = best.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
    }

    std::vector<int> assign(static_cast<size_t>(n), 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.iterations; ++it) {
        const Eigen::MatrixXd d = pairwise_sq(x, c);
        double inertia = 0.0;
        Eigen::VectorXd own(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index arg = 0;
            double v = d(i, 0);
            for (Eigen::Index j = 1; j < k; ++j) {
                if (d(i, j) < v) {
                    v = d(i, j);
                    arg = j;
                }
            }
            assign[static_cast<size_t>(i)] = static_cast<int>(arg);
            own[i] = v;
            inertia += v;
        }

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
            ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<size_t>(j)] > 0) {
                c.row(j) = sums.row(j) / counts[static_cast<size_t>(j)];
            } else {
                Eigen::Index far = 0;
                own.maxCoeff(&far);
                c.row(j) = x.row(far);
                own[far] = 0.0;
            }
        }

        const double change = std::abs(prev_inertia - inertia) / std::max(inertia, 1e-300);
        prev_inertia = inertia;
        if (change < opts.tolerance) break;
    }

    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            if (c.row(a) == c.row(b)) throw DataError("train_codebook: duplicate centroids (too few distinct frames)");
        }
    }
    Codebook cb;
    cb.centroids = std::move(c);
    return cb;
}

int nearest_centroid(const Codebook& cb, const Eigen::Ref<const Eigen::RowVectorXd>& frame) {
    int arg = 0;
    double v = std::numeric_limits<double>::infinity();
    for (int j = 0; j < cb.size(); ++j) {
        const double d = (cb.centroids.row(j) - frame).squaredNorm();
        if (d < v) {
            v = d;
            arg = j;
        }
    }
    return arg;
}

SpeechTokenSeq encode_speech(const dsp::MelSpectrogram& m, const Codebook& cb) {
    if (m.frames.cols() != cb.dim()) {
        throw DataError("encode_speech: mel has " + std::to_string(m.frames.cols()) + " bands, codebook expects " +
                        std::to_string(cb.dim()));
    }
    SpeechTokenSeq out;
    out.tokens.reserve(static_cast<size_t>(m.frames.rows()) + 1);
    for (Eigen::Index f = 0; f < m.frames.rows(); ++f) out.tokens.push_back(nearest_centroid(cb, m.frames.row(f)));
    out.tokens.push_back(cb.eos());
    return out;
}

dsp::MelSpectrogram decode_speech(const SpeechTokenSeq& t, const Codebook& cb, const dsp::MelConfig& cfg) {
    size_t n = t.tokens.size();
    if (n > 0 && t.tokens.back() == cb.eos()) --n;
    dsp::MelSpectrogram m;
    m.config = cfg;
    m.config.n_mels = cb.dim();
    m.frames.resize(static_cast<Eigen::Index>(n), cb.dim());
    for (size_t i = 0; i < n; ++i) {
        const int id = t.tokens[i];
        if (id < 0 || id >= cb.size()) {
            throw DataError("decode_speech: token " + std::to_string(id) + " at position " + std::to_string(i) +
                            " out of range for K=" + std::to_string(cb.size()));
        }
        m.frames.row(static_cast<Eigen::Index>(i)) = cb.centroids.row(id);
    }
    return m;
}

double quantization_error(const Eigen::MatrixXd& frames, const Codebook& cb) {
    if (frames.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index f = 0; f < frames.rows(); ++f) {
        total += (cb.centroids.row(nearest_centroid(cb, frames.row(f))) - frames.row(f)).squaredNorm();
    }
    return total / static_cast<double>(frames.rows());
}

}  // namespace kidvoice::speechcodec
