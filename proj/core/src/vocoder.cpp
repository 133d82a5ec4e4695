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

#include "fft.hpp"
#include "kidvoice/common.hpp"
#include "kidvoice/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace kidvoice::dsp {

namespace {

constexpr int kMaxPeaksPerFrame = 8;
constexpr int kGoldenIterations = 24;

/// Power spectrum of a unit-amplitude Hann-windowed cosine at `hz`, the
/// analysis view of a stationary sinusoid.
class SinusoidTemplates {
public:
    explicit SinusoidTemplates(const MelConfig& cfg)
        : cfg_(cfg), fft_(cfg.n_fft), window_(hann_window(cfg.n_fft)) {}

    Eigen::VectorXd power(double hz) {
        const int n = cfg_.n_fft;
        const double w = 2.0 * std::numbers::pi * hz / cfg_.sample_rate_hz;
        for (int i = 0; i < n; ++i) fft_.real()[i] = window_[i] * std::cos(w * i);
        fft_.forward();
        Eigen::VectorXd p(fft_.bins());
        for (int k = 0; k < fft_.bins(); ++k) p[k] = std::norm(fft_.spectrum()[k]);
        return p;
    }

private:
    MelConfig cfg_;
    detail::RealFft fft_;
    std::vector<double> window_;
};

/// Nonnegative amplitudes minimizing ||U a - t|| by cyclic coordinate
/// descent (U is small: mel bands x peaks).
Eigen::VectorXd nnls_small(const Eigen::MatrixXd& u, const Eigen::VectorXd& t, int sweeps = 100) {
    const Eigen::MatrixXd g = u.transpose() * u;
    const Eigen::VectorXd b = u.transpose() * t;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(u.cols());
    for (int s = 0; s < sweeps; ++s) {
        double change = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            if (g(i, i) <= 0.0) continue;
            const double grad = g.row(i).dot(a) - b[i];
            const double next = std::max(0.0, a[i] - grad / g(i, i));
            change = std::max(change, std::abs(next - a[i]));
            a[i] = next;
        }
        if (change <= 1e-14 * (1.0 + a.cwiseAbs().maxCoeff())) break;
    }
    return a;
}

}  // namespace

Eigen::MatrixXd mel_to_magnitude(const MelSpectrogram& m) {
    const MelConfig& cfg = m.config;
    const Eigen::MatrixXd fb = mel_filterbank(cfg);
    const Eigen::Index bins = fb.cols();
    const Eigen::VectorXd col_norm = fb.colwise().norm().transpose();
    const Eigen::VectorXd row_sum = fb.rowwise().sum();
    const Eigen::VectorXd col_sum = fb.colwise().sum().transpose();
    const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.n_fft;
    SinusoidTemplates templates(cfg);

    Eigen::MatrixXd magnitude = Eigen::MatrixXd::Zero(m.frames.rows(), bins);
    for (Eigen::Index f = 0; f < m.frames.rows(); ++f) {
        const Eigen::VectorXd target =
            (m.frames.row(f).transpose().array().exp() - kMelFloor).max(0.0).matrix();
        const double target_norm = target.norm();
        if (target_norm <= 0.0) continue;

        // Greedy pursuit over the sinusoid dictionary, refining each peak's
        // frequency by golden-section search on the projected fit.
        Eigen::VectorXd residual = target;
        std::vector<Eigen::VectorXd> peak_power;
        std::vector<Eigen::VectorXd> peak_mel;
        for (int p = 0; p < kMaxPeaksPerFrame; ++p) {
            const Eigen::VectorXd back = fb.transpose() * residual;
            Eigen::Index best = -1;
            double best_score = 0.0;
            for (Eigen::Index k = 0; k < bins; ++k) {
                if (col_norm[k] <= 0.0) continue;
                const double s = back[k] / col_norm[k];
                if (s > best_score) {
                    best_score = s;
                    best = k;
                }
            }
            if (best < 0) break;

            auto gain = [&](double hz) {
                const Eigen::VectorXd u = fb * templates.power(hz);
                const double uu = u.squaredNorm();
                const double ur = u.dot(residual);
                return (uu > 0.0 && ur > 0.0) ? ur * ur / uu : 0.0;
            };
            double lo = std::max(0.0, (static_cast<double>(best) - 1.0) * bin_hz);
            double hi = std::min(cfg.sample_rate_hz / 2.0, (static_cast<double>(best) + 1.0) * bin_hz);
            const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
            double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
            double g1 = gain(x1), g2 = gain(x2);
            for (int it = 0; it < kGoldenIterations; ++it) {
                if (g1 < g2) {
                    lo = x1;
                    x1 = x2;
                    g1 = g2;
                    x2 = lo + phi * (hi - lo);
                    g2 = gain(x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    g2 = g1;
                    x1 = hi - phi * (hi - lo);
                    g1 = gain(x1);
                }
            }
            const double hz = 0.5 * (lo + hi);
            Eigen::VectorXd power = templates.power(hz);
            Eigen::VectorXd u = fb * power;
            const double uu = u.squaredNorm();
            const double amp = uu > 0.0 ? u.dot(residual) / uu : 0.0;
            if (amp <= 0.0) break;
            residual -= amp * u;
            peak_power.push_back(std::move(power));
            peak_mel.push_back(std::move(u));
            if (residual.norm() < 1e-4 * target_norm) break;
        }

        Eigen::VectorXd spectrum = Eigen::VectorXd::Zero(bins);
        if (!peak_mel.empty()) {
            Eigen::MatrixXd u(fb.rows(), static_cast<Eigen::Index>(peak_mel.size()));
            for (size_t i = 0; i < peak_mel.size(); ++i) u.col(static_cast<Eigen::Index>(i)) = peak_mel[i];
            const Eigen::VectorXd amps = nnls_small(u, target);
            for (size_t i = 0; i < peak_power.size(); ++i) spectrum += amps[static_cast<Eigen::Index>(i)] * peak_power[i];
        }
        // Whatever the sinusoids leave unexplained is spread back with a
        // transpose normalized to reproduce flat spectra exactly.
        const Eigen::VectorXd leftover = (target - fb * spectrum).cwiseMax(0.0);
        for (Eigen::Index k = 0; k < bins; ++k) {
            if (col_sum[k] <= 0.0) continue;
            double acc = 0.0;
            for (Eigen::Index b = 0; b < fb.rows(); ++b) {
                if (row_sum[b] > 0.0) acc += fb(b, k) * leftover[b] / row_sum[b];
            }
            spectrum[k] += acc / col_sum[k];
        }
        magnitude.row(f) = spectrum.cwiseMax(0.0).cwiseSqrt().transpose();
    }
    return magnitude;
}

Waveform griffin_lim_magnitude(const Eigen::MatrixXd& magnitude, const MelConfig& cfg,
                               const GriffinLimOptions& opts, std::vector<double>* convergence) {
    if (opts.iterations < 1) throw DataError("griffin_lim: iterations must be >= 1");
    const int n = cfg.n_fft;
    const int hop = cfg.hop;
    const auto frames = static_cast<int>(magnitude.rows());
    const int bins = n / 2 + 1;
    if (magnitude.cols() != bins) throw DataError("griffin_lim: magnitude has wrong bin count");
    if (!magnitude.allFinite()) throw NumericError("griffin_lim: non-finite magnitude");

    Waveform out;
    out.sample_rate_hz = cfg.sample_rate_hz;
    if (frames == 0) return out;

    // Frames are laid on an unpadded internal signal so that the overlap-add
    // below is the exact least-squares inverse of the analysis operator.
    const long internal_len = n + static_cast<long>(hop) * (frames - 1);
    const auto window = hann_window(n);
    std::vector<double> wsum(static_cast<size_t>(internal_len), 0.0);
    for (int f = 0; f < frames; ++f) {
        for (int i = 0; i < n; ++i) wsum[static_cast<size_t>(f * hop + i)] += window[i] * window[i];
    }
    // Interior bins appear twice in the full (Hermitian) spectrum.
    auto bin_weight = [&](int k) { return (k == 0 || k == n / 2) ? 1.0 : 2.0; };
    double target_energy = 0.0;
    for (int f = 0; f < frames; ++f) {
        for (int k = 0; k < bins; ++k) target_energy += bin_weight(k) * magnitude(f, k) * magnitude(f, k);
    }

    detail::RealFft fft(n);
    Rng rng(opts.seed);
    Eigen::MatrixXcd spec(frames, bins);
    for (int f = 0; f < frames; ++f) {
        for (int k = 0; k < bins; ++k) {
            spec(f, k) = std::polar(magnitude(f, k), 2.0 * std::numbers::pi * rng.uniform());
        }
    }

    std::vector<double> signal(static_cast<size_t>(internal_len));
    auto overlap_add = [&]() {
        std::fill(signal.begin(), signal.end(), 0.0);
        for (int f = 0; f < frames; ++f) {
            for (int k = 0; k < bins; ++k) fft.spectrum()[k] = spec(f, k);
            fft.inverse();
            for (int i = 0; i < n; ++i) signal[static_cast<size_t>(f * hop + i)] += window[i] * fft.real()[i];
        }
        for (long i = 0; i < internal_len; ++i) {
            const double d = wsum[static_cast<size_t>(i)];
            signal[static_cast<size_t>(i)] = d > 1e-12 ? signal[static_cast<size_t>(i)] / (n * d) : 0.0;
        }
    };

    for (int it = 0; it < opts.iterations; ++it) {
        overlap_add();
        double err = 0.0;
        for (int f = 0; f < frames; ++f) {
            for (int i = 0; i < n; ++i) fft.real()[i] = signal[static_cast<size_t>(f * hop + i)] * window[i];
            fft.forward();
            for (int k = 0; k < bins; ++k) {
                const std::complex<double> x = fft.spectrum()[k];
                const double mag = std::abs(x);
                const double d = mag - magnitude(f, k);
                err += bin_weight(k) * d * d;
                spec(f, k) = mag > 0.0 ? x * (magnitude(f, k) / mag) : std::complex<double>(magnitude(f, k), 0.0);
            }
        }
        if (convergence != nullptr) {
            convergence->push_back(target_energy > 0.0 ? std::sqrt(err / target_energy) : 0.0);
        }
    }
    overlap_add();

    const long offset = n / 2;
    const std::size_t len = vocoder_output_length(frames, hop);
    out.samples.assign(signal.begin() + offset, signal.begin() + offset + static_cast<long>(len));
    double peak = 0.0;
    for (double x : out.samples) {
        if (!std::isfinite(x)) throw NumericError("griffin_lim: non-finite sample");
        peak = std::max(peak, std::abs(x));
    }
    if (peak > 1e-9) {
        const double g = opts.peak / peak;
        for (double& x : out.samples) x *= g;
    }
    return out;
}

Waveform griffin_lim(const MelSpectrogram& m, const GriffinLimOptions& opts) {
    if (!m.frames.allFinite()) throw NumericError("griffin_lim: non-finite mel");
    if (m.frames.cols() != m.config.n_mels) throw DataError("griffin_lim: mel width mismatch");
    return griffin_lim_magnitude(mel_to_magnitude(m), m.config, opts);
}

Waveform GriffinLimVocoder::synthesize(const MelSpectrogram& m, std::uint64_t seed) const {
    GriffinLimOptions opts;
    opts.iterations = iterations_;
    opts.seed = seed;
    return griffin_lim(m, opts);
}

}  // namespace kidvoice::dsp
