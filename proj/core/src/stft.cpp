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

#include <cmath>
#include <numbers>

namespace kidvoice::dsp {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return w;
}

ComplexSpectrogram stft(const Waveform& w, int n_fft, int hop) {
    if (!is_power_of_two(n_fft)) throw DataError("stft: n_fft must be a power of two");
    if (hop <= 0 || hop > n_fft) throw DataError("stft: hop must satisfy 0 < hop <= n_fft");
    const auto len = static_cast<long>(w.samples.size());
    if (len < n_fft) throw DataError("stft: waveform shorter than one window");

    const long pad = n_fft / 2;
    std::vector<double> padded(static_cast<size_t>(len + 2 * pad));
    for (long i = 0; i < len + 2 * pad; ++i) {
        long src = i - pad;
        if (src < 0) src = -src;
        if (src >= len) src = 2 * (len - 1) - src;
        padded[static_cast<size_t>(i)] = w.samples[static_cast<size_t>(src)];
    }

    const int frames = 1 + static_cast<int>(len / hop);
    const auto window = hann_window(n_fft);
    detail::RealFft fft(n_fft);
    ComplexSpectrogram out(frames, fft.bins());
    for (int f = 0; f < frames; ++f) {
        const double* src = padded.data() + static_cast<long>(f) * hop;
        for (int i = 0; i < n_fft; ++i) fft.real()[i] = src[i] * window[i];
        fft.forward();
        for (int k = 0; k < fft.bins(); ++k) out(f, k) = fft.spectrum()[k];
    }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(const MelConfig& cfg) {
    if (cfg.n_mels < 2) throw DataError("mel_filterbank: n_mels must be >= 2");
    if (!(cfg.fmax > cfg.fmin)) throw DataError("mel_filterbank: fmax must exceed fmin");
    const int bins = cfg.n_fft / 2 + 1;
    const double lo = hz_to_mel(cfg.fmin);
    const double hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<size_t>(cfg.n_mels + 2));
    for (int i = 0; i < cfg.n_mels + 2; ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
    }
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, bins);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate_hz / cfg.n_fft;
            double v = 0.0;
            if (f > left && f < center) {
                v = (f - left) / (center - left);
            } else if (f >= center && f < right) {
                v = (right - f) / (right - center);
            }
            fb(m, k) = v;
        }
    }
    return fb;
}

MelSpectrogram mel_from_power(const Eigen::MatrixXd& power, const MelConfig& cfg) {
    const Eigen::MatrixXd fb = mel_filterbank(cfg);
    MelSpectrogram m;
    m.config = cfg;
    m.frames = (power * fb.transpose()).array().max(kMelFloor).log().matrix();
    return m;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
    if (w.sample_rate_hz != cfg.sample_rate_hz) {
        throw DataError("mel_spectrogram: sample rate " + std::to_string(w.sample_rate_hz) +
                        " does not match config " + std::to_string(cfg.sample_rate_hz));
    }
    const ComplexSpectrogram spec = stft(w, cfg.n_fft, cfg.hop);
    return mel_from_power(spec.cwiseAbs2(), cfg);
}

Eigen::VectorXd mel_cepstrum(const Eigen::VectorXd& log_mel) {
    const Eigen::Index n = log_mel.size();
    Eigen::VectorXd c(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += log_mel[i] * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
        }
        const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        c[k] = scale * acc;
    }
    return c;
}

double mel_cepstral_distortion(const MelSpectrogram& a, const MelSpectrogram& b) {
    if (a.frames.cols() != b.frames.cols()) throw DataError("mcd: n_mels differ");
    const Eigen::Index frames = std::min(a.frames.rows(), b.frames.rows());
    if (frames == 0) throw DataError("mcd: empty overlap");
    const double k = 10.0 * std::sqrt(2.0) / std::log(10.0);
    double total = 0.0;
    for (Eigen::Index f = 0; f < frames; ++f) {
        const Eigen::VectorXd ca = mel_cepstrum(a.frames.row(f).transpose());
        const Eigen::VectorXd cb = mel_cepstrum(b.frames.row(f).transpose());
        total += (ca.tail(ca.size() - 1) - cb.tail(cb.size() - 1)).norm();
    }
    return k * total / static_cast<double>(frames);
}

}  // namespace kidvoice::dsp
