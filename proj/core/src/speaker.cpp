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

#include "kidvoice/speaker.hpp"

#include "kidvoice/common.hpp"

#include <algorithm>
#include <cmath>

namespace kidvoice::speaker {

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

const FeatureNorm& default_feature_norm() {
    // Means and spreads of the raw features over speaker references of the
    // default corpus (seed 0). Spreads are floored so level and voicing
    // changes the corpus never exercises stay bounded.
    static const FeatureNorm norm = [] {
        FeatureNorm n;
        n.mean = {6.748, 0.2681, 1.0, 949.6, 95.49, -9.447, -6.868, -0.8165,
                  -5.026, -9.586, -11.18, -12.11, -12.51, 0.3289, 0.1173, 0.0};
        n.scale = {0.2203, 0.1391, 0.1, 195.1, 25.18, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 0.6, 0.02438, 1.0};
        return n;
    }();
    return norm;
}

SpeakerEmbedding SpeakerEmbedding::from_vector(const FeatureVector& raw) {
    double sq = 0.0;
    for (double x : raw) {
        if (!std::isfinite(x)) throw NumericError("speaker embedding: non-finite component");
        sq += x * x;
    }
    if (!(sq > 0.0)) throw NumericError("speaker embedding: zero vector");
    const double inv = 1.0 / std::sqrt(sq);
    SpeakerEmbedding e;
    for (size_t i = 0; i < raw.size(); ++i) e.values_[i] = raw[i] * inv;
    return e;
}

SpeakerEmbedding SpeakerEmbedding::negated() const {
    SpeakerEmbedding e = *this;
    for (double& x : e.values_) x = -x;
    return e;
}

FeatureVector extract_features(const dsp::Waveform& w) {
    if (w.duration_s() < kMinDurationS) {
        throw DataError("speaker: audio too short (" + std::to_string(w.duration_s()) + " s < 0.2 s)");
    }
    FeatureVector f{};

    const std::vector<double> pitch = dsp::estimate_pitch(w);
    std::vector<double> log_pitch;
    for (double p : pitch) {
        if (p > 0.0) log_pitch.push_back(std::log(p));
    }
    f[kLogPitchMean] = mean_of(log_pitch);
    f[kLogPitchStd] = std_of(log_pitch);
    f[kVoicedFraction] = pitch.empty() ? 0.0 : static_cast<double>(log_pitch.size()) / pitch.size();

    const dsp::MelConfig cfg;
    const dsp::ComplexSpectrogram spec = dsp::stft(w, cfg.n_fft, cfg.hop);
    const Eigen::MatrixXd power = spec.cwiseAbs2();
    std::vector<double> centroids;
    for (Eigen::Index t = 0; t < spec.rows(); ++t) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index k = 0; k < spec.cols(); ++k) {
            const double mag = std::abs(spec(t, k));
            num += mag * static_cast<double>(k) * w.sample_rate_hz / cfg.n_fft;
            den += mag;
        }
        if (den > 1e-8) centroids.push_back(num / den);
    }
    f[kCentroidMean] = mean_of(centroids);
    f[kCentroidStd] = std_of(centroids);

    const dsp::MelSpectrogram mel = dsp::mel_from_power(power, cfg);
    const int per_band = cfg.n_mels / 8;
    for (int b = 0; b < 8; ++b) {
        const int first = b * per_band;
        const int count = b == 7 ? cfg.n_mels - first : per_band;
        f[static_cast<size_t>(kMelBand0 + b)] = mel.frames.middleCols(first, count).mean();
    }

    double sq = 0.0;
    long crossings = 0;
    for (size_t i = 0; i < w.samples.size(); ++i) {
        sq += w.samples[i] * w.samples[i];
        if (i > 0 && ((w.samples[i - 1] >= 0.0) != (w.samples[i] >= 0.0))) ++crossings;
    }
    f[kRms] = std::sqrt(sq / static_cast<double>(w.samples.size()));
    f[kZeroCrossingRate] = static_cast<double>(crossings) / static_cast<double>(w.samples.size() - 1);
    f[kBias] = 1.0;
    return f;
}

SpeakerEmbedding extract_embedding(const dsp::Waveform& w, const FeatureNorm& norm) {
    FeatureVector f = extract_features(w);
    for (size_t i = 0; i < f.size(); ++i) f[i] = (f[i] - norm.mean[i]) / norm.scale[i];
    return SpeakerEmbedding::from_vector(f);
}

double cosine_similarity(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
    double d = 0.0;
    for (int i = 0; i < kEmbeddingDim; ++i) d += a[i] * b[i];
    return std::clamp(d, -1.0, 1.0);
}

}  // namespace kidvoice::speaker
