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

// Closed-form voice embedding: pitch, spectral-shape and energy statistics,
// z-scored against frozen constants and L2-normalized.

#pragma once

#include "kidvoice/dsp.hpp"

#include <array>

namespace kidvoice::speaker {

inline constexpr int kEmbeddingDim = 16;
inline constexpr double kMinDurationS = 0.2;

using FeatureVector = std::array<double, kEmbeddingDim>;

/// Component layout of FeatureVector and SpeakerEmbedding.
enum Feature : int {
    kLogPitchMean = 0,
    kLogPitchStd = 1,
    kVoicedFraction = 2,
    kCentroidMean = 3,
    kCentroidStd = 4,
    kMelBand0 = 5,  // 8 band means: 5..12
    kRms = 13,
    kZeroCrossingRate = 14,
    kBias = 15,
};

struct FeatureNorm {
    FeatureVector mean{};
    FeatureVector scale{};
};

/// Constants measured once on the default synthetic corpus and frozen.
const FeatureNorm& default_feature_norm();

class SpeakerEmbedding {
public:
    /// Normalizes `raw`; throws NumericError on a zero or non-finite vector.
    static SpeakerEmbedding from_vector(const FeatureVector& raw);

    const FeatureVector& values() const { return values_; }
    double operator[](int i) const { return values_[static_cast<size_t>(i)]; }
    SpeakerEmbedding negated() const;

    bool operator==(const SpeakerEmbedding&) const = default;

private:
    FeatureVector values_{};
};

/// Raw (un-normalized) features: mean/std log-pitch of voiced frames,
/// voiced fraction, spectral centroid mean/std, 8 mel-band mean log
/// energies, RMS, zero-crossing rate, bias 1.
FeatureVector extract_features(const dsp::Waveform& w);

/// Throws DataError for audio shorter than 0.2 s.
SpeakerEmbedding extract_embedding(const dsp::Waveform& w, const FeatureNorm& norm = default_feature_norm());

double cosine_similarity(const SpeakerEmbedding& a, const SpeakerEmbedding& b);

}  // namespace kidvoice::speaker
