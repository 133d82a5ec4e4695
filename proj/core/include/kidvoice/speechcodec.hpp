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

// k-means speech tokenizer over log-mel frames.

#pragma once

#include "kidvoice/dsp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kidvoice::speechcodec {

inline constexpr const char* kCodebookVersion = "kmeans-v1";

struct Codebook {
    Eigen::MatrixXd centroids;  // K x n_mels
    std::string version = kCodebookVersion;

    int size() const { return static_cast<int>(centroids.rows()); }
    int dim() const { return static_cast<int>(centroids.cols()); }
    /// Id of the end-of-sequence token (== K).
    int eos() const { return size(); }
};

/// Token ids in [0, K) with an optional single trailing EOS (== K).
struct SpeechTokenSeq {
    std::vector<int> tokens;

    bool operator==(const SpeechTokenSeq&) const = default;
};

struct KMeansOptions {
    int k = 128;
    int iterations = 50;
    std::uint64_t seed = 0;
    double tolerance = 1e-6;
};

/// k-means++ seeding, then Lloyd iterations until `iterations` or the
/// relative inertia change falls below `tolerance`. Empty clusters are
/// reseeded to the frame farthest from its centroid.
Codebook train_codebook(std::span<const dsp::MelSpectrogram> mels, const KMeansOptions& opts);

/// Same, over raw frames (rows).
Codebook train_codebook(const Eigen::MatrixXd& frames, const KMeansOptions& opts);

/// Nearest centroid by Euclidean distance, ties to the lowest id.
int nearest_centroid(const Codebook& cb, const Eigen::Ref<const Eigen::RowVectorXd>& frame);

/// One token per frame plus a trailing EOS.
SpeechTokenSeq encode_speech(const dsp::MelSpectrogram& m, const Codebook& cb);

/// Frame i = centroid[t_i]; a trailing EOS is dropped.
dsp::MelSpectrogram decode_speech(const SpeechTokenSeq& t, const Codebook& cb, const dsp::MelConfig& cfg = {});

/// Mean squared quantization error per frame (sum over dims).
double quantization_error(const Eigen::MatrixXd& frames, const Codebook& cb);

}  // namespace kidvoice::speechcodec
