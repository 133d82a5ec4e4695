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

// Training: token-budget batching, joint LM + flow optimization, validation
// based epoch selection and the checkpoint container.

#pragma once

#include "kidvoice/corpus.hpp"
#include "kidvoice/flowdec.hpp"
#include "kidvoice/speaker.hpp"
#include "kidvoice/speechcodec.hpp"
#include "kidvoice/tokenlm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kidvoice::train {

// ---- batching -------------------------------------------------------------

struct SequenceInfo {
    std::size_t index = 0;  // caller's item index
    int length = 0;         // tokens
};

/// Seeded shuffle (seed, round), stable sort by length, greedy packing under
/// the budget. Throws DataError for a sequence longer than the budget.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<SequenceInfo>& items, int token_budget,
                                                   std::uint64_t seed, std::uint64_t round);

// ---- configuration --------------------------------------------------------

struct TrainConfig {
    int epochs = 5;
    int token_budget = 256;
    /// Shuffled passes over the training split inside one epoch.
    int passes_per_epoch = 30;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    std::optional<Language> language_filter;
    int codebook_size = 128;
    tokenlm::LMConfig lm;
    flowdec::FlowConfig flow;
    std::string system_id = "kidvoice";

    void validate() const;
};

/// Per-dimension standardization of mel frames for the flow model.
struct MelScaler {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static MelScaler fit(const Eigen::MatrixXd& frames, double min_scale);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& frames) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& frames) const;
};

// ---- checkpoint -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct EpochRecord {
    int epoch = 0;
    double train_lm_loss = 0.0;
    double train_flow_loss = 0.0;
    double val_lm_loss = 0.0;
    double val_flow_loss = 0.0;
    double val_loss = 0.0;
    double max_clipped_norm = 0.0;  // largest LM/flow norm after clipping
    long steps = 0;
};

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string system_id = "kidvoice";
    std::optional<Language> language;  // nullopt: trained on all languages
    tokenlm::LMConfig lm_config;
    Eigen::VectorXd lm_params;
    flowdec::FlowConfig flow_config;
    Eigen::VectorXd flow_params;
    speechcodec::Codebook codebook;
    MelScaler scaler;    // coarse condition frames
    MelScaler residual;  // flow target: fine minus coarse mel
    std::string corpus_digest;
    int epoch = 0;  // 1-based epoch that was selected
    double val_loss = 0.0;
    std::vector<EpochRecord> history;
    std::uint64_t seed = 0;

    tokenlm::TokenLM make_lm() const;
    flowdec::FlowModel make_flow() const;
    bool covers(Language l) const { return !language || *language == l; }
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// sha256 of the canonical corpus configuration text.
std::string corpus_digest(const corpus::CorpusConfig& cfg);

// ---- data -----------------------------------------------------------------

struct Utterance {
    corpus::CorpusItem item;
    dsp::Waveform wave;
    dsp::MelSpectrogram mel;
    /// Embedding of this speaker's reference audio (see speaker_reference).
    speaker::SpeakerEmbedding spk;
    textfront::TextTokenSeq text;
};

inline constexpr double kReferenceMinS = 0.3;

struct Dataset {
    corpus::CorpusConfig corpus;
    std::string digest;
    std::vector<Utterance> train;
    std::vector<Utterance> val;
    std::vector<Utterance> test;

    const std::vector<Utterance>& split(corpus::Split s) const;
};

/// Loads and validates a manifest, reads audio and extracts mels and
/// speaker embeddings; keeps only `language` when set.
Dataset load_dataset(const std::string& manifest_path, std::optional<Language> language, std::uint64_t seed = 0);

/// Reference audio for one utterance: train-split recordings of the same
/// speaker, in seeded order, concatenated until at least kReferenceMinS
/// long. Falls back to the speaker's items in any split.
dsp::Waveform speaker_reference(const Dataset& data, const corpus::CorpusItem& item, std::uint64_t seed);

/// Coarse flow condition rows: scaled codebook frames followed by the
/// speaker embedding.
Eigen::MatrixXd flow_condition(const Eigen::MatrixXd& coarse_mel, const MelScaler& scaler,
                               const speaker::SpeakerEmbedding& spk);

inline constexpr double kConditionMinScale = 0.05;
inline constexpr double kResidualMinScale = 1e-3;

// ---- pipeline -------------------------------------------------------------

using ProgressFn = std::function<void(const EpochRecord&)>;

/// Trains codebook, LM and flow model; returns the epoch with the lowest
/// validation loss (ties to the earliest).
Checkpoint train_pipeline(const Dataset& data, const TrainConfig& cfg, const ProgressFn& progress = {});
Checkpoint train_pipeline(const std::string& manifest_path, const TrainConfig& cfg,
                          const ProgressFn& progress = {});

}  // namespace kidvoice::train
