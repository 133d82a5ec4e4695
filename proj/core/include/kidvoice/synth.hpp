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

// Text + reference voice to waveform: text bytes -> speech tokens -> coarse
// mel -> flow-refined mel -> Griffin-Lim.

#pragma once

#include "kidvoice/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kidvoice::synth {

struct SynthOptions {
    double temperature = 0.8;
    int top_k = 16;
    int max_tokens = 512;
    int euler_steps = 0;  // 0: use the checkpoint's flow config
    int griffin_lim_iterations = 60;
};

struct SynthResult {
    dsp::Waveform wave;
    speechcodec::SpeechTokenSeq tokens;  // includes EOS when produced
    dsp::MelSpectrogram coarse;
    dsp::MelSpectrogram mel;
};

/// Holds the rebuilt models of one checkpoint; const methods are reentrant.
class Synthesizer {
public:
    explicit Synthesizer(train::Checkpoint ckpt, SynthOptions opts = {});

    /// Errors name the failing stage; an LM that emits EOS first raises
    /// "empty synthesis".
    SynthResult run(const std::string& text, Language lang, const speaker::SpeakerEmbedding& spk,
                    std::uint64_t seed) const;
    SynthResult run(const std::string& text, Language lang, const dsp::Waveform& ref, std::uint64_t seed) const;

    const train::Checkpoint& checkpoint() const { return ckpt_; }

private:
    train::Checkpoint ckpt_;
    SynthOptions opts_;
    tokenlm::TokenLM lm_;
    flowdec::FlowModel flow_;
};

dsp::Waveform synthesize(const train::Checkpoint& ckpt, const std::string& text, Language lang,
                         const dsp::Waveform& ref_audio, std::uint64_t seed, const SynthOptions& opts = {});

struct SynthRequest {
    std::string utterance_id;
    std::string text;
    Language language = Language::zh;
    std::string ref_audio_path;
    std::uint64_t seed = 0;
};

struct SynthOutcome {
    SynthRequest request;
    std::string audio_path;  // relative to the output directory; empty on error
    std::string error;
};

inline constexpr const char* kResultsName = "results.jsonl";

/// Writes {utterance_id}.wav per request plus results.jsonl; a failing
/// request is recorded and does not stop the batch.
std::vector<SynthOutcome> synthesize_batch(const train::Checkpoint& ckpt, const std::vector<SynthRequest>& requests,
                                           const std::string& output_dir, const SynthOptions& opts = {});

}  // namespace kidvoice::synth
