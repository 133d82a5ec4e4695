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

// Synthesize-then-recognize evaluation of trained checkpoints over one split
// of a corpus manifest.

#pragma once

#include "kidvoice/evalkit.hpp"
#include "kidvoice/synth.hpp"
#include "kidvoice/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kidvoice::evalkit {

struct UtteranceResult {
    std::string system_id;
    std::string utterance_id;
    Language language = Language::zh;
    std::string reference;
    std::string hypothesis;
    std::string error;  // synthesis failure, empty on success
    std::size_t edits = 0;
};

struct EvalOptions {
    corpus::Split split = corpus::Split::test;
    std::uint64_t seed = 0;
    synth::SynthOptions synth;
    bool mcd = true;
};

struct Evaluation {
    std::vector<SystemReport> systems;
    std::vector<UtteranceResult> utterances;
};

/// Checkpoints sharing a system_id form one system; each utterance is
/// synthesized by the first checkpoint of its system that covers the
/// language, conditioned on the speaker's reference audio. A failed
/// synthesis counts as an empty transcript. Languages no checkpoint covers
/// are left out of that system's report.
Evaluation evaluate_system(const std::vector<train::Checkpoint>& ckpts, const train::Dataset& data,
                           const EvalOptions& opts = {});

/// Adds human intelligibility intervals from intelligibility ratings whose
/// utterance ids are in `data`.
void attach_ratings(Evaluation& ev, const std::vector<RatingRecord>& ratings, const train::Dataset& data);

std::string utterances_to_jsonl(const std::vector<UtteranceResult>& rows);

/// Writes table.txt, report.json and utterances.jsonl under `dir`.
void write_report(const std::string& dir, const Evaluation& ev, const EvalOptions& opts);

}  // namespace kidvoice::evalkit
