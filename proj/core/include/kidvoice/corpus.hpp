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

// Deterministic synthetic multilingual corpus. Every character is rendered
// as a short pure tone whose frequency comes from a per-language table and
// is scaled by the speaker's pitch ratio, so an exact inverse decoder exists.

#pragma once

#include "kidvoice/dsp.hpp"
#include "kidvoice/language.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kidvoice::corpus {

inline constexpr double kCharDurationMs = 50.0;
inline constexpr double kFadeMs = 5.0;
inline constexpr double kToneAmplitude = 0.5;
inline constexpr double kMinToneHz = 200.0;
inline constexpr double kMaxToneHz = 1600.0;
inline constexpr double kMinToneSpacingHz = 25.0;

struct AlphabetEntry {
    char32_t character = 0;
    double tone_hz = 0.0;

    bool operator==(const AlphabetEntry&) const = default;
};

struct AlphabetTable {
    Language language = Language::zh;
    std::vector<AlphabetEntry> entries;

    /// Throws DataError on duplicate characters, out-of-range tones, or
    /// adjacent tones closer than kMinToneSpacingHz.
    void validate() const;
    std::optional<double> tone_of(char32_t c) const;
    bool operator==(const AlphabetTable&) const = default;
};

enum class AgeGroup { child, adult };
std::string_view to_string(AgeGroup g);
AgeGroup parse_age_group(std::string_view s);

struct SpeakerProfile {
    std::string speaker_id;
    AgeGroup age_group = AgeGroup::adult;
    double pitch_scale = 1.0;
    Language language = Language::zh;

    bool operator==(const SpeakerProfile&) const = default;
};

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct CorpusItem {
    std::string utterance_id;
    std::string text;  // UTF-8
    Language language = Language::zh;
    SpeakerProfile speaker;
    std::string audio_path;  // relative to the manifest directory
    Split split = Split::train;

    bool operator==(const CorpusItem&) const = default;
};

struct CorpusConfig {
    std::map<Language, AlphabetTable> alphabets;
    std::vector<SpeakerProfile> speakers;
    int utterances_per_language = 50;
    int min_length = 1;
    int max_length = 4;
    std::uint64_t seed = 0;
    int sample_rate_hz = dsp::kSampleRate;
    /// Every language draws the same text sequence and split assignment.
    /// Needs identical character lists in every alphabet.
    bool shared_texts = false;

    /// Languages that have an alphabet, in zh, ma, ta order.
    std::vector<Language> languages() const;

    /// Throws DataError naming the problem: counts, ranges, missing speakers,
    /// or two characters whose pitch-scaled tones collide for one speaker.
    void validate() const;
};

/// The built-in desk-scale corpus: five characters per language, one child
/// (pitch scale 1.5) and one adult speaker per language.
CorpusConfig default_corpus_config();

/// All three languages share the Latin characters a..e but map them to
/// different tones, so only the language identifier disambiguates the audio.
/// Texts are shared across languages.
CorpusConfig divergent_corpus_config();

CorpusConfig corpus_config_from_json(const std::string& json_text);
std::string corpus_config_to_json(const CorpusConfig& cfg);

/// Renders text character by character: 50 ms sine at tone * pitch_scale,
/// amplitude 0.5, 5 ms linear fades.
dsp::Waveform render_utterance(const std::u32string& text, const AlphabetTable& table,
                               const SpeakerProfile& speaker, int sample_rate_hz = dsp::kSampleRate);

struct GeneratedCorpus {
    std::vector<CorpusItem> items;
    std::string manifest_path;
};

/// Pure part of generation: the manifest items without touching disk.
std::vector<CorpusItem> plan_corpus(const CorpusConfig& cfg);

/// Writes audio/<utterance_id>.wav, manifest.jsonl and corpus_config.json
/// under `out_dir`.
GeneratedCorpus generate_corpus(const CorpusConfig& cfg, const std::string& out_dir);

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kConfigName = "corpus_config.json";

std::string item_to_json_line(const CorpusItem& item);
CorpusItem item_from_json_line(const std::string& line);

/// Loads and validates a manifest. Alphabets come from corpus_config.json
/// beside the manifest (only required when the manifest is non-empty).
std::vector<CorpusItem> load_manifest(const std::string& path);
std::vector<CorpusItem> load_manifest(const std::string& path, const std::map<Language, AlphabetTable>& alphabets);

/// Directory that relative audio paths of `manifest_path` resolve against.
std::string manifest_dir(const std::string& manifest_path);

}  // namespace kidvoice::corpus
