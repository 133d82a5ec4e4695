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

// Objective and listening-test metrics: character error rate, the oracle
// recognizer for the synthetic tone corpus, MOS and AB aggregation, rating
// records and Table-1-style reports.

#pragma once

#include "kidvoice/corpus.hpp"
#include "kidvoice/dsp.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kidvoice::evalkit {

// ---- CER ------------------------------------------------------------------

std::size_t edit_distance(std::u32string_view a, std::u32string_view b);

/// 100 * Levenshtein / len(reference), over NFC unicode scalars. Throws
/// DataError for an empty reference.
double cer(const std::string& reference, const std::string& hypothesis);

/// Pooled CER: total edits over total reference characters.
struct CerTally {
    std::size_t edits = 0;
    std::size_t reference_chars = 0;

    void add(const std::string& reference, const std::string& hypothesis);
    double percent() const;
};

// ---- oracle recognizer ----------------------------------------------------

struct OracleAsrOptions {
    double frame_ms = 20.0;
    double hop_ms = 5.0;
    double tolerance_hz = 12.0;
    int min_run_frames = 2;
};

/// Frame-wise pitch mapped to the nearest table tone (after dividing by the
/// speaker's pitch scale). Runs of one character are split by duration so
/// repeated characters survive; unvoiced or rejected frames separate runs.
std::string oracle_asr(const dsp::Waveform& w, const corpus::AlphabetTable& table, double pitch_scale,
                       const OracleAsrOptions& opts = {});

// ---- ratings --------------------------------------------------------------

enum class RatingKind { ab_choice, mos_quality, mos_naturalness, intelligibility };

std::string_view to_string(RatingKind k);
RatingKind parse_rating_kind(std::string_view s);

struct RatingRecord {
    std::string rater_id;
    std::string utterance_id;
    std::string system_id;
    RatingKind kind = RatingKind::mos_quality;
    std::string value;  // "A" | "B" | "NP" or a decimal integer
    std::string timestamp;

    bool operator==(const RatingRecord&) const = default;
};

/// Throws DataError when the value is outside the scale for its kind:
/// A/B/NP, 1..5, or 0..100.
void validate_record(const RatingRecord& r);
int numeric_value(const RatingRecord& r);

std::string record_to_json_line(const RatingRecord& r);
RatingRecord record_from_json_line(const std::string& line);
/// Missing file reads as no records. Errors carry "path:line".
std::vector<RatingRecord> read_ratings(const std::string& path);

// ---- aggregation ----------------------------------------------------------

struct ConfidenceInterval {
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t n = 0;

    double half_width() const { return 0.5 * (upper - lower); }
};

/// Student-t 95% interval on the sample mean.
ConfidenceInterval aggregate_mos(std::span<const double> scores);
ConfidenceInterval aggregate_mos(std::span<const RatingRecord> records, RatingKind kind, const std::string& system_id);

struct AbResult {
    ConfidenceInterval a;
    ConfidenceInterval b;
    ConfidenceInterval np;
    std::size_t n = 0;
};

/// Shares in percent; intervals by seeded percentile bootstrap.
AbResult aggregate_ab(std::span<const RatingRecord> records, int bootstrap_n = 1000, std::uint64_t seed = 0);

/// Fixed two-decimal rendering used in every report ("4.00").
std::string format2(double v);

// ---- reports --------------------------------------------------------------

struct LanguageResult {
    Language language = Language::zh;
    std::size_t utterances = 0;
    std::size_t failures = 0;
    CerTally tally;
    std::optional<double> mcd_db;
    std::optional<ConfidenceInterval> human_intelligibility;
};

struct SystemReport {
    std::string system_id;
    std::vector<LanguageResult> languages;

    const LanguageResult* find(Language lang) const;
};

/// Plain-text table: one block per language, one column per system, an
/// objective CER row and, when ratings exist, a human intelligibility row.
std::string render_table(const std::vector<SystemReport>& systems);
std::string render_json(const std::vector<SystemReport>& systems, const std::string& split, std::uint64_t seed);

}  // namespace kidvoice::evalkit
