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

#include "kidvoice/evalkit.hpp"

#include "kidvoice/common.hpp"
#include "kidvoice/unicode.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace kidvoice::evalkit {

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double cer(const std::string& reference, const std::string& hypothesis) {
    CerTally t;
    t.add(reference, hypothesis);
    return t.percent();
}

void CerTally::add(const std::string& reference, const std::string& hypothesis) {
    const std::u32string ref = unicode::to_u32(unicode::nfc(reference));
    const std::u32string hyp = unicode::to_u32(unicode::nfc(hypothesis));
    if (ref.empty()) throw DataError("cer: empty reference");
    edits += edit_distance(ref, hyp);
    reference_chars += ref.size();
}

double CerTally::percent() const {
    if (reference_chars == 0) throw DataError("cer: empty reference");
    return 100.0 * static_cast<double>(edits) / static_cast<double>(reference_chars);
}

std::string oracle_asr(const dsp::Waveform& w, const corpus::AlphabetTable& table, double pitch_scale,
                       const OracleAsrOptions& opts) {
    if (w.samples.empty() || table.entries.empty() || !(pitch_scale > 0.0)) return {};
    dsp::PitchOptions po;
    po.frame_ms = opts.frame_ms;
    po.hop_ms = opts.hop_ms;
    const std::vector<double> pitch = dsp::estimate_pitch(w, po);

    // Per frame: index into the table or -1.
    std::vector<int> label(pitch.size(), -1);
    for (std::size_t f = 0; f < pitch.size(); ++f) {
        if (!(pitch[f] > 0.0)) continue;
        const double hz = pitch[f] / pitch_scale;
        int best = -1;
        double best_d = opts.tolerance_hz;
        for (std::size_t e = 0; e < table.entries.size(); ++e) {
            const double d = std::abs(hz - table.entries[e].tone_hz);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(e);
            }
        }
        label[f] = best;
    }

    const double hop_s = std::round(opts.hop_ms * w.sample_rate_hz / 1000.0) / w.sample_rate_hz;
    const double frame_s = std::round(opts.frame_ms * w.sample_rate_hz / 1000.0) / w.sample_rate_hz;
    const double char_s = corpus::kCharDurationMs / 1000.0;
    std::u32string out;
    std::size_t f = 0;
    while (f < label.size()) {
        const int l = label[f];
        std::size_t r = 1;
        while (f + r < label.size() && label[f + r] == l) ++r;
        if (l >= 0 && static_cast<int>(r) >= opts.min_run_frames) {
            const double span = static_cast<double>(r - 1) * hop_s + frame_s;
            const long count = std::max(1L, std::lround(span / char_s));
            out.append(static_cast<std::size_t>(count), table.entries[static_cast<std::size_t>(l)].character);
        }
        f += r;
    }
    return unicode::to_utf8(out);
}

std::string_view to_string(RatingKind k) {
    switch (k) {
        case RatingKind::ab_choice: return "ab_choice";
        case RatingKind::mos_quality: return "mos_quality";
        case RatingKind::mos_naturalness: return "mos_naturalness";
        case RatingKind::intelligibility: return "intelligibility";
    }
    return "?";
}

RatingKind parse_rating_kind(std::string_view s) {
    for (RatingKind k : {RatingKind::ab_choice, RatingKind::mos_quality, RatingKind::mos_naturalness,
                         RatingKind::intelligibility}) {
        if (s == to_string(k)) return k;
    }
    throw DataError("unknown rating kind: '" + std::string(s) + "'");
}

namespace {

bool parse_int(const std::string& s, int& out) {
    if (s.empty() || s.size() > 4) return false;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
    }
    out = std::stoi(s);
    return true;
}

}  // namespace

void validate_record(const RatingRecord& r) {
    if (r.rater_id.empty()) throw DataError("rating: empty rater_id");
    if (r.utterance_id.empty()) throw DataError("rating: empty utterance_id");
    if (r.kind == RatingKind::ab_choice) {
        if (r.value != "A" && r.value != "B" && r.value != "NP") {
            throw DataError("rating: ab_choice value must be A, B or NP, got '" + r.value + "'");
        }
        return;
    }
    int v = 0;
    if (!parse_int(r.value, v)) throw DataError("rating: value must be an integer, got '" + r.value + "'");
    const int hi = r.kind == RatingKind::intelligibility ? 100 : 5;
    const int lo = r.kind == RatingKind::intelligibility ? 0 : 1;
    if (v < lo || v > hi) {
        throw DataError("rating: " + std::string(to_string(r.kind)) + " value " + r.value + " out of range " +
                        std::to_string(lo) + ".." + std::to_string(hi));
    }
}

int numeric_value(const RatingRecord& r) {
    int v = 0;
    if (r.kind == RatingKind::ab_choice || !parse_int(r.value, v)) {
        throw DataError("rating: no numeric value for " + std::string(to_string(r.kind)));
    }
    return v;
}

std::string record_to_json_line(const RatingRecord& r) {
    nlohmann::ordered_json j;
    j["rater_id"] = r.rater_id;
    j["utterance_id"] = r.utterance_id;
    j["system_id"] = r.system_id;
    j["kind"] = std::string(to_string(r.kind));
    if (r.kind == RatingKind::ab_choice) {
        j["value"] = r.value;
    } else {
        j["value"] = numeric_value(r);
    }
    j["timestamp"] = r.timestamp;
    return j.dump();
}

RatingRecord record_from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed rating record: ") + e.what());
    }
    RatingRecord r;
    try {
        r.rater_id = j.at("rater_id").get<std::string>();
        r.utterance_id = j.at("utterance_id").get<std::string>();
        r.system_id = j.at("system_id").get<std::string>();
        r.kind = parse_rating_kind(j.at("kind").get<std::string>());
        const auto& v = j.at("value");
        if (v.is_string()) {
            r.value = v.get<std::string>();
        } else if (v.is_number_integer()) {
            r.value = std::to_string(v.get<long>());
        } else {
            throw DataError("rating value must be a string or an integer");
        }
        r.timestamp = j.value("timestamp", "");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed rating record: ") + e.what());
    }
    validate_record(r);
    return r;
}

std::vector<RatingRecord> read_ratings(const std::string& path) {
    std::vector<RatingRecord> out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json_line(line));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

ConfidenceInterval aggregate_mos(std::span<const double> scores) {
    if (scores.empty()) throw DataError("aggregate_mos: no scores");
    const double n = static_cast<double>(scores.size());
    double sum = 0.0;
    for (double s : scores) sum += s;
    const double mean = sum / n;
    ConfidenceInterval ci{mean, mean, mean, scores.size()};
    if (scores.size() < 2) return ci;
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    const double half = t * sd / std::sqrt(n);
    ci.lower = mean - half;
    ci.upper = mean + half;
    return ci;
}

ConfidenceInterval aggregate_mos(std::span<const RatingRecord> records, RatingKind kind,
                                 const std::string& system_id) {
    std::vector<double> v;
    for (const auto& r : records) {
        if (r.kind == kind && r.system_id == system_id) v.push_back(numeric_value(r));
    }
    return aggregate_mos(v);
}

namespace {

// Linear-interpolated percentile of sorted data, q in [0,1].
double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ConfidenceInterval bootstrap_ci(double point, std::vector<double> draws, std::size_t n) {
    std::sort(draws.begin(), draws.end());
    ConfidenceInterval ci{point, point, point, n};
    if (!draws.empty()) {
        ci.lower = std::min(point, percentile(draws, 0.025));
        ci.upper = std::max(point, percentile(draws, 0.975));
    }
    return ci;
}

}  // namespace

AbResult aggregate_ab(std::span<const RatingRecord> records, int bootstrap_n, std::uint64_t seed) {
    std::vector<int> cat;
    cat.reserve(records.size());
    for (const auto& r : records) {
        if (r.kind != RatingKind::ab_choice) throw DataError("aggregate_ab: record is not ab_choice");
        cat.push_back(r.value == "A" ? 0 : r.value == "B" ? 1 : r.value == "NP" ? 2 : -1);
        if (cat.back() < 0) throw DataError("aggregate_ab: bad choice '" + r.value + "'");
    }
    if (cat.empty()) throw DataError("aggregate_ab: no records");
    const std::size_t n = cat.size();
    std::size_t counts[3] = {0, 0, 0};
    for (int c : cat) ++counts[c];
    const double a = 100.0 * static_cast<double>(counts[0]) / static_cast<double>(n);
    const double b = 100.0 * static_cast<double>(counts[1]) / static_cast<double>(n);
    const double np = 100.0 - a - b;

    std::vector<double> da, db, dn;
    Rng rng(seed);
    for (int it = 0; it < bootstrap_n; ++it) {
        std::size_t c[3] = {0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) ++c[cat[rng.index(n)]];
        const double sa = 100.0 * static_cast<double>(c[0]) / static_cast<double>(n);
        const double sb = 100.0 * static_cast<double>(c[1]) / static_cast<double>(n);
        da.push_back(sa);
        db.push_back(sb);
        dn.push_back(100.0 - sa - sb);
    }
    return AbResult{bootstrap_ci(a, std::move(da), n), bootstrap_ci(b, std::move(db), n),
                    bootstrap_ci(np, std::move(dn), n), n};
}

std::string format2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

const LanguageResult* SystemReport::find(Language lang) const {
    for (const auto& l : languages) {
        if (l.language == lang) return &l;
    }
    return nullptr;
}

namespace {

std::string language_title(Language l) {
    switch (l) {
        case Language::zh: return "Mandarin (zh)";
        case Language::ma: return "Malay (ma)";
        case Language::ta: return "Tamil (ta)";
    }
    return "?";
}

std::string pad(const std::string& s, std::size_t w, bool right) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string render_table(const std::vector<SystemReport>& systems) {
    std::vector<Language> langs;
    for (Language l : kAllLanguages) {
        for (const auto& s : systems) {
            if (s.find(l) != nullptr) {
                langs.push_back(l);
                break;
            }
        }
    }
    const std::size_t label_w = 34;
    std::size_t col_w = 10;
    for (const auto& s : systems) col_w = std::max(col_w, s.system_id.size() + 2);
    const std::string rule(label_w + col_w * systems.size(), '-');

    std::string out;
    out += "Speech intelligence on the synthetic corpus (CER over NFC unicode scalars)\n";
    for (Language l : langs) {
        out += rule + "\n" + language_title(l) + "\n" + rule + "\n";
        out += pad("Speech Intelligence", label_w, false);
        for (const auto& s : systems) out += pad(s.system_id, col_w, true);
        out += "\n" + rule + "\n";

        out += pad("Objective Evaluation: CER (%)", label_w, false);
        for (const auto& s : systems) {
            const LanguageResult* r = s.find(l);
            out += pad(r != nullptr && r->tally.reference_chars > 0 ? format2(r->tally.percent()) : "-", col_w, true);
        }
        out += "\n";

        bool any_human = false;
        for (const auto& s : systems) {
            const LanguageResult* r = s.find(l);
            any_human = any_human || (r != nullptr && r->human_intelligibility.has_value());
        }
        if (any_human) {
            out += pad("Subjective Evaluation: Human", label_w, false);
            for (const auto& s : systems) {
                const LanguageResult* r = s.find(l);
                out += pad(r != nullptr && r->human_intelligibility ? format2(r->human_intelligibility->mean) : "-",
                           col_w, true);
            }
            out += "\n";
        }
    }
    out += rule + "\n";
    return out;
}

std::string render_json(const std::vector<SystemReport>& systems, const std::string& split, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["tool_version"] = kVersion;
    j["split"] = split;
    j["seed"] = seed;
    j["cer_unit"] = "nfc_unicode_scalar";
    j["systems"] = nlohmann::ordered_json::array();
    for (const auto& s : systems) {
        nlohmann::ordered_json js;
        js["system_id"] = s.system_id;
        js["languages"] = nlohmann::ordered_json::array();
        for (const auto& l : s.languages) {
            nlohmann::ordered_json jl;
            jl["language"] = std::string(to_string(l.language));
            jl["utterances"] = l.utterances;
            jl["failures"] = l.failures;
            jl["edits"] = l.tally.edits;
            jl["reference_chars"] = l.tally.reference_chars;
            jl["cer_percent"] = l.tally.reference_chars > 0 ? format2(l.tally.percent()) : "";
            if (l.mcd_db) jl["mcd_db"] = format2(*l.mcd_db);
            if (l.human_intelligibility) {
                const auto& h = *l.human_intelligibility;
                jl["human_intelligibility"] = {{"mean", format2(h.mean)},
                                               {"lower", format2(h.lower)},
                                               {"upper", format2(h.upper)},
                                               {"n", h.n}};
            }
            js["languages"].push_back(jl);
        }
        j["systems"].push_back(js);
    }
    return j.dump(2) + "\n";
}

}  // namespace kidvoice::evalkit
