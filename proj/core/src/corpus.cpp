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

#include "kidvoice/corpus.hpp"

#include "kidvoice/common.hpp"
#include "kidvoice/unicode.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace kidvoice {

std::string_view to_string(Language lang) {
    switch (lang) {
        case Language::zh: return "zh";
        case Language::ma: return "ma";
        case Language::ta: return "ta";
    }
    return "?";
}

Language parse_language(std::string_view code) {
    if (code == "zh") return Language::zh;
    if (code == "ma") return Language::ma;
    if (code == "ta") return Language::ta;
    throw DataError("unknown language code: '" + std::string(code) + "'");
}

}  // namespace kidvoice

namespace kidvoice::corpus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Speaker pitch tracking range; scaled tones outside it cannot be decoded.
constexpr double kDecodeMinHz = 80.0;
constexpr double kDecodeMaxHz = 2000.0;

std::string quote_char(char32_t c) { return "'" + unicode::to_utf8(c) + "'"; }

AlphabetTable make_table(Language lang, std::u32string_view chars, std::initializer_list<double> tones) {
    AlphabetTable t;
    t.language = lang;
    auto it = tones.begin();
    for (char32_t c : chars) t.entries.push_back({c, *it++});
    return t;
}

std::vector<SpeakerProfile> child_and_adult(const std::vector<Language>& langs) {
    std::vector<SpeakerProfile> out;
    for (Language l : langs) {
        const std::string code(to_string(l));
        out.push_back({code + "_child_01", AgeGroup::child, 1.5, l});
        out.push_back({code + "_adult_01", AgeGroup::adult, 1.0, l});
    }
    return out;
}

}  // namespace

std::string_view to_string(AgeGroup g) { return g == AgeGroup::child ? "child" : "adult"; }

AgeGroup parse_age_group(std::string_view s) {
    if (s == "child") return AgeGroup::child;
    if (s == "adult") return AgeGroup::adult;
    throw DataError("unknown age group: '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split: '" + std::string(s) + "'");
}

void AlphabetTable::validate() const {
    if (entries.empty()) throw DataError("alphabet for " + std::string(to_string(language)) + " is empty");
    std::set<char32_t> seen;
    for (const auto& e : entries) {
        if (!seen.insert(e.character).second) {
            throw DataError("alphabet " + std::string(to_string(language)) + ": duplicate character " +
                            quote_char(e.character));
        }
        if (!(e.tone_hz >= kMinToneHz && e.tone_hz <= kMaxToneHz)) {
            throw DataError("alphabet " + std::string(to_string(language)) + ": tone for " + quote_char(e.character) +
                            " outside [200, 1600] Hz");
        }
    }
    std::vector<AlphabetEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.tone_hz < b.tone_hz; });
    for (size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].tone_hz - sorted[i - 1].tone_hz < kMinToneSpacingHz) {
            throw DataError("alphabet " + std::string(to_string(language)) + ": tones of " +
                            quote_char(sorted[i - 1].character) + " and " + quote_char(sorted[i].character) +
                            " are closer than 25 Hz");
        }
    }
}

std::optional<double> AlphabetTable::tone_of(char32_t c) const {
    for (const auto& e : entries) {
        if (e.character == c) return e.tone_hz;
    }
    return std::nullopt;
}

std::vector<Language> CorpusConfig::languages() const {
    std::vector<Language> out;
    for (Language l : kAllLanguages) {
        if (alphabets.count(l) != 0) out.push_back(l);
    }
    return out;
}

void CorpusConfig::validate() const {
    if (utterances_per_language < 1) throw DataError("corpus config: utterances_per_language must be >= 1");
    if (min_length < 1 || min_length > max_length) {
        throw DataError("corpus config: utterance length range must satisfy 1 <= min <= max");
    }
    if (sample_rate_hz < 8000) throw DataError("corpus config: sample rate must be >= 8000 Hz");
    if (alphabets.empty()) throw DataError("corpus config: no alphabets");
    for (const auto& [lang, table] : alphabets) {
        if (table.language != lang) throw DataError("corpus config: alphabet language mismatch");
        table.validate();
    }
    double min_child = INFINITY, max_adult = -INFINITY;
    std::set<std::string> ids;
    for (const auto& s : speakers) {
        if (!ids.insert(s.speaker_id).second) throw DataError("corpus config: duplicate speaker id " + s.speaker_id);
        if (!(s.pitch_scale > 0.0)) throw DataError("corpus config: pitch_scale must be > 0 for " + s.speaker_id);
        if (s.age_group == AgeGroup::child) min_child = std::min(min_child, s.pitch_scale);
        if (s.age_group == AgeGroup::adult) max_adult = std::max(max_adult, s.pitch_scale);
        auto it = alphabets.find(s.language);
        if (it == alphabets.end()) continue;
        std::vector<AlphabetEntry> scaled = it->second.entries;
        for (auto& e : scaled) {
            e.tone_hz *= s.pitch_scale;
            if (e.tone_hz < kDecodeMinHz || e.tone_hz > kDecodeMaxHz) {
                throw DataError("corpus config: speaker " + s.speaker_id + " renders " + quote_char(e.character) +
                                " at " + std::to_string(e.tone_hz) + " Hz, outside the 80-2000 Hz pitch range");
            }
        }
        std::sort(scaled.begin(), scaled.end(), [](const auto& a, const auto& b) { return a.tone_hz < b.tone_hz; });
        for (size_t i = 1; i < scaled.size(); ++i) {
            if (scaled[i].tone_hz - scaled[i - 1].tone_hz < kMinToneSpacingHz) {
                throw DataError("corpus config: characters " + quote_char(scaled[i - 1].character) + " and " +
                                quote_char(scaled[i].character) + " collide for speaker " + s.speaker_id +
                                " after pitch scaling");
            }
        }
    }
    if (shared_texts) {
        const auto& first = alphabets.begin()->second.entries;
        for (const auto& [lang, table] : alphabets) {
            bool same = table.entries.size() == first.size();
            for (size_t i = 0; same && i < first.size(); ++i) same = table.entries[i].character == first[i].character;
            if (!same) throw DataError("corpus config: shared_texts needs the same characters in every alphabet");
        }
    }
    if (min_child <= max_adult) throw DataError("corpus config: child pitch_scale must exceed adult pitch_scale");
    for (Language l : languages()) {
        const bool has = std::any_of(speakers.begin(), speakers.end(), [&](const auto& s) { return s.language == l; });
        if (!has) throw DataError("corpus config: language " + std::string(to_string(l)) + " has no speaker");
    }
}

CorpusConfig default_corpus_config() {
    // Tones sit on even STFT bins (multiples of 62.5 Hz at n_fft 512), so the
    // 1.5x child versions land on bins too.
    CorpusConfig cfg;
    cfg.alphabets[Language::zh] = make_table(Language::zh, U"一二三四五", {562.5, 625.0, 687.5, 750.0, 812.5});
    cfg.alphabets[Language::ma] = make_table(Language::ma, U"aiueo", {625.0, 687.5, 750.0, 812.5, 875.0});
    cfg.alphabets[Language::ta] = make_table(Language::ta, U"அஇஉஎஒ", {687.5, 750.0, 812.5, 875.0, 937.5});
    cfg.speakers = child_and_adult({Language::zh, Language::ma, Language::ta});
    cfg.utterances_per_language = 50;
    cfg.min_length = 1;
    cfg.max_length = 4;
    cfg.seed = 0;
    return cfg;
}

CorpusConfig divergent_corpus_config() {
    CorpusConfig cfg = default_corpus_config();
    cfg.alphabets[Language::zh] = make_table(Language::zh, U"abcde", {562.5, 625.0, 687.5, 750.0, 812.5});
    cfg.alphabets[Language::ma] = make_table(Language::ma, U"abcde", {750.0, 812.5, 562.5, 625.0, 687.5});
    cfg.alphabets[Language::ta] = make_table(Language::ta, U"abcde", {687.5, 750.0, 812.5, 562.5, 625.0});
    cfg.shared_texts = true;
    return cfg;
}

CorpusConfig corpus_config_from_json(const std::string& json_text) {
    CorpusConfig cfg;
    try {
        const auto j = nlohmann::json::parse(json_text);
        cfg.utterances_per_language = j.value("utterances_per_language", cfg.utterances_per_language);
        if (j.contains("utterance_length")) {
            cfg.min_length = j.at("utterance_length").at(0).get<int>();
            cfg.max_length = j.at("utterance_length").at(1).get<int>();
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.sample_rate_hz = j.value("sample_rate_hz", cfg.sample_rate_hz);
        cfg.shared_texts = j.value("shared_texts", false);
        for (const auto& [code, entries] : j.at("alphabets").items()) {
            AlphabetTable t;
            t.language = parse_language(code);
            for (const auto& e : entries) {
                const std::u32string c = unicode::to_u32(e.at("char").get<std::string>());
                if (c.size() != 1) throw DataError("alphabet entry must be a single character");
                t.entries.push_back({c[0], e.at("tone_hz").get<double>()});
            }
            cfg.alphabets[t.language] = std::move(t);
        }
        for (const auto& s : j.at("speakers")) {
            cfg.speakers.push_back({s.at("speaker_id").get<std::string>(),
                                    parse_age_group(s.at("age_group").get<std::string>()),
                                    s.at("pitch_scale").get<double>(), parse_language(s.at("language").get<std::string>())});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corpus config: ") + e.what());
    }
    return cfg;
}

std::string corpus_config_to_json(const CorpusConfig& cfg) {
    ordered_json j;
    j["utterances_per_language"] = cfg.utterances_per_language;
    j["utterance_length"] = {cfg.min_length, cfg.max_length};
    j["seed"] = cfg.seed;
    j["sample_rate_hz"] = cfg.sample_rate_hz;
    // Omitted when off so existing corpus digests stay valid.
    if (cfg.shared_texts) j["shared_texts"] = true;
    ordered_json alphabets = ordered_json::object();
    for (Language l : cfg.languages()) {
        ordered_json entries = ordered_json::array();
        for (const auto& e : cfg.alphabets.at(l).entries) {
            entries.push_back({{"char", unicode::to_utf8(e.character)}, {"tone_hz", e.tone_hz}});
        }
        alphabets[std::string(to_string(l))] = entries;
    }
    j["alphabets"] = alphabets;
    ordered_json speakers = ordered_json::array();
    for (const auto& s : cfg.speakers) {
        speakers.push_back({{"speaker_id", s.speaker_id},
                            {"age_group", std::string(to_string(s.age_group))},
                            {"pitch_scale", s.pitch_scale},
                            {"language", std::string(to_string(s.language))}});
    }
    j["speakers"] = speakers;
    return j.dump(2) + "\n";
}

dsp::Waveform render_utterance(const std::u32string& text, const AlphabetTable& table, const SpeakerProfile& speaker,
                               int sample_rate_hz) {
    const auto seg = static_cast<int>(std::lround(sample_rate_hz * kCharDurationMs / 1000.0));
    const double fade = sample_rate_hz * kFadeMs / 1000.0;
    dsp::Waveform w;
    w.sample_rate_hz = sample_rate_hz;
    w.samples.reserve(text.size() * static_cast<size_t>(seg));
    for (char32_t c : text) {
        const auto tone = table.tone_of(c);
        if (!tone) throw DataError("character " + quote_char(c) + " is not in the alphabet");
        const double hz = *tone * speaker.pitch_scale;
        const double omega = 2.0 * std::numbers::pi * hz / sample_rate_hz;
        for (int n = 0; n < seg; ++n) {
            const double gain = std::min({1.0, n / fade, (seg - 1 - n) / fade});
            w.samples.push_back(kToneAmplitude * gain * std::sin(omega * n));
        }
    }
    return w;
}

namespace {
constexpr std::uint64_t kSharedStream = 0x5A;
}  // namespace

std::vector<CorpusItem> plan_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    std::vector<CorpusItem> items;
    for (Language lang : cfg.languages()) {
        const AlphabetTable& table = cfg.alphabets.at(lang);
        std::vector<SpeakerProfile> speakers;
        for (const auto& s : cfg.speakers) {
            if (s.language == lang) speakers.push_back(s);
        }
        const std::uint64_t stream = cfg.shared_texts ? kSharedStream : static_cast<std::uint64_t>(lang);
        Rng rng(derive_seed(cfg.seed, stream, 1));
        const size_t first = items.size();
        // Parallel recordings: each drawn text is read by every speaker of
        // the language in turn.
        std::u32string text;
        for (int u = 0; u < cfg.utterances_per_language; ++u) {
            if (static_cast<size_t>(u) % speakers.size() == 0) {
                const int len = cfg.min_length + static_cast<int>(rng.index(static_cast<size_t>(cfg.max_length - cfg.min_length + 1)));
                text.clear();
                for (int i = 0; i < len; ++i) text.push_back(table.entries[rng.index(table.entries.size())].character);
            }
            CorpusItem item;
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04d", std::string(to_string(lang)).c_str(), u);
            item.utterance_id = id;
            item.text = unicode::to_utf8(text);
            item.language = lang;
            item.speaker = speakers[static_cast<size_t>(u) % speakers.size()];
            item.audio_path = "audio/" + item.utterance_id + ".wav";
            items.push_back(std::move(item));
        }
        // 80/10/10 by seeded shuffle of this language's items.
        std::vector<size_t> order(static_cast<size_t>(cfg.utterances_per_language));
        for (size_t i = 0; i < order.size(); ++i) order[i] = first + i;
        Rng split_rng(derive_seed(cfg.seed, stream, 2));
        split_rng.shuffle(order);
        const size_t n = order.size();
        const size_t n_train = (n * 8) / 10;
        const size_t n_val = (n * 9) / 10 - n_train;
        for (size_t r = 0; r < n; ++r) {
            items[order[r]].split = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
        }
    }
    return items;
}

GeneratedCorpus generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    GeneratedCorpus out;
    out.items = plan_corpus(cfg);
    fs::create_directories(fs::path(out_dir) / "audio");
    std::string manifest;
    for (const auto& item : out.items) {
        const auto w = render_utterance(unicode::to_u32(item.text), cfg.alphabets.at(item.language), item.speaker,
                                        cfg.sample_rate_hz);
        dsp::write_wav((fs::path(out_dir) / item.audio_path).string(), w);
        manifest += item_to_json_line(item);
        manifest += '\n';
    }
    write_file_atomic((fs::path(out_dir) / kConfigName).string(), corpus_config_to_json(cfg));
    out.manifest_path = (fs::path(out_dir) / kManifestName).string();
    write_file_atomic(out.manifest_path, manifest);
    return out;
}

std::string item_to_json_line(const CorpusItem& item) {
    ordered_json j;
    j["utterance_id"] = item.utterance_id;
    j["text"] = item.text;
    j["language"] = std::string(to_string(item.language));
    j["speaker_id"] = item.speaker.speaker_id;
    j["age_group"] = std::string(to_string(item.speaker.age_group));
    j["pitch_scale"] = item.speaker.pitch_scale;
    j["audio_path"] = item.audio_path;
    j["split"] = std::string(to_string(item.split));
    return j.dump();
}

CorpusItem item_from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw DataError("malformed record");
    }
    if (!j.is_object()) throw DataError("malformed record");
    try {
        CorpusItem item;
        item.utterance_id = j.at("utterance_id").get<std::string>();
        item.text = j.at("text").get<std::string>();
        item.language = parse_language(j.at("language").get<std::string>());
        item.speaker.speaker_id = j.at("speaker_id").get<std::string>();
        item.speaker.age_group = parse_age_group(j.at("age_group").get<std::string>());
        item.speaker.pitch_scale = j.at("pitch_scale").get<double>();
        item.speaker.language = item.language;
        item.audio_path = j.at("audio_path").get<std::string>();
        item.split = parse_split(j.at("split").get<std::string>());
        return item;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed record: ") + e.what());
    }
}

std::string manifest_dir(const std::string& manifest_path) {
    const fs::path p(manifest_path);
    return p.has_parent_path() ? p.parent_path().string() : std::string(".");
}

std::vector<CorpusItem> load_manifest(const std::string& path) {
    std::ifstream probe(path);
    if (!probe) throw DataError("cannot open manifest: " + path);
    std::string line;
    bool any = false;
    while (std::getline(probe, line)) {
        if (line.find_first_not_of(" \t\r") != std::string::npos) {
            any = true;
            break;
        }
    }
    if (!any) return {};
    const fs::path cfg_path = fs::path(manifest_dir(path)) / kConfigName;
    if (!fs::exists(cfg_path)) throw DataError("manifest " + path + ": missing " + kConfigName + " beside it");
    return load_manifest(path, corpus_config_from_json(read_file(cfg_path.string())).alphabets);
}

std::vector<CorpusItem> load_manifest(const std::string& path, const std::map<Language, AlphabetTable>& alphabets) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    const fs::path base(manifest_dir(path));
    std::vector<CorpusItem> items;
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(lineno) + ": ";
        try {
            CorpusItem item = item_from_json_line(line);
            if (!ids.insert(item.utterance_id).second) throw DataError("duplicate utterance_id " + item.utterance_id);
            auto table = alphabets.find(item.language);
            if (table == alphabets.end()) {
                throw DataError("no alphabet for language " + std::string(to_string(item.language)));
            }
            for (char32_t c : unicode::to_u32(item.text)) {
                if (!table->second.tone_of(c)) {
                    throw DataError("text character " + quote_char(c) + " absent from the " +
                                    std::string(to_string(item.language)) + " alphabet");
                }
            }
            const fs::path audio = base / item.audio_path;
            if (!fs::exists(audio)) throw DataError("missing audio file " + audio.string());
            dsp::read_wav(audio.string());
            items.push_back(std::move(item));
        } catch (const DataError& e) {
            throw DataError(where + e.what());
        }
    }
    return items;
}

}  // namespace kidvoice::corpus
