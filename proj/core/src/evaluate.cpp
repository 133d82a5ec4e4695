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

#include "kidvoice/evaluate.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>

namespace kidvoice::evalkit {

Evaluation evaluate_system(const std::vector<train::Checkpoint>& ckpts, const train::Dataset& data,
                           const EvalOptions& opts) {
    if (ckpts.empty()) throw Error(Error::Kind::usage, "eval: no checkpoints");
    // Systems keep first-seen order; so do their checkpoints.
    std::vector<std::string> order;
    std::map<std::string, std::vector<const train::Checkpoint*>> by_system;
    for (const auto& c : ckpts) {
        auto& v = by_system[c.system_id];
        if (v.empty()) order.push_back(c.system_id);
        v.push_back(&c);
    }
    const auto& items = data.split(opts.split);
    Evaluation ev;
    for (const auto& sys : order) {
        const auto& group = by_system.at(sys);
        std::vector<synth::Synthesizer> synths;
        synths.reserve(group.size());
        for (const auto* c : group) synths.emplace_back(*c, opts.synth);

        SystemReport report;
        report.system_id = sys;
        for (Language lang : data.corpus.languages()) {
            const synth::Synthesizer* s = nullptr;
            for (const auto& cand : synths) {
                if (cand.checkpoint().covers(lang)) {
                    s = &cand;
                    break;
                }
            }
            if (s == nullptr) continue;
            LanguageResult lr;
            lr.language = lang;
            double mcd_sum = 0.0;
            std::size_t mcd_n = 0;
            const auto& table = data.corpus.alphabets.at(lang);
            for (const auto& u : items) {
                if (u.item.language != lang) continue;
                UtteranceResult row;
                row.system_id = sys;
                row.utterance_id = u.item.utterance_id;
                row.language = lang;
                row.reference = u.item.text;
                try {
                    const auto seed = derive_seed(opts.seed, fnv1a64(u.item.utterance_id));
                    const auto r = s->run(u.item.text, lang, u.spk, seed);
                    row.hypothesis = oracle_asr(r.wave, table, u.item.speaker.pitch_scale);
                    if (opts.mcd) {
                        mcd_sum += dsp::mel_cepstral_distortion(r.mel, u.mel);
                        ++mcd_n;
                    }
                } catch (const std::exception& e) {
                    row.error = e.what();
                    ++lr.failures;
                }
                const auto before = lr.tally.edits;
                lr.tally.add(row.reference, row.hypothesis);
                row.edits = lr.tally.edits - before;
                ++lr.utterances;
                ev.utterances.push_back(std::move(row));
            }
            if (mcd_n > 0) lr.mcd_db = mcd_sum / static_cast<double>(mcd_n);
            report.languages.push_back(std::move(lr));
        }
        ev.systems.push_back(std::move(report));
    }
    return ev;
}

void attach_ratings(Evaluation& ev, const std::vector<RatingRecord>& ratings, const train::Dataset& data) {
    std::map<std::string, Language> lang_of;
    for (const auto* part : {&data.train, &data.val, &data.test}) {
        for (const auto& u : *part) lang_of[u.item.utterance_id] = u.item.language;
    }
    for (auto& sys : ev.systems) {
        for (auto& lr : sys.languages) {
            std::vector<double> scores;
            for (const auto& r : ratings) {
                if (r.kind != RatingKind::intelligibility || r.system_id != sys.system_id) continue;
                auto it = lang_of.find(r.utterance_id);
                if (it == lang_of.end() || it->second != lr.language) continue;
                scores.push_back(numeric_value(r));
            }
            if (!scores.empty()) lr.human_intelligibility = aggregate_mos(scores);
        }
    }
}

std::string utterances_to_jsonl(const std::vector<UtteranceResult>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["system_id"] = r.system_id;
        j["utterance_id"] = r.utterance_id;
        j["language"] = std::string(to_string(r.language));
        j["reference"] = r.reference;
        j["hypothesis"] = r.hypothesis;
        j["edits"] = r.edits;
        if (!r.error.empty()) j["error"] = r.error;
        out += j.dump() + "\n";
    }
    return out;
}

void write_report(const std::string& dir, const Evaluation& ev, const EvalOptions& opts) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path d(dir);
    write_file_atomic((d / "table.txt").string(), render_table(ev.systems));
    write_file_atomic((d / "report.json").string(),
                      render_json(ev.systems, std::string(corpus::to_string(opts.split)), opts.seed));
    write_file_atomic((d / "utterances.jsonl").string(), utterances_to_jsonl(ev.utterances));
}

}  // namespace kidvoice::evalkit
