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

#include "kidvoice/synth.hpp"

#include "kidvoice/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace kidvoice::synth {

namespace {

// "synth: <stage>: <message>", without repeating a stage name the message
// already starts with.
std::string stage_message(const char* name, const char* what) {
    const std::string prefix = std::string(name) + ": ";
    const std::string msg = what;
    return "synth: " + (msg.rfind(prefix, 0) == 0 ? msg : prefix + msg);
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DataError& e) {
        throw DataError(stage_message(name, e.what()));
    } catch (const NumericError& e) {
        throw NumericError(stage_message(name, e.what()));
    }
}

}  // namespace

Synthesizer::Synthesizer(train::Checkpoint ckpt, SynthOptions opts)
    : ckpt_(std::move(ckpt)), opts_(opts), lm_(ckpt_.make_lm()), flow_(ckpt_.make_flow()) {}

SynthResult Synthesizer::run(const std::string& text, Language lang, const speaker::SpeakerEmbedding& spk,
                             std::uint64_t seed) const {
    if (!ckpt_.covers(lang)) {
        throw DataError("synth: checkpoint was trained for " + std::string(to_string(*ckpt_.language)) + ", not " +
                        std::string(to_string(lang)));
    }
    SynthResult r;
    const textfront::TextTokenSeq seq = stage("textfront", [&] { return textfront::encode_text(text, lang); });
    r.tokens = stage("tokenlm", [&] {
        tokenlm::SampleOptions so{opts_.temperature, opts_.top_k, opts_.max_tokens, derive_seed(seed, 1)};
        return tokenlm::sample(lm_, seq, spk, so);
    });
    r.coarse = stage("speechcodec", [&] { return speechcodec::decode_speech(r.tokens, ckpt_.codebook); });
    if (r.coarse.num_frames() < 2) throw DataError("synth: empty synthesis (language model stopped immediately)");
    r.mel = stage("flowdec", [&] {
        const Eigen::MatrixXd cond = train::flow_condition(r.coarse.frames, ckpt_.scaler, spk);
        const int steps = opts_.euler_steps > 0 ? opts_.euler_steps : ckpt_.flow_config.euler_steps;
        dsp::MelSpectrogram m = r.coarse;
        m.frames += ckpt_.residual.invert(flowdec::sample_frames(flow_, cond, steps, derive_seed(seed, 2)));
        return m;
    });
    r.wave = stage("vocoder", [&] {
        dsp::GriffinLimOptions go;
        go.iterations = opts_.griffin_lim_iterations;
        go.seed = derive_seed(seed, 3);
        return dsp::griffin_lim(r.mel, go);
    });
    return r;
}

SynthResult Synthesizer::run(const std::string& text, Language lang, const dsp::Waveform& ref,
                             std::uint64_t seed) const {
    const speaker::SpeakerEmbedding spk = stage("speaker", [&] { return speaker::extract_embedding(ref); });
    return run(text, lang, spk, seed);
}

dsp::Waveform synthesize(const train::Checkpoint& ckpt, const std::string& text, Language lang,
                         const dsp::Waveform& ref_audio, std::uint64_t seed, const SynthOptions& opts) {
    return Synthesizer(ckpt, opts).run(text, lang, ref_audio, seed).wave;
}

std::vector<SynthOutcome> synthesize_batch(const train::Checkpoint& ckpt, const std::vector<SynthRequest>& requests,
                                           const std::string& output_dir, const SynthOptions& opts) {
    std::filesystem::create_directories(output_dir);
    const Synthesizer synth(ckpt, opts);
    std::vector<SynthOutcome> out;
    std::string manifest;
    for (const auto& req : requests) {
        SynthOutcome o{req, "", ""};
        try {
            if (req.utterance_id.empty() || req.utterance_id.find('/') != std::string::npos) {
                throw DataError("invalid utterance_id '" + req.utterance_id + "'");
            }
            const dsp::Waveform ref = dsp::read_wav(req.ref_audio_path);
            const dsp::Waveform w = synth.run(req.text, req.language, ref, req.seed).wave;
            o.audio_path = req.utterance_id + ".wav";
            write_file_atomic(output_dir + "/" + o.audio_path, dsp::encode_wav(w));
        } catch (const Error& e) {
            o.error = e.what();
        }
        nlohmann::ordered_json j;
        j["utterance_id"] = req.utterance_id;
        j["text"] = req.text;
        j["language"] = std::string(to_string(req.language));
        j["reference"] = req.ref_audio_path;
        j["seed"] = req.seed;
        j["audio_path"] = o.audio_path;
        j["status"] = o.error.empty() ? "ok" : "error";
        if (!o.error.empty()) j["error"] = o.error;
        manifest += j.dump() + "\n";
        out.push_back(std::move(o));
    }
    write_file_atomic(output_dir + "/" + kResultsName, manifest);
    return out;
}

}  // namespace kidvoice::synth
