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
#include "kidvoice/dsp.hpp"
#include "kidvoice/evalkit.hpp"
#include "kidvoice/flowdec.hpp"
#include "kidvoice/speaker.hpp"
#include "kidvoice/speechcodec.hpp"
#include "kidvoice/tokenlm.hpp"
#include "kidvoice/unicode.hpp"

#include <benchmark/benchmark.h>

using namespace kidvoice;

namespace {

dsp::Waveform utterance(int chars) {
    const auto cfg = corpus::default_corpus_config();
    std::u32string text;
    for (int i = 0; i < chars; ++i) text.push_back(U"一二三四五"[i % 5]);
    return corpus::render_utterance(text, cfg.alphabets.at(Language::zh),
                                    {"a", corpus::AgeGroup::adult, 1.0, Language::zh});
}

speaker::SpeakerEmbedding some_speaker() { return speaker::extract_embedding(utterance(8)); }

void BM_MelSpectrogram(benchmark::State& state) {
    const auto w = utterance(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(dsp::mel_spectrogram(w));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(w.samples.size()));
}
BENCHMARK(BM_MelSpectrogram)->Arg(4)->Arg(32);

void BM_GriffinLim(benchmark::State& state) {
    const auto m = dsp::mel_spectrogram(utterance(4));
    dsp::GriffinLimOptions o;
    o.iterations = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(dsp::griffin_lim(m, o));
}
BENCHMARK(BM_GriffinLim)->Arg(10)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_SpeakerEmbedding(benchmark::State& state) {
    const auto w = utterance(8);
    for (auto _ : state) benchmark::DoNotOptimize(speaker::extract_embedding(w));
}
BENCHMARK(BM_SpeakerEmbedding);

void BM_CodebookEncode(benchmark::State& state) {
    const auto m = dsp::mel_spectrogram(utterance(16));
    const auto cb = speechcodec::train_codebook(m.frames, {.k = static_cast<int>(state.range(0)), .seed = 0});
    for (auto _ : state) benchmark::DoNotOptimize(speechcodec::encode_speech(m, cb));
    state.SetItemsProcessed(state.iterations() * m.num_frames());
}
BENCHMARK(BM_CodebookEncode)->Arg(16)->Arg(64);

void BM_LmForward(benchmark::State& state) {
    tokenlm::LMConfig cfg;
    const tokenlm::TokenLM lm(cfg);
    speechcodec::SpeechTokenSeq s;
    for (int i = 0; i < state.range(0); ++i) s.tokens.push_back(i % 128);
    const auto layout = tokenlm::build_input(cfg, textfront::encode_text("一二三", Language::zh), some_speaker(), s);
    for (auto _ : state) benchmark::DoNotOptimize(tokenlm::forward_logits(lm, layout));
    state.SetItemsProcessed(state.iterations() * layout.length());
}
BENCHMARK(BM_LmForward)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_LmLossAndGrad(benchmark::State& state) {
    tokenlm::LMConfig cfg;
    const tokenlm::TokenLM lm(cfg);
    speechcodec::SpeechTokenSeq s;
    for (int i = 0; i < 64; ++i) s.tokens.push_back(i % 128);
    const std::vector<tokenlm::Example> batch{
        tokenlm::make_example(cfg, textfront::encode_text("一二三", Language::zh), some_speaker(), s)};
    Eigen::VectorXd g;
    for (auto _ : state) benchmark::DoNotOptimize(tokenlm::loss_and_grad(lm, batch, g));
}
BENCHMARK(BM_LmLossAndGrad)->Unit(benchmark::kMillisecond);

void BM_LmSample(benchmark::State& state) {
    tokenlm::LMConfig cfg;
    tokenlm::TokenLM lm(cfg);
    lm.params().view(lm.ids().out_b)(cfg.eos(), 0) = -1e3;  // run to max_tokens
    const auto text = textfront::encode_text("一二三", Language::zh);
    const auto spk = some_speaker();
    const tokenlm::SampleOptions o{.max_tokens = static_cast<int>(state.range(0))};
    for (auto _ : state) benchmark::DoNotOptimize(tokenlm::sample(lm, text, spk, o));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LmSample)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_FlowSample(benchmark::State& state) {
    const flowdec::FlowModel m(flowdec::FlowConfig{});
    const Eigen::MatrixXd cond = Eigen::MatrixXd::Random(state.range(0), m.config().cond_dim);
    for (auto _ : state) benchmark::DoNotOptimize(flowdec::sample_frames(m, cond, 10, 1));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowSample)->Arg(20)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_Cer(benchmark::State& state) {
    const std::string ref = unicode::to_utf8(std::u32string(static_cast<size_t>(state.range(0)), U'一'));
    const std::string hyp = unicode::to_utf8(std::u32string(static_cast<size_t>(state.range(0)), U'二'));
    for (auto _ : state) benchmark::DoNotOptimize(evalkit::cer(ref, hyp));
}
BENCHMARK(BM_Cer)->Arg(8)->Arg(64);

void BM_OracleAsr(benchmark::State& state) {
    const auto cfg = corpus::default_corpus_config();
    const auto w = utterance(8);
    for (auto _ : state) benchmark::DoNotOptimize(evalkit::oracle_asr(w, cfg.alphabets.at(Language::zh), 1.0));
}
BENCHMARK(BM_OracleAsr)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
