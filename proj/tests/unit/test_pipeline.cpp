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

// End-to-end checks against one small model trained once for the suite.

#include "kidvoice/common.hpp"
#include "kidvoice/corpus.hpp"
#include "kidvoice/dsp.hpp"
#include "kidvoice/evalkit.hpp"
#include "kidvoice/evaluate.hpp"
#include "kidvoice/synth.hpp"
#include "kidvoice/train.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <memory>

using namespace kidvoice;

namespace {

class Pipeline : public ::testing::Test {
protected:
    struct Shared {
        kvtest::TempDir dir{"pipeline"};
        std::string manifest;
        train::Dataset data;
        train::TrainConfig cfg;
        train::Checkpoint ckpt;
        std::vector<train::EpochRecord> progress;
    };
    static inline std::unique_ptr<Shared> s_;

    static void SetUpTestSuite() {
        s_ = std::make_unique<Shared>();
        s_->manifest = corpus::generate_corpus(corpus::default_corpus_config(), s_->dir.str("corpus")).manifest_path;
        s_->data = train::load_dataset(s_->manifest, Language::zh);
        s_->cfg.language_filter = Language::zh;
        s_->cfg.passes_per_epoch = 15;
        s_->cfg.epochs = 4;
        s_->ckpt = train::train_pipeline(s_->data, s_->cfg, [](const train::EpochRecord& r) { s_->progress.push_back(r); });
    }
    static void TearDownTestSuite() { s_.reset(); }

    static const train::Utterance& first_train(corpus::AgeGroup g) {
        for (const auto& u : s_->data.train)
            if (u.item.speaker.age_group == g) return u;
        throw std::logic_error("no speaker of that age");
    }
    static dsp::Waveform reference(corpus::AgeGroup g) {
        return train::speaker_reference(s_->data, first_train(g).item, 0);
    }
};

}  // namespace

TEST_F(Pipeline, DatasetFiltersLanguage) {
    EXPECT_EQ(s_->data.train.size(), 40u);
    EXPECT_EQ(s_->data.val.size(), 5u);
    EXPECT_EQ(s_->data.test.size(), 5u);
    for (const auto& u : s_->data.train) EXPECT_EQ(u.item.language, Language::zh);
}

TEST_F(Pipeline, SpeakerReferenceIsLongEnough) {
    for (auto g : {corpus::AgeGroup::child, corpus::AgeGroup::adult}) {
        const auto w = reference(g);
        EXPECT_GE(static_cast<double>(w.samples.size()) / w.sample_rate_hz, train::kReferenceMinS);
    }
}

TEST_F(Pipeline, HistoryAndSelection) {
    const auto& h = s_->ckpt.history;
    ASSERT_EQ(h.size(), 4u);
    EXPECT_EQ(s_->progress.size(), 4u);
    EXPECT_LT(h.back().train_lm_loss, h.front().train_lm_loss);
    EXPECT_LT(h.back().train_flow_loss, h.front().train_flow_loss);
    // Lowest validation loss, earliest on ties.
    std::size_t best = 0;
    for (std::size_t i = 1; i < h.size(); ++i)
        if (h[i].val_loss < h[best].val_loss) best = i;
    EXPECT_EQ(s_->ckpt.epoch, h[best].epoch);
    EXPECT_EQ(s_->ckpt.val_loss, h[best].val_loss);
    for (const auto& r : h) {
        EXPECT_NEAR(r.val_loss, r.val_lm_loss + r.val_flow_loss, 1e-9);
        EXPECT_LE(r.max_clipped_norm, s_->cfg.grad_clip + 1e-9);
        EXPECT_GT(r.steps, 0);
    }
    EXPECT_EQ(s_->ckpt.language, Language::zh);
    EXPECT_EQ(s_->ckpt.corpus_digest, s_->data.digest);
}

TEST_F(Pipeline, CheckpointSurvivesDisk) {
    const auto path = s_->dir.str("model.ckpt");
    train::save_checkpoint(s_->ckpt, path);
    const auto back = train::load_checkpoint(path);
    EXPECT_EQ(back.lm_params, s_->ckpt.lm_params);
    EXPECT_EQ(back.flow_params, s_->ckpt.flow_params);
    const synth::Synthesizer a(s_->ckpt), b(back);
    const auto ref = reference(corpus::AgeGroup::adult);
    EXPECT_EQ(a.run("一二", Language::zh, ref, 3).wave.samples, b.run("一二", Language::zh, ref, 3).wave.samples);
}

TEST_F(Pipeline, SynthesisIsSeeded) {
    const synth::Synthesizer s(s_->ckpt);
    const auto ref = reference(corpus::AgeGroup::adult);
    const auto& text = s_->data.train.front().item.text;
    const auto a = s.run(text, Language::zh, ref, 11);
    const auto b = s.run(text, Language::zh, ref, 11);
    EXPECT_EQ(dsp::encode_wav(a.wave), dsp::encode_wav(b.wave));
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.mel.num_frames(), a.coarse.num_frames());
}

TEST_F(Pipeline, SingleCharacterIsRecognized) {
    const synth::Synthesizer s(s_->ckpt, {.temperature = 0.0, .top_k = 1});
    const auto& table = s_->data.corpus.alphabets.at(Language::zh);
    const auto out = s.run("一", Language::zh, reference(corpus::AgeGroup::adult), 0);
    EXPECT_EQ(evalkit::oracle_asr(out.wave, table, 1.0), "一");
}

TEST_F(Pipeline, ChildReferenceRaisesPitch) {
    const synth::Synthesizer s(s_->ckpt);
    const auto cref = reference(corpus::AgeGroup::child), aref = reference(corpus::AgeGroup::adult);
    int higher = 0, total = 0;
    for (const auto& u : s_->data.train) {
        if (u.item.speaker.age_group != corpus::AgeGroup::adult || total == 10) continue;
        ++total;
        const double pc = dsp::median_voiced_pitch(dsp::estimate_pitch(s.run(u.item.text, Language::zh, cref, 5).wave));
        const double pa = dsp::median_voiced_pitch(dsp::estimate_pitch(s.run(u.item.text, Language::zh, aref, 5).wave));
        higher += pc > pa;
    }
    EXPECT_EQ(higher, total);
}

TEST_F(Pipeline, FlowUsesSpeakerCondition) {
    // Same coarse frames, different speaker rows: the flow output moves.
    const auto flow = s_->ckpt.make_flow();
    const auto& cb = s_->ckpt.codebook;
    const Eigen::MatrixXd coarse = cb.centroids.topRows(3);
    const auto c = train::flow_condition(coarse, s_->ckpt.scaler, first_train(corpus::AgeGroup::child).spk);
    const auto a = train::flow_condition(coarse, s_->ckpt.scaler, first_train(corpus::AgeGroup::adult).spk);
    EXPECT_GT((flowdec::sample_frames(flow, c, 10, 1) - flowdec::sample_frames(flow, a, 10, 1)).norm(), 1e-6);
}

TEST_F(Pipeline, WrongLanguageIsUsageError) {
    const synth::Synthesizer s(s_->ckpt);
    EXPECT_THROW(s.run("a", Language::ma, reference(corpus::AgeGroup::adult), 0), Error);
}

TEST_F(Pipeline, ShortReferenceIsDataError) {
    const synth::Synthesizer s(s_->ckpt);
    EXPECT_THROW(s.run("一", Language::zh, kvtest::sine(400, 0.05), 0), DataError);
}

TEST_F(Pipeline, BatchRecordsFailuresAndContinues) {
    const auto out_dir = s_->dir.str("batch");
    const auto ref_path = s_->dir.str("ref.wav");
    dsp::write_wav(ref_path, reference(corpus::AgeGroup::adult));
    const std::vector<synth::SynthRequest> reqs{{"u1", "一二", Language::zh, ref_path, 1},
                                                {"u2", "三", Language::zh, s_->dir.str("missing.wav"), 2},
                                                {"u3", "四五", Language::zh, ref_path, 3}};
    const auto out = synth::synthesize_batch(s_->ckpt, reqs, out_dir);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].audio_path, "u1.wav");
    EXPECT_TRUE(out[0].error.empty());
    EXPECT_TRUE(out[1].audio_path.empty());
    EXPECT_FALSE(out[1].error.empty());
    EXPECT_EQ(out[2].audio_path, "u3.wav");
    std::ifstream results(out_dir + "/" + synth::kResultsName);
    int lines = 0;
    for (std::string line; std::getline(results, line);) ++lines;
    EXPECT_EQ(lines, 3);
    // Batch output equals a direct call with the same seed.
    const auto direct = synth::synthesize(s_->ckpt, "一二", Language::zh, reference(corpus::AgeGroup::adult), 1);
    EXPECT_EQ(dsp::read_wav(out_dir + "/u1.wav").samples.size(), direct.samples.size());
}

TEST_F(Pipeline, EvaluationOnTrainingSplit) {
    evalkit::EvalOptions opts;
    opts.split = corpus::Split::train;
    const auto ev = evalkit::evaluate_system({s_->ckpt}, s_->data, opts);
    ASSERT_EQ(ev.systems.size(), 1u);
    ASSERT_EQ(ev.systems[0].languages.size(), 1u);
    const auto& zh = ev.systems[0].languages[0];
    EXPECT_EQ(zh.utterances, 40u);
    EXPECT_LT(zh.tally.percent(), 15.0);
    EXPECT_EQ(ev.utterances.size(), 40u);
    // Pooled CER equals the per-utterance edits over the reference sizes.
    std::size_t edits = 0;
    for (const auto& u : ev.utterances) edits += u.edits;
    EXPECT_EQ(edits, zh.tally.edits);
}

TEST(PipelineDeterminism, SameSeedSameBytes) {
    kvtest::TempDir dir("determinism");
    const auto manifest = corpus::generate_corpus(corpus::default_corpus_config(), dir.str("corpus")).manifest_path;
    train::TrainConfig cfg;
    cfg.language_filter = Language::ma;
    cfg.passes_per_epoch = 2;
    cfg.epochs = 2;
    cfg.seed = 4;
    const auto a = train::serialize_checkpoint(train::train_pipeline(manifest, cfg));
    const auto b = train::serialize_checkpoint(train::train_pipeline(manifest, cfg));
    EXPECT_EQ(sha256_hex(a), sha256_hex(b));
    cfg.seed = 5;
    EXPECT_NE(sha256_hex(train::serialize_checkpoint(train::train_pipeline(manifest, cfg))), sha256_hex(a));
}
