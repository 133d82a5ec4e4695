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

// Decoder-only transformer over [speaker, language, text bytes, <bos_speech>,
// speech tokens]. Pre-LayerNorm blocks, GELU feed-forward, sinusoidal
// positions, causal attention. Forward and backward are written out by hand
// in double precision.

#pragma once

#include "kidvoice/nn.hpp"
#include "kidvoice/speaker.hpp"
#include "kidvoice/speechcodec.hpp"
#include "kidvoice/textfront.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kidvoice::tokenlm {

struct LMConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int input_vocab = textfront::kInputVocab;
    int speech_vocab = 129;  // K + 1 (EOS)
    int max_seq = 768;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    int eos() const { return speech_vocab - 1; }
    /// Throws DataError on inconsistent sizes.
    void validate() const;
    bool operator==(const LMConfig&) const = default;
};

/// Parameters plus the tensor ids used by the forward pass.
class TokenLM {
public:
    explicit TokenLM(const LMConfig& cfg);

    const LMConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    struct LayerIds {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    struct Ids {
        int tok_in, tok_speech, spk_w, spk_b, lnf_g, lnf_b, out_w, out_b;
        std::vector<LayerIds> layers;
    };
    const Ids& ids() const { return ids_; }

private:
    LMConfig cfg_;
    nn::ParamSet params_;
    Ids ids_{};
};

/// Token positions of one training or inference sequence.
struct Layout {
    speaker::FeatureVector speaker{};  // unit norm
    std::vector<int> prefix;           // language id, text bytes, <bos_speech>
    std::vector<int> speech;           // speech ids without EOS

    int length() const { return 1 + static_cast<int>(prefix.size() + speech.size()); }
    /// Position of <bos_speech>; predictions from here on are scored.
    int first_scored() const { return static_cast<int>(prefix.size()); }
    int scored_count() const { return static_cast<int>(speech.size()) + 1; }
};

/// Throws DataError if the sequence exceeds max_seq or ids are out of range.
Layout build_input(const LMConfig& cfg, const textfront::TextTokenSeq& text, const speaker::SpeakerEmbedding& spk,
                   const speechcodec::SpeechTokenSeq& speech);

/// Speech targets for the scored positions: speech tokens then EOS.
std::vector<int> targets(const Layout& layout, int eos);

/// Input embeddings plus positional encodings, L x d_model.
Eigen::MatrixXd embed(const TokenLM& lm, const Layout& layout);

Eigen::MatrixXd positional_encoding(int length, int d_model);

/// Logits for every position, L x speech_vocab.
Eigen::MatrixXd forward_logits(const TokenLM& lm, const Layout& layout);

/// Softmax of forward_logits.
Eigen::MatrixXd forward(const TokenLM& lm, const Layout& layout);

/// Rows of a full L x V matrix that predict speech tokens.
Eigen::MatrixXd scored_rows(const Eigen::MatrixXd& full, const Layout& layout);

struct LossValue {
    double kl_per_token = 0.0;
    std::size_t tokens = 0;
};

/// Mean over rows of -log pred(target). Throws DataError on length
/// mismatch.
LossValue kl_loss(const Eigen::MatrixXd& pred, std::span<const int> target);

struct Example {
    Layout layout;
    std::vector<int> target;
};

Example make_example(const LMConfig& cfg, const textfront::TextTokenSeq& text, const speaker::SpeakerEmbedding& spk,
                     const speechcodec::SpeechTokenSeq& speech);

/// Token-level mean loss over the batch and its gradient (same layout as
/// params().data). Throws NumericError on non-finite values.
double loss_and_grad(const TokenLM& lm, std::span<const Example> batch, Eigen::VectorXd& grad);

/// Token-level mean loss without gradient.
LossValue batch_loss(const TokenLM& lm, std::span<const Example> batch);

/// Fraction of scored positions whose argmax equals the target.
double teacher_forced_accuracy(const TokenLM& lm, std::span<const Example> batch);

struct SampleOptions {
    double temperature = 0.8;
    int top_k = 16;
    int max_tokens = 512;
    std::uint64_t seed = 0;
};

/// Autoregressive decoding from <bos_speech>; returns tokens with a
/// trailing EOS when one was produced.
speechcodec::SpeechTokenSeq sample(const TokenLM& lm, const textfront::TextTokenSeq& text,
                                   const speaker::SpeakerEmbedding& spk, const SampleOptions& opts = {});

/// Picks one id from a logit row: argmax when temperature < 1e-6 or
/// top_k == 1, otherwise top-k renormalized sampling.
int pick_token(const Eigen::RowVectorXd& logits, double temperature, int top_k, Rng& rng);

}  // namespace kidvoice::tokenlm
