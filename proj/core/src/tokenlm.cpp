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

#include "kidvoice/tokenlm.hpp"

#include "kidvoice/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kidvoice::tokenlm {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

void LMConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw DataError("LMConfig: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (n_layers < 1 || d_ff < 1) throw DataError("LMConfig: n_layers and d_ff must be positive");
    if (input_vocab < textfront::kInputVocab) throw DataError("LMConfig: input_vocab too small");
    if (speech_vocab < 2) throw DataError("LMConfig: speech_vocab must be >= 2");
    if (max_seq < 4) throw DataError("LMConfig: max_seq too small");
    if (dropout != 0.0) throw DataError("LMConfig: dropout is not supported (must be 0)");
}

TokenLM::TokenLM(const LMConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg.d_model, f = cfg.d_ff;
    auto& p = params_;
    ids_.tok_in = p.add("tok_in", cfg.input_vocab, d);
    ids_.tok_speech = p.add("tok_speech", cfg.speech_vocab, d);
    ids_.spk_w = p.add("spk_w", d, speaker::kEmbeddingDim);
    ids_.spk_b = p.add("spk_b", d, 1);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string s = "layer" + std::to_string(l) + ".";
        LayerIds li{};
        li.ln1_g = p.add(s + "ln1_g", d, 1);
        li.ln1_b = p.add(s + "ln1_b", d, 1);
        li.wq = p.add(s + "wq", d, d);
        li.bq = p.add(s + "bq", d, 1);
        li.wk = p.add(s + "wk", d, d);
        li.bk = p.add(s + "bk", d, 1);
        li.wv = p.add(s + "wv", d, d);
        li.bv = p.add(s + "bv", d, 1);
        li.wo = p.add(s + "wo", d, d);
        li.bo = p.add(s + "bo", d, 1);
        li.ln2_g = p.add(s + "ln2_g", d, 1);
        li.ln2_b = p.add(s + "ln2_b", d, 1);
        li.w1 = p.add(s + "w1", f, d);
        li.b1 = p.add(s + "b1", f, 1);
        li.w2 = p.add(s + "w2", d, f);
        li.b2 = p.add(s + "b2", d, 1);
        ids_.layers.push_back(li);
    }
    ids_.lnf_g = p.add("lnf_g", d, 1);
    ids_.lnf_b = p.add("lnf_b", d, 1);
    ids_.out_w = p.add("out_w", cfg.speech_vocab, d);
    ids_.out_b = p.add("out_b", cfg.speech_vocab, 1);
    p.finalize();

    Rng rng(derive_seed(cfg.seed, 0x4c4d));
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid_std = in_std / std::sqrt(2.0 * cfg.n_layers);
    nn::init_normal(p, ids_.tok_in, 0.5, rng);
    nn::init_normal(p, ids_.tok_speech, 0.5, rng);
    nn::init_normal(p, ids_.spk_w, 0.5, rng);
    for (const auto& li : ids_.layers) {
        nn::init_constant(p, li.ln1_g, 1.0);
        nn::init_normal(p, li.wq, in_std, rng);
        nn::init_normal(p, li.wk, in_std, rng);
        nn::init_normal(p, li.wv, in_std, rng);
        nn::init_normal(p, li.wo, resid_std, rng);
        nn::init_constant(p, li.ln2_g, 1.0);
        nn::init_normal(p, li.w1, in_std, rng);
        nn::init_normal(p, li.w2, resid_std / std::sqrt(static_cast<double>(f) / d), rng);
    }
    nn::init_constant(p, ids_.lnf_g, 1.0);
    nn::init_normal(p, ids_.out_w, 0.02, rng);
}

Layout build_input(const LMConfig& cfg, const textfront::TextTokenSeq& text, const speaker::SpeakerEmbedding& spk,
                   const speechcodec::SpeechTokenSeq& speech) {
    Layout l;
    l.speaker = spk.values();
    if (text.tokens.empty() || !textfront::is_language_token(text.tokens.front())) {
        throw DataError("build_input: text must start with a language identifier");
    }
    l.prefix = text.tokens;
    l.prefix.push_back(textfront::kBosSpeech);
    for (int t : l.prefix) {
        if (t < 0 || t >= cfg.input_vocab) throw DataError("build_input: input id " + std::to_string(t) + " out of range");
    }
    l.speech = speech.tokens;
    if (!l.speech.empty() && l.speech.back() == cfg.eos()) l.speech.pop_back();
    for (int t : l.speech) {
        if (t < 0 || t >= cfg.eos()) throw DataError("build_input: speech id " + std::to_string(t) + " out of range");
    }
    if (l.length() > cfg.max_seq) {
        throw DataError("build_input: sequence length " + std::to_string(l.length()) + " exceeds max_seq " +
                        std::to_string(cfg.max_seq));
    }
    return l;
}

std::vector<int> targets(const Layout& layout, int eos) {
    std::vector<int> t = layout.speech;
    t.push_back(eos);
    return t;
}

Example make_example(const LMConfig& cfg, const textfront::TextTokenSeq& text, const speaker::SpeakerEmbedding& spk,
                     const speechcodec::SpeechTokenSeq& speech) {
    Example e;
    e.layout = build_input(cfg, text, spk, speech);
    e.target = targets(e.layout, cfg.eos());
    return e;
}

MatrixXd positional_encoding(int length, int d_model) {
    MatrixXd pe(length, d_model);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < d_model; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d_model);
            pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
        }
    }
    return pe;
}

namespace {

// Row vector view of a d x 1 bias.
RowVectorXd row(const nn::ConstMatrixView& m) { return m.col(0).transpose(); }

RowVectorXd embed_position(const TokenLM& lm, const Layout& layout, int pos) {
    const auto& p = lm.params();
    const auto& ids = lm.ids();
    const int np = static_cast<int>(layout.prefix.size());
    if (pos == 0) {
        Eigen::Map<const VectorXd> s(layout.speaker.data(), speaker::kEmbeddingDim);
        return (p.view(ids.spk_w) * s + p.view(ids.spk_b).col(0)).transpose();
    }
    if (pos <= np) return p.view(ids.tok_in).row(layout.prefix[static_cast<size_t>(pos - 1)]);
    return p.view(ids.tok_speech).row(layout.speech[static_cast<size_t>(pos - 1 - np)]);
}

struct LayerCache {
    MatrixXd x_in;
    nn::LayerNormCache ln1;
    MatrixXd h1, q, k, v, ctx;
    std::vector<MatrixXd> attn;  // per head, L x L (upper part zero)
    MatrixXd x_mid;
    nn::LayerNormCache ln2;
    MatrixXd h2, u, g;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    MatrixXd x_final;
    nn::LayerNormCache lnf;
    MatrixXd hf;
    MatrixXd logits;
};

MatrixXd affine(const MatrixXd& x, const nn::ConstMatrixView& w, const nn::ConstMatrixView& b) {
    return (x * w.transpose()).rowwise() + row(b);
}

void check_finite(const MatrixXd& m, const char* where) {
    if (!m.allFinite()) throw NumericError(std::string("tokenlm: non-finite activations in ") + where);
}

void run_forward(const TokenLM& lm, const Layout& layout, ForwardCache& c) {
    const auto& cfg = lm.config();
    const auto& p = lm.params();
    const auto& ids = lm.ids();
    const int L = layout.length();
    const int dh = cfg.d_model / cfg.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    MatrixXd x = embed(lm, layout);
    c.layers.resize(ids.layers.size());
    for (size_t li = 0; li < ids.layers.size(); ++li) {
        const auto& w = ids.layers[li];
        LayerCache& lc = c.layers[li];
        lc.x_in = x;
        lc.h1 = nn::layer_norm(x, p.view(w.ln1_g).col(0), p.view(w.ln1_b).col(0), &lc.ln1);
        lc.q = affine(lc.h1, p.view(w.wq), p.view(w.bq));
        lc.k = affine(lc.h1, p.view(w.wk), p.view(w.bk));
        lc.v = affine(lc.h1, p.view(w.wv), p.view(w.bv));
        lc.ctx = MatrixXd::Zero(L, cfg.d_model);
        lc.attn.assign(static_cast<size_t>(cfg.n_heads), MatrixXd());
        for (int h = 0; h < cfg.n_heads; ++h) {
            const MatrixXd s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
            MatrixXd a = MatrixXd::Zero(L, L);
            for (int i = 0; i < L; ++i) {
                const double mx = s.row(i).head(i + 1).maxCoeff();
                a.row(i).head(i + 1) = (s.row(i).head(i + 1).array() - mx).exp();
                a.row(i).head(i + 1) /= a.row(i).head(i + 1).sum();
            }
            lc.ctx.middleCols(h * dh, dh) = a * lc.v.middleCols(h * dh, dh);
            lc.attn[static_cast<size_t>(h)] = std::move(a);
        }
        x = x + affine(lc.ctx, p.view(w.wo), p.view(w.bo));
        lc.x_mid = x;
        lc.h2 = nn::layer_norm(x, p.view(w.ln2_g).col(0), p.view(w.ln2_b).col(0), &lc.ln2);
        lc.u = affine(lc.h2, p.view(w.w1), p.view(w.b1));
        lc.g = nn::gelu(lc.u);
        x = x + affine(lc.g, p.view(w.w2), p.view(w.b2));
    }
    c.x_final = x;
    c.hf = nn::layer_norm(x, p.view(ids.lnf_g).col(0), p.view(ids.lnf_b).col(0), &c.lnf);
    c.logits = affine(c.hf, p.view(ids.out_w), p.view(ids.out_b));
    check_finite(c.logits, "forward");
}

// Accumulates gradients of sum(dlogits . logits) into grad.
void run_backward(const TokenLM& lm, const Layout& layout, const ForwardCache& c, const MatrixXd& dlogits,
                  VectorXd& grad) {
    const auto& cfg = lm.config();
    const auto& p = lm.params();
    const auto& ids = lm.ids();
    const int L = layout.length();
    const int dh = cfg.d_model / cfg.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto G = [&](int id) { return p.view(grad, id); };

    G(ids.out_w) += dlogits.transpose() * c.hf;
    G(ids.out_b).col(0) += dlogits.colwise().sum().transpose();
    MatrixXd dx = nn::layer_norm_backward(dlogits * p.view(ids.out_w), p.view(ids.lnf_g).col(0), c.lnf,
                                          G(ids.lnf_g).col(0), G(ids.lnf_b).col(0));

    for (int li = static_cast<int>(ids.layers.size()) - 1; li >= 0; --li) {
        const auto& w = ids.layers[static_cast<size_t>(li)];
        const LayerCache& lc = c.layers[static_cast<size_t>(li)];

        // Feed-forward branch.
        G(w.w2) += dx.transpose() * lc.g;
        G(w.b2).col(0) += dx.colwise().sum().transpose();
        const MatrixXd du = nn::gelu_backward(lc.u, dx * p.view(w.w2));
        G(w.w1) += du.transpose() * lc.h2;
        G(w.b1).col(0) += du.colwise().sum().transpose();
        dx += nn::layer_norm_backward(du * p.view(w.w1), p.view(w.ln2_g).col(0), lc.ln2, G(w.ln2_g).col(0),
                                      G(w.ln2_b).col(0));

        // Attention branch.
        G(w.wo) += dx.transpose() * lc.ctx;
        G(w.bo).col(0) += dx.colwise().sum().transpose();
        const MatrixXd dctx = dx * p.view(w.wo);
        MatrixXd dq(L, cfg.d_model), dk(L, cfg.d_model), dv(L, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const MatrixXd& a = lc.attn[static_cast<size_t>(h)];
            const auto dch = dctx.middleCols(h * dh, dh);
            const MatrixXd da = dch * lc.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh) = a.transpose() * dch;
            MatrixXd ds = a.cwiseProduct(da);
            const VectorXd rs = ds.rowwise().sum();
            ds -= a.cwiseProduct(rs.replicate(1, L));
            ds *= scale;
            dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
        }
        G(w.wq) += dq.transpose() * lc.h1;
        G(w.bq).col(0) += dq.colwise().sum().transpose();
        G(w.wk) += dk.transpose() * lc.h1;
        G(w.bk).col(0) += dk.colwise().sum().transpose();
        G(w.wv) += dv.transpose() * lc.h1;
        G(w.bv).col(0) += dv.colwise().sum().transpose();
        const MatrixXd dh1 = dq * p.view(w.wq) + dk * p.view(w.wk) + dv * p.view(w.wv);
        dx += nn::layer_norm_backward(dh1, p.view(w.ln1_g).col(0), lc.ln1, G(w.ln1_g).col(0), G(w.ln1_b).col(0));
    }

    // Embeddings; positional encodings are constant.
    Eigen::Map<const VectorXd> s(layout.speaker.data(), speaker::kEmbeddingDim);
    G(ids.spk_w) += dx.row(0).transpose() * s.transpose();
    G(ids.spk_b).col(0) += dx.row(0).transpose();
    const int np = static_cast<int>(layout.prefix.size());
    auto tin = G(ids.tok_in);
    auto tsp = G(ids.tok_speech);
    for (int pos = 1; pos < L; ++pos) {
        if (pos <= np) {
            tin.row(layout.prefix[static_cast<size_t>(pos - 1)]) += dx.row(pos);
        } else {
            tsp.row(layout.speech[static_cast<size_t>(pos - 1 - np)]) += dx.row(pos);
        }
    }
}

}  // namespace

MatrixXd embed(const TokenLM& lm, const Layout& layout) {
    const int L = layout.length();
    MatrixXd x = positional_encoding(L, lm.config().d_model);
    for (int pos = 0; pos < L; ++pos) x.row(pos) += embed_position(lm, layout, pos);
    return x;
}

MatrixXd forward_logits(const TokenLM& lm, const Layout& layout) {
    ForwardCache c;
    run_forward(lm, layout, c);
    return c.logits;
}

MatrixXd forward(const TokenLM& lm, const Layout& layout) { return nn::softmax_rows(forward_logits(lm, layout)); }

MatrixXd scored_rows(const MatrixXd& full, const Layout& layout) {
    return full.middleRows(layout.first_scored(), layout.scored_count());
}

LossValue kl_loss(const MatrixXd& pred, std::span<const int> target) {
    if (static_cast<std::size_t>(pred.rows()) != target.size()) {
        throw DataError("kl_loss: " + std::to_string(pred.rows()) + " predictions for " +
                        std::to_string(target.size()) + " targets");
    }
    if (target.empty()) throw DataError("kl_loss: no targets");
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const int t = target[i];
        if (t < 0 || t >= pred.cols()) throw DataError("kl_loss: target id out of range");
        sum -= std::log(pred(static_cast<Eigen::Index>(i), t));
    }
    return {sum / static_cast<double>(target.size()), target.size()};
}

namespace {

// -log softmax(logits)[t], computed stably.
double nll_row(const RowVectorXd& z, int t) {
    const double mx = z.maxCoeff();
    return std::log((z.array() - mx).exp().sum()) + mx - z[t];
}

}  // namespace

double loss_and_grad(const TokenLM& lm, std::span<const Example> batch, VectorXd& grad) {
    grad = lm.params().zeros();
    std::size_t n = 0;
    for (const auto& e : batch) n += e.target.size();
    if (n == 0) throw DataError("loss_and_grad: empty batch");
    double loss = 0.0;
    ForwardCache c;
    for (const auto& e : batch) {
        if (static_cast<int>(e.target.size()) != e.layout.scored_count()) {
            throw DataError("loss_and_grad: target length does not match layout");
        }
        run_forward(lm, e.layout, c);
        MatrixXd dlogits = MatrixXd::Zero(c.logits.rows(), c.logits.cols());
        const int first = e.layout.first_scored();
        for (std::size_t i = 0; i < e.target.size(); ++i) {
            const int r = first + static_cast<int>(i);
            const RowVectorXd z = c.logits.row(r);
            loss += nll_row(z, e.target[i]);
            const double mx = z.maxCoeff();
            RowVectorXd pr = (z.array() - mx).exp();
            pr /= pr.sum();
            pr[e.target[i]] -= 1.0;
            dlogits.row(r) = pr / static_cast<double>(n);
        }
        run_backward(lm, e.layout, c, dlogits, grad);
    }
    if (!grad.allFinite()) throw NumericError("tokenlm: non-finite gradient");
    return loss / static_cast<double>(n);
}

LossValue batch_loss(const TokenLM& lm, std::span<const Example> batch) {
    double loss = 0.0;
    std::size_t n = 0;
    for (const auto& e : batch) {
        const MatrixXd z = forward_logits(lm, e.layout);
        for (std::size_t i = 0; i < e.target.size(); ++i) {
            loss += nll_row(z.row(e.layout.first_scored() + static_cast<int>(i)), e.target[i]);
        }
        n += e.target.size();
    }
    if (n == 0) throw DataError("batch_loss: empty batch");
    return {loss / static_cast<double>(n), n};
}

double teacher_forced_accuracy(const TokenLM& lm, std::span<const Example> batch) {
    std::size_t hit = 0, n = 0;
    for (const auto& e : batch) {
        const MatrixXd z = forward_logits(lm, e.layout);
        for (std::size_t i = 0; i < e.target.size(); ++i) {
            Eigen::Index arg = 0;
            z.row(e.layout.first_scored() + static_cast<int>(i)).maxCoeff(&arg);
            hit += (arg == e.target[i]) ? 1 : 0;
        }
        n += e.target.size();
    }
    return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

int pick_token(const RowVectorXd& logits, double temperature, int top_k, Rng& rng) {
    const int V = static_cast<int>(logits.size());
    std::vector<int> order(static_cast<size_t>(V));
    std::iota(order.begin(), order.end(), 0);
    // Descending logit, ties to the lower id.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
    if (temperature < 1e-6 || top_k == 1) return order.front();
    const int k = top_k <= 0 ? V : std::min(top_k, V);
    std::vector<double> w(static_cast<size_t>(k));
    const double mx = logits[order.front()];
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        w[static_cast<size_t>(i)] = std::exp((logits[order[static_cast<size_t>(i)]] - mx) / temperature);
        sum += w[static_cast<size_t>(i)];
    }
    const double r = rng.uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += w[static_cast<size_t>(i)];
        if (r < acc) return order[static_cast<size_t>(i)];
    }
    return order[static_cast<size_t>(k - 1)];
}

namespace {

// Key/value cache for incremental decoding; reproduces run_forward row by
// row.
class IncrementalDecoder {
public:
    explicit IncrementalDecoder(const TokenLM& lm) : lm_(lm) {
        const auto& cfg = lm.config();
        keys_.assign(lm.ids().layers.size(), MatrixXd(cfg.max_seq, cfg.d_model));
        values_.assign(lm.ids().layers.size(), MatrixXd(cfg.max_seq, cfg.d_model));
    }

    RowVectorXd step(const RowVectorXd& input) {
        const auto& cfg = lm_.config();
        const auto& p = lm_.params();
        const auto& ids = lm_.ids();
        const int dh = cfg.d_model / cfg.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const int pos = len_;
        MatrixXd x = input + positional_encoding(pos + 1, cfg.d_model).row(pos);
        for (size_t li = 0; li < ids.layers.size(); ++li) {
            const auto& w = ids.layers[li];
            const MatrixXd h1 = nn::layer_norm(x, p.view(w.ln1_g).col(0), p.view(w.ln1_b).col(0), nullptr);
            const MatrixXd q = affine(h1, p.view(w.wq), p.view(w.bq));
            keys_[li].row(pos) = affine(h1, p.view(w.wk), p.view(w.bk));
            values_[li].row(pos) = affine(h1, p.view(w.wv), p.view(w.bv));
            MatrixXd ctx(1, cfg.d_model);
            for (int h = 0; h < cfg.n_heads; ++h) {
                const auto kh = keys_[li].block(0, h * dh, pos + 1, dh);
                const RowVectorXd s = (q.middleCols(h * dh, dh) * kh.transpose()) * scale;
                RowVectorXd a = (s.array() - s.maxCoeff()).exp();
                a /= a.sum();
                ctx.middleCols(h * dh, dh) = a * values_[li].block(0, h * dh, pos + 1, dh);
            }
            x = x + affine(ctx, p.view(w.wo), p.view(w.bo));
            const MatrixXd h2 = nn::layer_norm(x, p.view(w.ln2_g).col(0), p.view(w.ln2_b).col(0), nullptr);
            x = x + affine(nn::gelu(affine(h2, p.view(w.w1), p.view(w.b1))), p.view(w.w2), p.view(w.b2));
        }
        const MatrixXd hf = nn::layer_norm(x, p.view(ids.lnf_g).col(0), p.view(ids.lnf_b).col(0), nullptr);
        ++len_;
        const MatrixXd z = affine(hf, p.view(ids.out_w), p.view(ids.out_b));
        check_finite(z, "sample");
        return z.row(0);
    }

    int length() const { return len_; }

private:
    const TokenLM& lm_;
    std::vector<MatrixXd> keys_;
    std::vector<MatrixXd> values_;
    int len_ = 0;
};

}  // namespace

speechcodec::SpeechTokenSeq sample(const TokenLM& lm, const textfront::TextTokenSeq& text,
                                   const speaker::SpeakerEmbedding& spk, const SampleOptions& opts) {
    const auto& cfg = lm.config();
    Layout layout = build_input(cfg, text, spk, {});
    IncrementalDecoder dec(lm);
    RowVectorXd logits;
    for (int pos = 0; pos < layout.length(); ++pos) logits = dec.step(embed_position(lm, layout, pos));

    Rng rng(opts.seed);
    speechcodec::SpeechTokenSeq out;
    const auto& tsp = lm.params().view(lm.ids().tok_speech);
    while (static_cast<int>(out.tokens.size()) < opts.max_tokens) {
        const int t = pick_token(logits, opts.temperature, opts.top_k, rng);
        out.tokens.push_back(t);
        if (t == cfg.eos() || dec.length() >= cfg.max_seq) break;
        logits = dec.step(tsp.row(t));
    }
    return out;
}

}  // namespace kidvoice::tokenlm
