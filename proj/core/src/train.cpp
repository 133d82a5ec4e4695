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

#include "kidvoice/train.hpp"

#include "kidvoice/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace kidvoice::train {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::ordered_json;

std::vector<std::vector<std::size_t>> make_batches(const std::vector<SequenceInfo>& items, int token_budget,
                                                   std::uint64_t seed, std::uint64_t round) {
    for (const auto& it : items) {
        if (it.length > token_budget) {
            throw DataError("make_batches: sequence of " + std::to_string(it.length) + " tokens exceeds budget " +
                            std::to_string(token_budget));
        }
    }
    std::vector<SequenceInfo> order = items;
    Rng rng(derive_seed(seed, 0xBA7C, round));
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(),
                     [](const SequenceInfo& a, const SequenceInfo& b) { return a.length < b.length; });
    std::vector<std::vector<std::size_t>> batches;
    long used = 0;
    for (const auto& it : order) {
        if (batches.empty() || used + it.length > token_budget) {
            batches.emplace_back();
            used = 0;
        }
        batches.back().push_back(it.index);
        used += it.length;
    }
    return batches;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw DataError("train: epochs must be >= 1");
    if (token_budget < 1) throw DataError("train: token_budget must be >= 1");
    if (passes_per_epoch < 1) throw DataError("train: passes_per_epoch must be >= 1");
    if (!(lr > 0.0)) throw DataError("train: lr must be positive");
    if (!(grad_clip > 0.0)) throw DataError("train: grad_clip must be positive");
    if (codebook_size < 2) throw DataError("train: codebook_size must be >= 2");
}

MelScaler MelScaler::fit(const MatrixXd& frames, double min_scale) {
    if (frames.rows() == 0) throw DataError("MelScaler: no frames");
    MelScaler s;
    s.mean = frames.colwise().mean();
    s.scale = ((frames.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(frames.rows()))
                  .sqrt()
                  .max(min_scale);
    return s;
}

MatrixXd MelScaler::apply(const MatrixXd& frames) const {
    return (frames.rowwise() - mean).array().rowwise() / scale.array();
}

MatrixXd MelScaler::invert(const MatrixXd& frames) const {
    return (frames.array().rowwise() * scale.array()).rowwise() + mean.array();
}

tokenlm::TokenLM Checkpoint::make_lm() const {
    tokenlm::TokenLM lm(lm_config);
    if (lm.params().total() != lm_params.size()) throw DataError("checkpoint: LM parameter count mismatch");
    lm.params().data = lm_params;
    return lm;
}

flowdec::FlowModel Checkpoint::make_flow() const {
    flowdec::FlowModel f(flow_config);
    if (f.params().total() != flow_params.size()) throw DataError("checkpoint: flow parameter count mismatch");
    f.params().data = flow_params;
    return f;
}

std::string corpus_digest(const corpus::CorpusConfig& cfg) { return sha256_hex(corpus::corpus_config_to_json(cfg)); }

// ---- serialization --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'V', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const std::string& s, std::size_t pos) : s_(s), pos_(pos) {}

    std::uint64_t u(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }

    double f32() {
        const auto bits = static_cast<std::uint32_t>(u(4));
        float f = 0.0f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > s_.size()) throw DataError("checkpoint: truncated file");
    }

    const std::string& s_;
    std::size_t pos_;
};

struct NamedTensor {
    std::string name;
    MatrixXd value;
};

void put_tensor(std::string& out, const std::string& name, const MatrixXd& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
    }
}

ordered_json lm_config_json(const tokenlm::LMConfig& c) {
    return {{"d_model", c.d_model},       {"n_layers", c.n_layers},         {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},             {"input_vocab", c.input_vocab},   {"speech_vocab", c.speech_vocab},
            {"max_seq", c.max_seq},       {"dropout", c.dropout},           {"seed", c.seed}};
}

tokenlm::LMConfig lm_config_from(const nlohmann::json& j) {
    tokenlm::LMConfig c;
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.input_vocab = j.at("input_vocab");
    c.speech_vocab = j.at("speech_vocab");
    c.max_seq = j.at("max_seq");
    c.dropout = j.at("dropout");
    c.seed = j.at("seed");
    return c;
}

ordered_json flow_config_json(const flowdec::FlowConfig& c) {
    return {{"hidden", c.hidden},       {"layers", c.layers}, {"euler_steps", c.euler_steps},
            {"sigma_min", c.sigma_min}, {"seed", c.seed},     {"n_mels", c.n_mels},
            {"cond_dim", c.cond_dim}};
}

flowdec::FlowConfig flow_config_from(const nlohmann::json& j) {
    flowdec::FlowConfig c;
    c.hidden = j.at("hidden");
    c.layers = j.at("layers");
    c.euler_steps = j.at("euler_steps");
    c.sigma_min = j.at("sigma_min");
    c.seed = j.at("seed");
    c.n_mels = j.at("n_mels");
    c.cond_dim = j.at("cond_dim");
    return c;
}

// Tensors in file order.
std::vector<NamedTensor> collect_tensors(const Checkpoint& c) {
    std::vector<NamedTensor> out;
    const tokenlm::TokenLM lm = c.make_lm();
    for (size_t i = 0; i < lm.params().specs().size(); ++i) {
        out.push_back({"lm/" + lm.params().specs()[i].name, lm.params().view(static_cast<int>(i))});
    }
    const flowdec::FlowModel flow = c.make_flow();
    for (size_t i = 0; i < flow.params().specs().size(); ++i) {
        out.push_back({"flow/" + flow.params().specs()[i].name, flow.params().view(static_cast<int>(i))});
    }
    out.push_back({"codebook/centroids", c.codebook.centroids});
    out.push_back({"scaler/mean", c.scaler.mean});
    out.push_back({"scaler/scale", c.scaler.scale});
    out.push_back({"residual/mean", c.residual.mean});
    out.push_back({"residual/scale", c.residual.scale});
    return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    const std::vector<NamedTensor> tensors = collect_tensors(c);
    std::string payload;
    ordered_json list = ordered_json::array();
    for (const auto& t : tensors) {
        put_tensor(payload, t.name, t.value);
        list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    }

    ordered_json h;
    h["format"] = "kidvoice-checkpoint";
    h["version"] = c.version;
    h["tool_version"] = kVersion;
    h["system_id"] = c.system_id;
    h["language"] = c.language ? std::string(to_string(*c.language)) : std::string("all");
    h["seed"] = c.seed;
    h["epoch"] = c.epoch;
    h["val_loss"] = c.val_loss;
    h["corpus_digest"] = c.corpus_digest;
    h["codebook_version"] = c.codebook.version;
    h["lm_config"] = lm_config_json(c.lm_config);
    h["flow_config"] = flow_config_json(c.flow_config);
    ordered_json hist = ordered_json::array();
    for (const auto& e : c.history) {
        hist.push_back({{"epoch", e.epoch},
                        {"train_lm_loss", e.train_lm_loss},
                        {"train_flow_loss", e.train_flow_loss},
                        {"val_lm_loss", e.val_lm_loss},
                        {"val_flow_loss", e.val_flow_loss},
                        {"val_loss", e.val_loss},
                        {"max_clipped_norm", e.max_clipped_norm},
                        {"steps", e.steps}});
    }
    h["history"] = hist;
    h["tensor_encoding"] = "float32-le-row-major";
    h["tensors"] = list;
    h["payload_sha256"] = sha256_hex(payload);
    const std::string header = h.dump(1);

    std::string out(kMagic, sizeof kMagic);
    put_u64(out, header.size());
    out += header;
    out += payload;
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw DataError("checkpoint: bad magic (not a kidvoice checkpoint)");
    }
    Reader rd(bytes, sizeof kMagic);
    const std::uint64_t hlen = rd.u(8);
    if (hlen > bytes.size()) throw DataError("checkpoint: truncated header");
    const std::string header = rd.bytes(static_cast<std::size_t>(hlen));
    const std::size_t payload_at = sizeof kMagic + 8 + static_cast<std::size_t>(hlen);

    Checkpoint c;
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
        if (h.at("format") != "kidvoice-checkpoint") throw DataError("checkpoint: unknown format");
        c.version = h.at("version");
        if (c.version != kCheckpointVersion) {
            throw DataError("checkpoint: unsupported version " + std::to_string(c.version));
        }
        if (h.at("payload_sha256").get<std::string>() != sha256_hex(std::string_view(bytes).substr(payload_at))) {
            throw DataError("checkpoint: payload digest mismatch (file corrupted)");
        }
        c.system_id = h.at("system_id");
        const std::string lang = h.at("language");
        if (lang != "all") c.language = parse_language(lang);
        c.seed = h.at("seed");
        c.epoch = h.at("epoch");
        c.val_loss = h.at("val_loss");
        c.corpus_digest = h.at("corpus_digest");
        c.codebook.version = h.at("codebook_version");
        c.lm_config = lm_config_from(h.at("lm_config"));
        c.flow_config = flow_config_from(h.at("flow_config"));
        for (const auto& e : h.at("history")) {
            EpochRecord r;
            r.epoch = e.at("epoch");
            r.train_lm_loss = e.at("train_lm_loss");
            r.train_flow_loss = e.at("train_flow_loss");
            r.val_lm_loss = e.at("val_lm_loss");
            r.val_flow_loss = e.at("val_flow_loss");
            r.val_loss = e.at("val_loss");
            r.max_clipped_norm = e.at("max_clipped_norm");
            r.steps = e.at("steps");
            c.history.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }

    tokenlm::TokenLM lm(c.lm_config);
    flowdec::FlowModel flow(c.flow_config);
    std::map<std::string, MatrixXd> found;
    while (!rd.done()) {
        const auto nlen = static_cast<std::size_t>(rd.u(4));
        const std::string name = rd.bytes(nlen);
        const auto rows = static_cast<Eigen::Index>(rd.u(8));
        const auto cols = static_cast<Eigen::Index>(rd.u(8));
        if (rows < 0 || cols < 0 || static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 4 > bytes.size()) {
            throw DataError("checkpoint: bad tensor shape for " + name);
        }
        MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index col = 0; col < cols; ++col) m(r, col) = rd.f32();
        }
        found[name] = std::move(m);
    }
    auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> MatrixXd {
        auto it = found.find(name);
        if (it == found.end()) throw DataError("checkpoint: missing tensor " + name);
        if (rows >= 0 && (it->second.rows() != rows || it->second.cols() != cols)) {
            throw DataError("checkpoint: tensor " + name + " has the wrong shape");
        }
        return it->second;
    };
    for (size_t i = 0; i < lm.params().specs().size(); ++i) {
        const auto& s = lm.params().specs()[i];
        lm.params().view(static_cast<int>(i)) = take("lm/" + s.name, s.rows, s.cols);
    }
    for (size_t i = 0; i < flow.params().specs().size(); ++i) {
        const auto& s = flow.params().specs()[i];
        flow.params().view(static_cast<int>(i)) = take("flow/" + s.name, s.rows, s.cols);
    }
    c.lm_params = lm.params().data;
    c.flow_params = flow.params().data;
    c.codebook.centroids = take("codebook/centroids", c.lm_config.speech_vocab - 1, c.flow_config.n_mels);
    c.scaler.mean = take("scaler/mean", 1, c.flow_config.n_mels);
    c.scaler.scale = take("scaler/scale", 1, c.flow_config.n_mels);
    c.residual.mean = take("residual/mean", 1, c.flow_config.n_mels);
    c.residual.scale = take("residual/scale", 1, c.flow_config.n_mels);
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) { write_file_atomic(path, serialize_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) {
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

// ---- data -----------------------------------------------------------------

const std::vector<Utterance>& Dataset::split(corpus::Split s) const {
    switch (s) {
        case corpus::Split::train: return train;
        case corpus::Split::val: return val;
        case corpus::Split::test: return test;
    }
    return train;
}

Dataset load_dataset(const std::string& manifest_path, std::optional<Language> language, std::uint64_t seed) {
    Dataset d;
    const std::string dir = corpus::manifest_dir(manifest_path);
    d.corpus = corpus::corpus_config_from_json(read_file(dir + "/" + corpus::kConfigName));
    d.digest = corpus_digest(d.corpus);
    for (auto& item : corpus::load_manifest(manifest_path, d.corpus.alphabets)) {
        if (language && item.language != *language) continue;
        Utterance u;
        u.wave = dsp::read_wav(dir + "/" + item.audio_path);
        u.mel = dsp::mel_spectrogram(u.wave);
        u.text = textfront::encode_text(item.text, item.language);
        const corpus::Split s = item.split;
        u.item = std::move(item);
        (s == corpus::Split::train ? d.train : s == corpus::Split::val ? d.val : d.test).push_back(std::move(u));
    }
    for (auto* part : {&d.train, &d.val, &d.test}) {
        for (auto& u : *part) u.spk = speaker::extract_embedding(speaker_reference(d, u.item, seed));
    }
    return d;
}

dsp::Waveform speaker_reference(const Dataset& data, const corpus::CorpusItem& item, std::uint64_t seed) {
    std::vector<const Utterance*> pool;
    for (const auto& u : data.train) {
        if (u.item.speaker.speaker_id == item.speaker.speaker_id) pool.push_back(&u);
    }
    if (pool.empty()) {
        for (const auto* part : {&data.val, &data.test}) {
            for (const auto& u : *part) {
                if (u.item.speaker.speaker_id == item.speaker.speaker_id) pool.push_back(&u);
            }
        }
    }
    if (pool.empty()) throw DataError("no recordings for speaker " + item.speaker.speaker_id);
    Rng rng(derive_seed(seed, fnv1a64(item.utterance_id), 0x5EF));
    rng.shuffle(pool);
    dsp::Waveform ref;
    ref.sample_rate_hz = pool.front()->wave.sample_rate_hz;
    const auto need = static_cast<std::size_t>(std::ceil(kReferenceMinS * ref.sample_rate_hz));
    for (std::size_t i = 0; ref.samples.size() < need; i = (i + 1) % pool.size()) {
        ref.samples.insert(ref.samples.end(), pool[i]->wave.samples.begin(), pool[i]->wave.samples.end());
    }
    return ref;
}

MatrixXd flow_condition(const MatrixXd& coarse_mel, const MelScaler& scaler, const speaker::SpeakerEmbedding& spk) {
    MatrixXd c(coarse_mel.rows(), coarse_mel.cols() + speaker::kEmbeddingDim);
    c.leftCols(coarse_mel.cols()) = scaler.apply(coarse_mel);
    for (int i = 0; i < speaker::kEmbeddingDim; ++i) c.col(coarse_mel.cols() + i).setConstant(spk[i]);
    return c;
}

// ---- pipeline -------------------------------------------------------------

namespace {

struct Prepared {
    std::vector<tokenlm::Example> examples;
    std::vector<MatrixXd> x1;    // scaled residual frames
    std::vector<MatrixXd> cond;  // flow conditions
};

// Coarse (codebook) frames for every utterance.
std::vector<MatrixXd> coarse_frames(const std::vector<Utterance>& utts, const speechcodec::Codebook& cb) {
    std::vector<MatrixXd> out;
    for (const auto& u : utts) out.push_back(speechcodec::decode_speech(speechcodec::encode_speech(u.mel, cb), cb).frames);
    return out;
}

Prepared prepare(const std::vector<Utterance>& utts, const tokenlm::LMConfig& lmc,
                 const speechcodec::Codebook& cb, const MelScaler& scaler, const MelScaler& residual) {
    Prepared p;
    const std::vector<MatrixXd> coarse = coarse_frames(utts, cb);
    for (std::size_t i = 0; i < utts.size(); ++i) {
        const auto& u = utts[i];
        p.examples.push_back(tokenlm::make_example(lmc, u.text, u.spk, speechcodec::encode_speech(u.mel, cb)));
        p.x1.push_back(residual.apply(u.mel.frames - coarse[i]));
        p.cond.push_back(flow_condition(coarse[i], scaler, u.spk));
    }
    return p;
}

MatrixXd stack_rows(const std::vector<MatrixXd>& parts) {
    Eigen::Index total = 0;
    for (const auto& m : parts) total += m.rows();
    MatrixXd all(total, parts.front().cols());
    total = 0;
    for (const auto& m : parts) {
        all.middleRows(total, m.rows()) = m;
        total += m.rows();
    }
    return all;
}

flowdec::FlowBatch stack(const Prepared& p, const std::vector<std::size_t>& idx) {
    Eigen::Index rows = 0;
    for (std::size_t i : idx) rows += p.x1[i].rows();
    flowdec::FlowBatch b{MatrixXd(rows, p.x1.front().cols()), MatrixXd(rows, p.cond.front().cols())};
    Eigen::Index at = 0;
    for (std::size_t i : idx) {
        b.x1.middleRows(at, p.x1[i].rows()) = p.x1[i];
        b.cond.middleRows(at, p.cond[i].rows()) = p.cond[i];
        at += p.x1[i].rows();
    }
    return b;
}

}  // namespace

Checkpoint train_pipeline(const Dataset& data, const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (data.train.empty()) throw DataError("train: empty split 'train'");
    if (data.val.empty()) throw DataError("train: empty split 'val'");

    std::vector<dsp::MelSpectrogram> mels;
    for (const auto& u : data.train) mels.push_back(u.mel);
    speechcodec::KMeansOptions ko;
    ko.k = cfg.codebook_size;
    ko.seed = derive_seed(cfg.seed, 0xC0DE);
    const speechcodec::Codebook cb = speechcodec::train_codebook(mels, ko);

    std::vector<MatrixXd> fine, resid;
    const std::vector<MatrixXd> coarse = coarse_frames(data.train, cb);
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        fine.push_back(data.train[i].mel.frames);
        resid.push_back(data.train[i].mel.frames - coarse[i]);
    }
    const MelScaler scaler = MelScaler::fit(stack_rows(fine), kConditionMinScale);
    const MelScaler residual = MelScaler::fit(stack_rows(resid), kResidualMinScale);

    tokenlm::LMConfig lmc = cfg.lm;
    lmc.speech_vocab = cb.size() + 1;
    lmc.seed = derive_seed(cfg.seed, 0x11);
    flowdec::FlowConfig fc = cfg.flow;
    fc.n_mels = cb.dim();
    fc.cond_dim = cb.dim() + speaker::kEmbeddingDim;
    fc.seed = derive_seed(cfg.seed, 0x12);

    tokenlm::TokenLM lm(lmc);
    flowdec::FlowModel flow(fc);
    const Prepared tr = prepare(data.train, lmc, cb, scaler, residual);
    const Prepared va = prepare(data.val, lmc, cb, scaler, residual);
    std::vector<std::size_t> all_val(va.x1.size());
    for (std::size_t i = 0; i < all_val.size(); ++i) all_val[i] = i;
    const flowdec::FlowBatch val_flow = stack(va, all_val);

    std::vector<SequenceInfo> infos;
    for (std::size_t i = 0; i < tr.examples.size(); ++i) infos.push_back({i, tr.examples[i].layout.length()});

    const nn::AdamOptions ao{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    nn::Adam lm_opt(lm.params().total(), ao);
    nn::Adam flow_opt(flow.params().total(), ao);

    Checkpoint best;
    best.system_id = cfg.system_id;
    best.language = cfg.language_filter;
    best.lm_config = lmc;
    best.flow_config = fc;
    best.codebook = cb;
    best.scaler = scaler;
    best.residual = residual;
    best.corpus_digest = data.digest;
    best.seed = cfg.seed;
    best.val_loss = std::numeric_limits<double>::infinity();

    long step = 0;
    VectorXd g_lm, g_flow;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        double sum_lm = 0.0, sum_flow = 0.0;
        long count = 0;
        try {
            for (int pass = 0; pass < cfg.passes_per_epoch; ++pass) {
                const auto round = static_cast<std::uint64_t>((epoch - 1) * cfg.passes_per_epoch + pass);
                auto batches = make_batches(infos, cfg.token_budget, cfg.seed, round);
                Rng order(derive_seed(cfg.seed, 0x0DE4, round));
                order.shuffle(batches);
                for (const auto& batch : batches) {
                    std::vector<tokenlm::Example> ex;
                    for (std::size_t i : batch) ex.push_back(tr.examples[i]);
                    sum_lm += tokenlm::loss_and_grad(lm, ex, g_lm);
                    nn::clip_global_norm(g_lm, cfg.grad_clip);
                    lm_opt.step(lm.params().data, g_lm);

                    sum_flow += flowdec::cfm_loss_and_grad(flow, stack(tr, batch), derive_seed(cfg.seed, 0xF10, step),
                                                          g_flow);
                    nn::clip_global_norm(g_flow, cfg.grad_clip);
                    flow_opt.step(flow.params().data, g_flow);
                    rec.max_clipped_norm = std::max({rec.max_clipped_norm, g_lm.norm(), g_flow.norm()});
                    ++step;
                    ++count;
                }
            }
            if (!lm.params().data.allFinite() || !flow.params().data.allFinite()) {
                throw NumericError("non-finite parameters after update");
            }
            rec.train_lm_loss = sum_lm / static_cast<double>(count);
            rec.train_flow_loss = sum_flow / static_cast<double>(count);
            rec.val_lm_loss = tokenlm::batch_loss(lm, va.examples).kl_per_token;
            rec.val_flow_loss = flowdec::cfm_loss(flow, val_flow, derive_seed(cfg.seed, 0x7A1));
        } catch (const NumericError& e) {
            throw NumericError("train: epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                               e.what());
        }
        rec.val_loss = rec.val_lm_loss + rec.val_flow_loss;
        if (!std::isfinite(rec.val_loss)) {
            throw NumericError("train: epoch " + std::to_string(epoch) + ": non-finite validation loss");
        }
        rec.steps = step;
        best.history.push_back(rec);
        if (rec.val_loss < best.val_loss) {
            best.val_loss = rec.val_loss;
            best.epoch = epoch;
            best.lm_params = lm.params().data;
            best.flow_params = flow.params().data;
            nn::round_to_float(best.lm_params);
            nn::round_to_float(best.flow_params);
        }
        if (progress) progress(rec);
    }
    // Stored centroids and scaler are float32 as well.
    for (Eigen::Index i = 0; i < best.codebook.centroids.size(); ++i) {
        best.codebook.centroids.data()[i] = static_cast<float>(best.codebook.centroids.data()[i]);
    }
    for (MelScaler* sc : {&best.scaler, &best.residual}) {
        for (Eigen::Index i = 0; i < sc->mean.size(); ++i) {
            sc->mean[i] = static_cast<float>(sc->mean[i]);
            sc->scale[i] = static_cast<float>(sc->scale[i]);
        }
    }
    return best;
}

Checkpoint train_pipeline(const std::string& manifest_path, const TrainConfig& cfg, const ProgressFn& progress) {
    return train_pipeline(load_dataset(manifest_path, cfg.language_filter, cfg.seed), cfg, progress);
}

}  // namespace kidvoice::train
