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

// kidvoice command-line driver: gen-corpus, train, synth, eval, serve.

#include "kidvoice/corpus.hpp"
#include "kidvoice/evaluate.hpp"
#include "kidvoice/ratesvc.hpp"
#include "kidvoice/synth.hpp"
#include "kidvoice/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace kidvoice;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// One line per invocation: enough to rerun it and to tell two runs apart.
void stanza(const std::string& command, std::uint64_t seed, const Json& config) {
    std::cout << "kidvoice " << kVersion << " " << command << " seed=" << seed
              << " config=" << sha256_hex(config.dump()).substr(0, 16) << std::endl;
}

std::optional<Language> parse_lang_option(const std::string& s) {
    if (s == "all") return std::nullopt;
    return parse_language(s);
}

// ---- gen-corpus -----------------------------------------------------------

struct GenArgs {
    std::string config;
    std::string preset = "default";
    std::string out;
    std::optional<std::uint64_t> seed;
};

int run_gen_corpus(const GenArgs& a) {
    corpus::CorpusConfig cfg;
    if (!a.config.empty()) {
        cfg = corpus::corpus_config_from_json(read_file(a.config));
    } else if (a.preset == "default") {
        cfg = corpus::default_corpus_config();
    } else {
        cfg = corpus::divergent_corpus_config();
    }
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    stanza("gen-corpus", cfg.seed, Json::parse(corpus::corpus_config_to_json(cfg)));
    const auto g = corpus::generate_corpus(cfg, a.out);
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& it : g.items) ++counts[static_cast<int>(it.split)];
    std::cout << "wrote " << g.items.size() << " utterances (train " << counts[0] << ", val " << counts[1]
              << ", test " << counts[2] << ") to " << g.manifest_path << "\n";
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    std::string lang;
    std::string out;
    train::TrainConfig cfg;
};

std::string per_language_path(const std::string& out, Language lang) {
    fs::path p(out);
    const std::string ext = p.has_extension() ? p.extension().string() : ".ckpt";
    return (p.parent_path() / (p.stem().string() + "_" + std::string(to_string(lang)) + ext)).string();
}

Json train_config_json(const train::TrainConfig& c, const std::string& lang) {
    return Json{{"lang", lang},
                {"epochs", c.epochs},
                {"token_budget", c.token_budget},
                {"passes_per_epoch", c.passes_per_epoch},
                {"lr", c.lr},
                {"grad_clip", c.grad_clip},
                {"codebook_size", c.codebook_size},
                {"system_id", c.system_id}};
}

int run_train(TrainArgs a) {
    a.cfg.validate();
    stanza("train", a.cfg.seed, train_config_json(a.cfg, a.lang.empty() ? "each" : a.lang));
    std::vector<std::pair<std::optional<Language>, std::string>> jobs;
    if (a.lang.empty()) {
        const auto cfg = corpus::corpus_config_from_json(
            read_file((fs::path(corpus::manifest_dir(a.manifest)) / corpus::kConfigName).string()));
        for (Language l : cfg.languages()) jobs.emplace_back(l, per_language_path(a.out, l));
    } else {
        jobs.emplace_back(parse_lang_option(a.lang), a.out);
    }
    for (const auto& [lang, path] : jobs) {
        train::TrainConfig cfg = a.cfg;
        cfg.language_filter = lang;
        const std::string name = lang ? std::string(to_string(*lang)) : "all";
        const auto data = train::load_dataset(a.manifest, lang, cfg.seed);
        const auto ckpt = train::train_pipeline(data, cfg, [&](const train::EpochRecord& r) {
            std::cout << "[" << name << "] epoch " << r.epoch << " steps " << r.steps << " train_lm "
                      << evalkit::format2(r.train_lm_loss) << " val_loss " << r.val_loss << "\n";
        });
        train::save_checkpoint(ckpt, path);
        std::cout << "[" << name << "] best epoch " << ckpt.epoch << " val_loss " << ckpt.val_loss << " -> " << path
                  << "\n";
    }
    return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string ckpt;
    std::string text;
    std::string lang;
    std::string ref;
    std::string out;
    std::string batch;
    std::uint64_t seed = 0;
    synth::SynthOptions opts;
};

int run_synth(const SynthArgs& a) {
    const auto ckpt = train::load_checkpoint(a.ckpt);
    stanza("synth", a.seed,
           Json{{"ckpt_digest", ckpt.corpus_digest},
                {"temperature", a.opts.temperature},
                {"top_k", a.opts.top_k},
                {"griffin_lim_iterations", a.opts.griffin_lim_iterations}});
    if (!a.batch.empty()) {
        std::vector<synth::SynthRequest> reqs;
        std::ifstream in(a.batch);
        if (!in) throw DataError("synth: cannot read " + a.batch);
        const fs::path base = fs::path(a.batch).parent_path();
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
                synth::SynthRequest r;
                r.utterance_id = j.at("utterance_id").get<std::string>();
                r.text = j.at("text").get<std::string>();
                r.language = parse_language(j.at("language").get<std::string>());
                r.ref_audio_path = (base / j.at("reference").get<std::string>()).string();
                r.seed = j.value("seed", a.seed);
                reqs.push_back(std::move(r));
            } catch (const nlohmann::json::exception& e) {
                throw DataError("synth: " + a.batch + ": " + e.what());
            }
        }
        const auto res = synth::synthesize_batch(ckpt, reqs, a.out, a.opts);
        std::size_t failed = 0;
        for (const auto& r : res) failed += r.error.empty() ? 0 : 1;
        std::cout << "synthesized " << res.size() - failed << "/" << res.size() << " into " << a.out << "\n";
        return failed == 0 ? 0 : kExitData;
    }
    if (a.text.empty() || a.lang.empty() || a.ref.empty()) {
        throw Error(Error::Kind::usage, "synth: --text, --lang and --ref are required without --batch");
    }
    const auto wave = synth::synthesize(ckpt, a.text, parse_language(a.lang), dsp::read_wav(a.ref), a.seed, a.opts);
    dsp::write_wav(a.out, wave);
    std::cout << "wrote " << a.out << " (" << wave.samples.size() << " samples)\n";
    return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::vector<std::string> ckpts;
    std::string manifest;
    std::string ratings;
    std::string report;
    std::string split = "test";
};

int run_eval(EvalArgs a, evalkit::EvalOptions opts) {
    opts.split = corpus::parse_split(a.split);
    std::vector<train::Checkpoint> ckpts;
    for (const auto& p : a.ckpts) ckpts.push_back(train::load_checkpoint(p));
    Json cfg{{"split", a.split}, {"checkpoints", Json::array()}};
    for (const auto& c : ckpts) cfg["checkpoints"].push_back(c.system_id + ":" + c.corpus_digest);
    stanza("eval", opts.seed, cfg);
    const auto data = train::load_dataset(a.manifest, std::nullopt, opts.seed);
    for (const auto& c : ckpts) {
        if (c.corpus_digest != data.digest) {
            std::cerr << "kidvoice: warning: checkpoint " << c.system_id << " was trained on another corpus\n";
        }
    }
    auto ev = evalkit::evaluate_system(ckpts, data, opts);
    if (!a.ratings.empty()) evalkit::attach_ratings(ev, evalkit::read_ratings(a.ratings), data);
    evalkit::write_report(a.report, ev, opts);
    std::cout << evalkit::render_table(ev.systems);
    return 0;
}

// ---- serve ----------------------------------------------------------------

ratesvc::HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server != nullptr) g_server->stop();
}

struct ServeArgs {
    std::string study;
    std::string ratings;
    std::string host = "127.0.0.1";
    int port = 8080;
    ratesvc::ServiceConfig cfg;
};

int run_serve(ServeArgs a) {
    a.cfg.ratings_path = a.ratings;
    auto study = ratesvc::load_study(a.study);
    stanza("serve", a.cfg.seed, Json{{"study", sha256_hex(read_file(a.study)).substr(0, 16)}, {"port", a.port}});
    ratesvc::RatingService svc(std::move(study), a.cfg);
    ratesvc::HttpServer server(svc);
    const int port = server.bind(a.host, a.port);
    std::cout << "listening on http://" << a.host << ":" << port << std::endl;
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.run();
    g_server = nullptr;
    return 0;
}

int exit_code(const Error& e) {
    switch (e.kind()) {
    case Error::Kind::usage: return kExitUsage;
    case Error::Kind::numeric: return kExitNumeric;
    default: return kExitData;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilingual child-voice TTS toolkit"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-corpus", "Render the synthetic tone corpus and its manifest");
    c_gen->add_option("--config", gen.config, "Corpus config JSON (default: built-in preset)")->check(CLI::ExistingFile);
    c_gen->add_option("--preset", gen.preset, "Built-in config when --config is absent")
        ->check(CLI::IsMember({"default", "divergent"}));
    c_gen->add_option("--out", gen.out, "Output directory")->required();
    c_gen->add_option("--seed", gen.seed, "Overrides the config seed");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train codebook, token LM and flow decoder");
    c_train->add_option("--manifest", tr.manifest, "Corpus manifest")->required();
    c_train->add_option("--lang", tr.lang, "zh, ma, ta or all; omitted: one checkpoint per language")
        ->check(CLI::IsMember({"zh", "ma", "ta", "all"}));
    c_train->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
    c_train->add_option("--seed", tr.cfg.seed, "Seed")->capture_default_str();
    c_train->add_option("--out", tr.out, "Checkpoint path (per-language runs insert _<lang>)")->required();
    c_train->add_option("--passes", tr.cfg.passes_per_epoch, "Shuffled passes per epoch")->capture_default_str();
    c_train->add_option("--token-budget", tr.cfg.token_budget, "Tokens per batch")->capture_default_str();
    c_train->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
    c_train->add_option("--system-id", tr.cfg.system_id, "System name used in reports")->capture_default_str();

    SynthArgs sy;
    auto* c_synth = app.add_subcommand("synth", "Synthesize speech from text");
    c_synth->add_option("--ckpt", sy.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    c_synth->add_option("--text", sy.text, "UTF-8 text");
    c_synth->add_option("--lang", sy.lang, "Language id")->check(CLI::IsMember({"zh", "ma", "ta"}));
    c_synth->add_option("--ref", sy.ref, "Reference WAV of the target speaker")->check(CLI::ExistingFile);
    c_synth->add_option("--seed", sy.seed, "Seed")->capture_default_str();
    c_synth->add_option("--out", sy.out, "Output WAV (directory with --batch)")->required();
    c_synth->add_option("--batch", sy.batch, "JSONL requests: utterance_id, text, language, reference[, seed]")
        ->check(CLI::ExistingFile);
    c_synth->add_option("--temperature", sy.opts.temperature, "Sampling temperature")->capture_default_str();
    c_synth->add_option("--top-k", sy.opts.top_k, "Top-k sampling")->capture_default_str();

    EvalArgs ev;
    evalkit::EvalOptions eopts;
    auto* c_eval = app.add_subcommand("eval", "Synthesize a split and score it with the oracle recognizer");
    c_eval->add_option("--ckpt", ev.ckpts, "Checkpoint(s); repeat for several languages or systems")
        ->required()
        ->check(CLI::ExistingFile);
    c_eval->add_option("--manifest", ev.manifest, "Corpus manifest")->required();
    c_eval->add_option("--ratings", ev.ratings, "Ratings JSONL for the human row");
    c_eval->add_option("--report", ev.report, "Report directory")->required();
    c_eval->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    c_eval->add_option("--seed", eopts.seed, "Seed")->capture_default_str();

    ServeArgs sv;
    auto* c_serve = app.add_subcommand("serve", "Run the listening-test service");
    c_serve->add_option("--study", sv.study, "Study manifest JSON")->required()->check(CLI::ExistingFile);
    c_serve->add_option("--ratings", sv.ratings, "Append-only ratings JSONL")->required();
    c_serve->add_option("--port", sv.port, "TCP port (0 picks one)")->capture_default_str();
    c_serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
    c_serve->add_option("--seed", sv.cfg.seed, "Seed for trial order and slot assignment")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*c_gen) return run_gen_corpus(gen);
        if (*c_train) return run_train(tr);
        if (*c_synth) return run_synth(sy);
        if (*c_eval) return run_eval(ev, eopts);
        if (*c_serve) return run_serve(sv);
    } catch (const Error& e) {
        std::cerr << "kidvoice: error: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "kidvoice: error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
