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

// Drives the kidvoice binary as a subprocess: exit codes, the version
// stanza and byte-level reproducibility of its outputs.

#include "kidvoice/common.hpp"
#include "kidvoice/dsp.hpp"
#include "kidvoice/train.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>

using namespace kidvoice;

namespace {

struct Run {
    int code = -1;
    std::string out;  // stdout and stderr
};

Run kidvoice_cli(const std::string& args) {
    const std::string cmd = std::string(KIDVOICE_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (p == nullptr) return r;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

class Cli : public ::testing::Test {
protected:
    static inline std::unique_ptr<kvtest::TempDir> dir_;
    static std::string path(const std::string& leaf) { return dir_->str(leaf); }

    static void SetUpTestSuite() {
        dir_ = std::make_unique<kvtest::TempDir>("cli");
        ASSERT_EQ(kidvoice_cli("gen-corpus --out " + path("c1")).code, 0);
        ASSERT_EQ(kidvoice_cli("train --manifest " + path("c1/manifest.jsonl") +
                               " --lang ta --epochs 1 --passes 1 --seed 3 --out " + path("a.ckpt"))
                      .code,
                  0);
    }
    static void TearDownTestSuite() { dir_.reset(); }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(kidvoice_cli("").code, 2);
    EXPECT_EQ(kidvoice_cli("frobnicate").code, 2);
    EXPECT_EQ(kidvoice_cli("train --out x.ckpt").code, 2);
    EXPECT_EQ(kidvoice_cli("train --manifest m --out x --lang en").code, 2);
    EXPECT_EQ(kidvoice_cli("gen-corpus --out " + path("p") + " --preset nope").code, 2);
}

TEST_F(Cli, DataErrorsExitThree) {
    EXPECT_EQ(kidvoice_cli("train --manifest " + path("missing.jsonl") + " --out " + path("x.ckpt")).code, 3);
    std::filesystem::create_directories(path("bad"));
    std::filesystem::copy_file(path("c1/corpus_config.json"), path("bad/corpus_config.json"));
    write_file_atomic(path("bad/manifest.jsonl"), "{not json\n");
    const auto r = kidvoice_cli("train --manifest " + path("bad/manifest.jsonl") + " --lang zh --out " + path("x.ckpt"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("manifest.jsonl:1"), std::string::npos) << r.out;
    EXPECT_EQ(kidvoice_cli("synth --ckpt " + path("c1/manifest.jsonl") + " --text a --lang ta --ref " +
                           path("c1/audio/zh_0000.wav") + " --out " + path("x.wav"))
                  .code,
              3);
}

TEST_F(Cli, VersionStanza) {
    const auto r = kidvoice_cli("gen-corpus --out " + path("c2") + " --seed 9");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("kidvoice 0.4.0 gen-corpus seed=9 config=", 0), 0u) << r.out;
}

TEST_F(Cli, CorpusGenerationIsByteStable) {
    ASSERT_EQ(kidvoice_cli("gen-corpus --out " + path("c3")).code, 0);
    for (const auto& e : std::filesystem::recursive_directory_iterator(path("c1"))) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), path("c1"));
        ASSERT_EQ(sha256_hex(read_file(e.path().string())), sha256_hex(read_file(path("c3") + "/" + rel.string())))
            << rel;
    }
}

TEST_F(Cli, TrainingIsByteStable) {
    ASSERT_EQ(kidvoice_cli("train --manifest " + path("c1/manifest.jsonl") +
                           " --lang ta --epochs 1 --passes 1 --seed 3 --out " + path("b.ckpt"))
                  .code,
              0);
    EXPECT_EQ(sha256_hex(read_file(path("a.ckpt"))), sha256_hex(read_file(path("b.ckpt"))));
}

TEST_F(Cli, LanguageFilterRecordedInCheckpoint) {
    const auto c = train::load_checkpoint(path("a.ckpt"));
    ASSERT_TRUE(c.language.has_value());
    EXPECT_EQ(*c.language, Language::ta);
    EXPECT_EQ(c.history.size(), 1u);
}

TEST_F(Cli, SynthesisIsByteStable) {
    // Reference long enough for the speaker encoder.
    const std::string ref = path("ref.wav");
    if (!std::filesystem::exists(ref)) {
        dsp::Waveform w;
        for (const char* f : {"ta_0000.wav", "ta_0001.wav", "ta_0002.wav", "ta_0003.wav"}) {
            const auto part = dsp::read_wav(path("c1/audio/") + f);
            w.samples.insert(w.samples.end(), part.samples.begin(), part.samples.end());
        }
        dsp::write_wav(ref, w);
    }
    const std::string base = "synth --ckpt " + path("a.ckpt") + " --lang ta --ref " + ref + " --seed 4 --temperature 0 --top-k 1 --text ";
    const auto r1 = kidvoice_cli(base + "அஇ --out " + path("s1.wav"));
    const auto r2 = kidvoice_cli(base + "அஇ --out " + path("s2.wav"));
    if (r1.code == 0) {
        EXPECT_EQ(r2.code, 0);
        EXPECT_EQ(read_file(path("s1.wav")), read_file(path("s2.wav")));
    } else {
        // A one-pass model may stop at once; the failure must still repeat.
        EXPECT_EQ(r1.code, r2.code);
        EXPECT_NE(r1.out.find("empty synthesis"), std::string::npos) << r1.out;
    }
    EXPECT_EQ(kidvoice_cli("synth --ckpt " + path("a.ckpt") + " --lang zh --ref " + ref + " --text 一 --out " +
                           path("s3.wav"))
                  .code,
              3);
}

TEST_F(Cli, EvalWritesReport) {
    const auto r = kidvoice_cli("eval --ckpt " + path("a.ckpt") + " --manifest " + path("c1/manifest.jsonl") +
                                " --report " + path("rep"));
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("Tamil (ta)"), std::string::npos) << r.out;
    for (const char* f : {"table.txt", "report.json", "utterances.jsonl"})
        EXPECT_TRUE(std::filesystem::exists(path("rep") + "/" + f)) << f;
}
