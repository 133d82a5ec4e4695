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

#include "kidvoice/common.hpp"
#include "kidvoice/corpus.hpp"
#include "kidvoice/evalkit.hpp"
#include "kidvoice/unicode.hpp"
#include "edit_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

using namespace kidvoice;
using namespace kidvoice::evalkit;

namespace {

// Closed-form Student-t quantiles for 1, 2 and 4 degrees of freedom.
double t_quantile(int dof, double p) {
    switch (dof) {
    case 1: return std::tan(std::numbers::pi * (p - 0.5));
    case 2: return (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));
    case 4: {
        const double a = 4.0 * p * (1.0 - p);
        const double q = std::cos(std::acos(std::sqrt(a)) / 3.0) / std::sqrt(a);
        return 2.0 * std::sqrt(q - 1.0);
    }
    default: throw std::logic_error("no closed form");
    }
}

RatingRecord ab(const std::string& rater, const std::string& value) {
    return {rater, "utt", "x_vs_y", RatingKind::ab_choice, value, ""};
}

std::vector<RatingRecord> ab_file(int a, int b, int np) {
    std::vector<RatingRecord> v;
    for (int i = 0; i < a; ++i) v.push_back(ab("r" + std::to_string(v.size()), "A"));
    for (int i = 0; i < b; ++i) v.push_back(ab("r" + std::to_string(v.size()), "B"));
    for (int i = 0; i < np; ++i) v.push_back(ab("r" + std::to_string(v.size()), "NP"));
    return v;
}

}  // namespace

// ---- CER ------------------------------------------------------------------

TEST(Cer, Examples) {
    EXPECT_EQ(cer("abc", "abc"), 0.0);
    EXPECT_DOUBLE_EQ(cer("abc", "axc"), 100.0 / 3.0);
    EXPECT_DOUBLE_EQ(cer("abc", ""), 100.0);
    EXPECT_DOUBLE_EQ(cer("ab", "abab"), 100.0);
    EXPECT_THROW(cer("", "abc"), DataError);
}

TEST(Cer, CountsScalarsAfterNfc) {
    EXPECT_EQ(cer("\xc3\xa9", "e\xcc\x81"), 0.0);
    EXPECT_DOUBLE_EQ(cer("一二三四", "一二三五"), 25.0);
    EXPECT_DOUBLE_EQ(cer("அஇ", "அ"), 50.0);
}

TEST(Cer, MatchesEditSearchUpToLengthFive) {
    const kvtest::EditSearchOracle oracle(5);
    for (std::size_t a = 1; a < oracle.size(); ++a) {
        for (std::size_t b = 0; b < oracle.size(); ++b) {
            const double want = 100.0 * oracle.distance(a, b) / static_cast<double>(oracle.str(a).size());
            ASSERT_DOUBLE_EQ(cer(oracle.str(a), oracle.str(b)), want) << oracle.str(a) << " / " << oracle.str(b);
        }
    }
}

TEST(Cer, EditBoundProperty) {
    Rng rng(8);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string a, b;
        const auto la = 1 + rng.index(10), lb = rng.index(10);
        for (std::size_t i = 0; i < la; ++i) a.push_back(static_cast<char>('a' + rng.index(4)));
        for (std::size_t i = 0; i < lb; ++i) b.push_back(static_cast<char>('a' + rng.index(4)));
        const double c = cer(a, b);
        ASSERT_GE(c, 0.0);
        ASSERT_LE(c, 100.0 * static_cast<double>(la + lb) / static_cast<double>(la));
    }
}

TEST(Cer, PooledNotAveraged) {
    // "ab" vs "" is 2 edits over 2 characters; "abcdefgh" is exact.
    // Pooled: 2 / 10 = 20 %. Mean of per-utterance CERs would be 50 %.
    CerTally t;
    t.add("ab", "");
    t.add("abcdefgh", "abcdefgh");
    EXPECT_DOUBLE_EQ(t.percent(), 20.0);
    EXPECT_NE(t.percent(), (cer("ab", "") + cer("abcdefgh", "abcdefgh")) / 2.0);
    EXPECT_EQ(format2(t.percent()), "20.00");
}

// ---- oracle recognizer ----------------------------------------------------

TEST(OracleAsr, SilenceIsEmpty) {
    dsp::Waveform w;
    w.samples.assign(4000, 0.0);
    const auto cfg = corpus::default_corpus_config();
    EXPECT_EQ(oracle_asr(w, cfg.alphabets.at(Language::zh), 1.0), "");
}

TEST(OracleAsr, SingleTone) {
    const corpus::AlphabetTable table{Language::zh, {{U'一', 400.0}}};
    EXPECT_EQ(oracle_asr(kvtest::sine(400, 0.05), table, 1.0), "一");
    EXPECT_EQ(oracle_asr(kvtest::sine(600, 0.05), table, 1.5), "一");
    EXPECT_EQ(oracle_asr(kvtest::sine(460, 0.05), table, 1.0), "");
}

TEST(OracleAsr, RepeatedCharactersSurvive) {
    const auto cfg = corpus::default_corpus_config();
    const auto& table = cfg.alphabets.at(Language::zh);
    const corpus::SpeakerProfile adult{"a", corpus::AgeGroup::adult, 1.0, Language::zh};
    for (const std::u32string text : {U"一一", U"一一一一", U"二二三三"}) {
        const auto w = corpus::render_utterance(text, table, adult);
        EXPECT_EQ(oracle_asr(w, table, 1.0), unicode::to_utf8(text));
    }
}

TEST(OracleAsr, IdentityOnGeneratedCorpora) {
    for (const auto& cfg : {corpus::default_corpus_config(), corpus::divergent_corpus_config()}) {
        for (const auto& item : corpus::plan_corpus(cfg)) {
            const auto& table = cfg.alphabets.at(item.language);
            const auto w = corpus::render_utterance(unicode::to_u32(item.text), table, item.speaker);
            ASSERT_EQ(oracle_asr(w, table, item.speaker.pitch_scale), item.text) << item.utterance_id;
        }
    }
}

// ---- MOS ------------------------------------------------------------------

TEST(Mos, ConstantScoresZeroWidth) {
    const std::vector<double> s{4, 4, 4, 4};
    const auto ci = aggregate_mos(s);
    EXPECT_EQ(ci.mean, 4.0);
    EXPECT_EQ(ci.lower, 4.0);
    EXPECT_EQ(ci.upper, 4.0);
    EXPECT_EQ(ci.n, 4u);
}

TEST(Mos, SingleScoreDegenerate) {
    const std::vector<double> s{3};
    const auto ci = aggregate_mos(s);
    EXPECT_EQ(ci.lower, 3.0);
    EXPECT_EQ(ci.upper, 3.0);
    EXPECT_THROW(aggregate_mos(std::vector<double>{}), DataError);
}

TEST(Mos, TwoScoresTableValue) {
    const std::vector<double> s{3, 5};
    const auto ci = aggregate_mos(s);
    EXPECT_DOUBLE_EQ(ci.mean, 4.0);
    // s = sqrt(2), n = 2: half width = t(0.975, 1) * sqrt(2) / sqrt(2).
    EXPECT_NEAR(ci.half_width(), 12.7062, 1e-4);
    EXPECT_NEAR(ci.half_width(), t_quantile(1, 0.975), 1e-9);
}

TEST(Mos, AnalyticIntervals) {
    for (const std::vector<double>& s : {std::vector<double>{3, 5}, {2, 4, 5}, {1, 3, 4, 4, 5}}) {
        const double n = static_cast<double>(s.size());
        double mean = 0;
        for (double x : s) mean += x / n;
        double ss = 0;
        for (double x : s) ss += (x - mean) * (x - mean);
        const double half = t_quantile(static_cast<int>(s.size()) - 1, 0.975) * std::sqrt(ss / (n - 1)) / std::sqrt(n);
        const auto ci = aggregate_mos(s);
        EXPECT_NEAR(ci.mean, mean, 1e-12);
        EXPECT_NEAR(ci.lower, mean - half, 1e-9) << s.size();
        EXPECT_NEAR(ci.upper, mean + half, 1e-9) << s.size();
    }
}

TEST(Mos, RecordFilterAndFormatting) {
    std::vector<RatingRecord> recs;
    // 19 fours and one five: mean 81 / 20 = 4.05.
    for (int i = 0; i < 20; ++i) {
        recs.push_back({"r" + std::to_string(i), "u", "sysA", RatingKind::mos_quality, i == 0 ? "5" : "4", ""});
    }
    recs.push_back({"r0", "u", "sysB", RatingKind::mos_quality, "1", ""});
    recs.push_back({"r0", "u", "sysA", RatingKind::mos_naturalness, "1", ""});
    const auto ci = aggregate_mos(recs, RatingKind::mos_quality, "sysA");
    EXPECT_EQ(ci.n, 20u);
    EXPECT_EQ(format2(ci.mean), "4.05");
}

// ---- AB -------------------------------------------------------------------

TEST(Ab, AllA) {
    const auto r = aggregate_ab(ab_file(10, 0, 0));
    EXPECT_EQ(r.a.mean, 100.0);
    EXPECT_EQ(r.b.mean, 0.0);
    EXPECT_EQ(r.np.mean, 0.0);
    EXPECT_EQ(r.a.lower, r.a.upper);
    EXPECT_EQ(r.b.lower, r.b.upper);
    EXPECT_EQ(r.np.lower, r.np.upper);
}

TEST(Ab, MalayShares) {
    const auto r = aggregate_ab(ab_file(125, 24, 1), 1000, 0);
    EXPECT_EQ(format2(r.a.mean), "83.33");
    EXPECT_EQ(format2(r.b.mean), "16.00");
    EXPECT_EQ(format2(r.np.mean), "0.67");
    EXPECT_EQ(r.n, 150u);
    for (const auto* ci : {&r.a, &r.b, &r.np}) {
        EXPECT_LE(ci->lower, ci->mean);
        EXPECT_GE(ci->upper, ci->mean);
    }
}

TEST(Ab, SharesSumToHundredAndPermutationInvariant) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        auto recs = ab_file(static_cast<int>(rng.index(40)), static_cast<int>(rng.index(40)),
                            1 + static_cast<int>(rng.index(40)));
        const auto r = aggregate_ab(recs, 50, 1);
        EXPECT_NEAR(r.a.mean + r.b.mean + r.np.mean, 100.0, 1e-9);
        rng.shuffle(recs);
        const auto s = aggregate_ab(recs, 50, 1);
        EXPECT_EQ(s.a.mean, r.a.mean);
        EXPECT_EQ(s.b.mean, r.b.mean);
        EXPECT_EQ(s.np.mean, r.np.mean);
    }
}

TEST(Ab, SeededBootstrapIsReproducible) {
    const auto recs = ab_file(30, 15, 5);
    const auto a = aggregate_ab(recs, 500, 9);
    const auto b = aggregate_ab(recs, 500, 9);
    EXPECT_EQ(a.a.lower, b.a.lower);
    EXPECT_EQ(a.np.upper, b.np.upper);
}

TEST(Ab, Errors) {
    EXPECT_THROW(aggregate_ab({}), DataError);
    std::vector<RatingRecord> wrong{{"r", "u", "s", RatingKind::mos_quality, "3", ""}};
    EXPECT_THROW(aggregate_ab(wrong), DataError);
}

// ---- records --------------------------------------------------------------

TEST(Ratings, ScaleBounds) {
    RatingRecord r{"r", "u", "s", RatingKind::mos_quality, "6", ""};
    EXPECT_THROW(validate_record(r), DataError);
    r.value = "0";
    EXPECT_THROW(validate_record(r), DataError);
    r.value = "5";
    EXPECT_NO_THROW(validate_record(r));
    r.kind = RatingKind::intelligibility;
    r.value = "100";
    EXPECT_NO_THROW(validate_record(r));
    r.value = "0";
    EXPECT_NO_THROW(validate_record(r));
    r.value = "101";
    EXPECT_THROW(validate_record(r), DataError);
    r.kind = RatingKind::ab_choice;
    r.value = "NP";
    EXPECT_NO_THROW(validate_record(r));
    r.value = "C";
    EXPECT_THROW(validate_record(r), DataError);
}

TEST(Ratings, JsonLineRoundTrip) {
    for (const RatingRecord& r : {RatingRecord{"r1", "u1", "a_vs_b", RatingKind::ab_choice, "NP", "2026-01-01T00:00:00Z"},
                                  RatingRecord{"r2", "u2", "sys", RatingKind::intelligibility, "73", "t"}}) {
        EXPECT_EQ(record_from_json_line(record_to_json_line(r)), r);
    }
    EXPECT_EQ(record_to_json_line({"r", "u", "s", RatingKind::mos_naturalness, "4", "t"}),
              R"({"rater_id":"r","utterance_id":"u","system_id":"s","kind":"mos_naturalness","value":4,"timestamp":"t"})");
}

TEST(Ratings, FileReading) {
    kvtest::TempDir d("ratings");
    EXPECT_TRUE(read_ratings(d.str("missing.jsonl")).empty());
    std::ofstream(d.str("r.jsonl")) << record_to_json_line({"r", "u", "s", RatingKind::mos_quality, "3", ""}) << "\n\n"
                                   << R"({"rater_id":"r","utterance_id":"u","system_id":"s","kind":"mos_quality","value":9})"
                                   << "\n";
    try {
        read_ratings(d.str("r.jsonl"));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("r.jsonl:3"), std::string::npos) << e.what();
    }
}

TEST(RatingKinds, NamesRoundTrip) {
    for (auto k : {RatingKind::ab_choice, RatingKind::mos_quality, RatingKind::mos_naturalness,
                   RatingKind::intelligibility}) {
        EXPECT_EQ(parse_rating_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_rating_kind("mos"), DataError);
}

// ---- reports --------------------------------------------------------------

TEST(Report, TableLayoutAndTwoDecimals) {
    SystemReport s;
    s.system_id = "kidvoice";
    LanguageResult zh;
    zh.language = Language::zh;
    zh.tally.edits = 4;
    zh.tally.reference_chars = 100;
    zh.utterances = 30;
    LanguageResult ma;
    ma.language = Language::ma;
    ma.tally.reference_chars = 10;
    ma.human_intelligibility = ConfidenceInterval{88.5, 80.0, 97.0, 30};
    s.languages = {zh, ma};
    const std::string t = render_table({s});
    EXPECT_NE(t.find("Mandarin (zh)"), std::string::npos);
    EXPECT_NE(t.find("Malay (ma)"), std::string::npos);
    EXPECT_NE(t.find("Objective Evaluation: CER (%)"), std::string::npos);
    EXPECT_NE(t.find("4.00"), std::string::npos);
    EXPECT_NE(t.find("0.00"), std::string::npos);
    EXPECT_NE(t.find("Subjective Evaluation: Human"), std::string::npos);
    EXPECT_NE(t.find("88.50"), std::string::npos);
    EXPECT_EQ(t.find("Tamil"), std::string::npos);

    const std::string j = render_json({s}, "test", 0);
    EXPECT_NE(j.find("\"cer_percent\": \"4.00\""), std::string::npos);
    EXPECT_NE(j.find("\"schema_version\": 1"), std::string::npos);
}

TEST(Report, Format2) {
    EXPECT_EQ(format2(4.0), "4.00");
    EXPECT_EQ(format2(4.05), "4.05");
    EXPECT_EQ(format2(100.0 * 125 / 150), "83.33");
    EXPECT_EQ(format2(-0.001), "0.00");
}
