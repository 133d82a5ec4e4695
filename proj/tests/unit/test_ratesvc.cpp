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
#include "kidvoice/dsp.hpp"
#include "kidvoice/evalkit.hpp"
#include "kidvoice/ratesvc.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <thread>

using namespace kidvoice;
using namespace kidvoice::ratesvc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Six trials: two AB, two quality, one naturalness, one intelligibility.
class StudyDir {
public:
    StudyDir() {
        dsp::write_wav(dir_.str("a1.wav"), kvtest::sine(300, 0.1));
        dsp::write_wav(dir_.str("b1.wav"), kvtest::sine(500, 0.1));
        dsp::write_wav(dir_.str("a2.wav"), kvtest::sine(320, 0.1));
        dsp::write_wav(dir_.str("b2.wav"), kvtest::sine(520, 0.1));
        write_file_atomic(dir_.str("study.json"), study_text().dump());
    }
    static json study_text() {
        return json{{"trials",
                     {{{"trial_id", "ab1"}, {"kind", "ab_choice"}, {"utterance_id", "u1"},
                       {"samples", {{{"system_id", "sysA"}, {"audio", "a1.wav"}}, {{"system_id", "sysB"}, {"audio", "b1.wav"}}}}},
                      {{"trial_id", "ab2"}, {"kind", "ab_choice"}, {"utterance_id", "u2"},
                       {"samples", {{{"system_id", "sysA"}, {"audio", "a2.wav"}}, {{"system_id", "sysB"}, {"audio", "b2.wav"}}}}},
                      {{"trial_id", "q1"}, {"kind", "mos_quality"}, {"utterance_id", "u1"},
                       {"samples", {{{"system_id", "sysA"}, {"audio", "a1.wav"}}}}},
                      {{"trial_id", "q2"}, {"kind", "mos_quality"}, {"utterance_id", "u2"},
                       {"samples", {{{"system_id", "sysA"}, {"audio", "a2.wav"}}}}},
                      {{"trial_id", "n1"}, {"kind", "mos_naturalness"}, {"utterance_id", "u1"},
                       {"samples", {{{"system_id", "sysA"}, {"audio", "a1.wav"}}}}},
                      {{"trial_id", "i1"}, {"kind", "intelligibility"}, {"utterance_id", "u1"},
                       {"samples", {{{"system_id", "sysB"}, {"audio", "b1.wav"}}}}}}}};
    }
    std::string study() const { return dir_.str("study.json"); }
    std::string ratings() const { return dir_.str("ratings.jsonl"); }
    std::string str(const std::string& leaf) const { return dir_.str(leaf); }

private:
    kvtest::TempDir dir_{"ratesvc"};
};

ServiceConfig config(const StudyDir& d) { return {d.ratings(), 42, 200}; }

json body(const Response& r) { return json::parse(r.body); }

std::string rating(const std::string& rater, const std::string& trial, const std::string& kind, const json& value) {
    return json{{"rater_id", rater}, {"trial_id", trial}, {"kind", kind}, {"value", value}}.dump();
}

// Serves the next trial and answers it with `pick(kind)`. Returns the trial id.
std::string answer_next(RatingService& s, const std::string& rater, const std::function<json(const std::string&)>& pick) {
    const auto t = body(s.next_trial(rater));
    if (t.at("done").get<bool>()) return "";
    const std::string kind = t.at("kind");
    const auto r = s.post_rating(rating(rater, t.at("trial_id"), kind, pick(kind)));
    EXPECT_EQ(r.status, 200) << r.body;
    return t.at("trial_id");
}

json default_pick(const std::string& kind) {
    if (kind == "ab_choice") return "A";
    if (kind == "intelligibility") return 80;
    return 4;
}

void expect_error(const std::string& text) {
    EXPECT_THROW(study_from_json(text, "."), DataError) << text;
}

}  // namespace

// ---- study ----------------------------------------------------------------

TEST(Study, Parses) {
    const StudyDir d;
    const auto s = load_study(d.study());
    ASSERT_EQ(s.trials.size(), 6u);
    EXPECT_EQ(s.find("ab1")->comparison, "sysA_vs_sysB");
    EXPECT_EQ(s.find("ab1")->record_system(), "sysA_vs_sysB");
    EXPECT_EQ(s.find("q1")->record_system(), "sysA");
    EXPECT_EQ(s.find("zz"), nullptr);
}

TEST(Study, Rejections) {
    auto base = StudyDir::study_text();
    expect_error("{");
    expect_error("{}");
    auto dup = base;
    dup["trials"][1]["trial_id"] = "ab1";
    expect_error(dup.dump());
    auto one = base;
    one["trials"][0]["samples"].erase(1);
    expect_error(one.dump());
    auto two = base;
    two["trials"][2]["samples"].push_back({{"system_id", "sysB"}, {"audio", "b1.wav"}});
    expect_error(two.dump());
    auto kind = base;
    kind["trials"][2]["kind"] = "mos";
    expect_error(kind.dump());
    auto triple = base;
    triple["trials"][3]["utterance_id"] = "u1";  // q1 and q2 both (u1, sysA, quality)
    expect_error(triple.dump());
}

TEST(Study, MissingAudio) {
    const StudyDir d;
    fs::remove(d.str("b2.wav"));
    EXPECT_THROW(load_study(d.study()), DataError);
}

// ---- trial order and blinding ---------------------------------------------

TEST(Order, SeededPermutationPerRater) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    auto p = s.permutation("alice");
    EXPECT_EQ(p, s.permutation("alice"));
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> want(6);
    std::iota(want.begin(), want.end(), 0);
    EXPECT_EQ(sorted, want);
    int differing = 0;
    for (int i = 0; i < 20; ++i) differing += s.permutation("rater" + std::to_string(i)) != p;
    EXPECT_GT(differing, 15);
}

TEST(Order, ServesInPermutationOrderUntilDone) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    const auto p = s.permutation("bob");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto t = body(s.next_trial("bob"));
        EXPECT_EQ(t.at("trial_id"), s.study().trials[p[i]].trial_id);
        EXPECT_EQ(t.at("completed"), i);
        EXPECT_EQ(t.at("total"), 6);
        EXPECT_EQ(t.at("schema_version"), 1);
        // Asking again before rating repeats the same trial.
        EXPECT_EQ(body(s.next_trial("bob")).at("trial_id"), t.at("trial_id"));
        answer_next(s, "bob", default_pick);
    }
    const auto done = body(s.next_trial("bob"));
    EXPECT_TRUE(done.at("done").get<bool>());
    EXPECT_EQ(done.at("completed"), 6);
    EXPECT_EQ(body(s.progress("bob")).at("remaining"), 0);
    EXPECT_EQ(body(s.progress("carol")).at("remaining"), 6);
}

TEST(Blinding, UrlsRevealNothing) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    for (int i = 0; i < 6; ++i) {
        auto j = body(s.next_trial("dave"));
        const auto urls = j.at("audio_urls");
        j.erase("audio_urls");
        for (const std::string leak : {"sys", "a1.wav", "b1.wav", "a2.wav", "b2.wav", "u1", "u2"})
            EXPECT_EQ(j.dump().find(leak), std::string::npos) << leak << " in " << j.dump();
        for (const auto& url : urls) {
            const std::string u = url;
            EXPECT_TRUE(std::regex_match(u, std::regex(R"(/api/audio/[0-9a-f]{32}\.wav)"))) << u;
            const auto token = u.substr(std::string("/api/audio/").size(), 32);
            const auto a = s.audio(token);
            EXPECT_EQ(a.status, 200);
            EXPECT_EQ(a.content_type, "audio/wav");
        }
        answer_next(s, "dave", default_pick);
    }
    EXPECT_EQ(s.audio("00000000000000000000000000000000").status, 404);
}

TEST(Blinding, SwapPlacesSamplesInSlots) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    int swaps = 0;
    for (int i = 0; i < 40; ++i) {
        const std::string rater = "r" + std::to_string(i);
        const bool sw = s.swapped(rater, "ab1");
        swaps += sw;
        // Walk to ab1 and check which file sits in slot A.
        for (;;) {
            const auto t = body(s.next_trial(rater));
            if (t.at("trial_id") == "ab1") {
                const std::string url = t.at("audio_urls")[0];
                const auto a = s.audio(url.substr(11, 32));
                EXPECT_EQ(a.body, read_file(d.str(sw ? "b1.wav" : "a1.wav")));
                break;
            }
            answer_next(s, rater, default_pick);
        }
    }
    EXPECT_GT(swaps, 5);
    EXPECT_LT(swaps, 35);
}

TEST(Blinding, SwappedAnswerStoredInSampleOrder) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    std::string rater;
    for (int i = 0; rater.empty(); ++i)
        if (s.swapped("x" + std::to_string(i), "ab2")) rater = "x" + std::to_string(i);
    while (body(s.next_trial(rater)).at("trial_id") != "ab2") answer_next(s, rater, default_pick);
    ASSERT_EQ(s.post_rating(rating(rater, "ab2", "ab_choice", "A")).status, 200);
    bool found = false;
    for (const auto& r : s.records()) {
        if (r.rater_id == rater && r.utterance_id == "u2" && r.kind == evalkit::RatingKind::ab_choice) {
            EXPECT_EQ(r.value, "B");
            EXPECT_EQ(r.system_id, "sysA_vs_sysB");
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

// ---- submission checks ----------------------------------------------------

TEST(Submit, Rejections) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    EXPECT_EQ(s.post_rating("not json").status, 400);
    EXPECT_EQ(s.post_rating("[1]").status, 400);
    EXPECT_EQ(s.post_rating(rating("eve", "nope", "mos_quality", 3)).status, 404);
    EXPECT_EQ(s.post_rating(rating("eve", "q1", "mos_quality", 3)).status, 409);  // not served
    std::string id;
    std::string kind;
    for (;;) {
        const auto t = body(s.next_trial("eve"));
        if (t.at("kind") == "mos_quality") {
            id = t.at("trial_id");
            break;
        }
        answer_next(s, "eve", default_pick);
    }
    EXPECT_EQ(s.post_rating(rating("eve", id, "mos_quality", 6)).status, 400);
    EXPECT_EQ(s.post_rating(rating("eve", id, "mos_quality", 0)).status, 400);
    EXPECT_EQ(s.post_rating(rating("eve", id, "intelligibility", 50)).status, 400);  // wrong kind
    EXPECT_EQ(s.post_rating(rating("eve", id, "mos_quality", 2.5)).status, 400);
    const auto ok = s.post_rating(rating("eve", id, "mos_quality", 5));
    EXPECT_EQ(ok.status, 200);
    EXPECT_TRUE(body(ok).at("ack").get<bool>());
    EXPECT_EQ(s.post_rating(rating("eve", id, "mos_quality", 4)).status, 409);  // duplicate
    EXPECT_EQ(s.next_trial("").status, 400);
}

// ---- persistence ----------------------------------------------------------

TEST(Durability, RestartKeepsRecordsAndDuplicates) {
    const StudyDir d;
    std::vector<evalkit::RatingRecord> before;
    std::string first;
    {
        RatingService s(load_study(d.study()), config(d));
        first = answer_next(s, "fay", default_pick);
        answer_next(s, "fay", default_pick);
        answer_next(s, "gus", default_pick);
        before = s.records();
    }
    EXPECT_EQ(evalkit::read_ratings(d.ratings()), before);
    RatingService s(load_study(d.study()), config(d));
    EXPECT_EQ(s.records(), before);
    EXPECT_EQ(body(s.progress("fay")).at("completed"), 2);
    EXPECT_NE(body(s.next_trial("fay")).at("trial_id"), first);
    const auto* t = s.study().find(first);
    EXPECT_EQ(s.post_rating(rating("fay", first, std::string(evalkit::to_string(t->kind)), default_pick(std::string(evalkit::to_string(t->kind))))).status, 409);
}

TEST(Durability, TornTailIsDropped) {
    const StudyDir d;
    {
        RatingService s(load_study(d.study()), config(d));
        answer_next(s, "hal", default_pick);
    }
    const auto good = read_file(d.ratings());
    {
        std::ofstream f(d.ratings(), std::ios::app);
        f << R"({"rater_id":"hal","utterance_id":"u)";
    }
    RatingService s(load_study(d.study()), config(d));
    EXPECT_EQ(read_file(d.ratings()), good);
    EXPECT_EQ(s.records().size(), 1u);
    answer_next(s, "hal", default_pick);
    EXPECT_EQ(evalkit::read_ratings(d.ratings()).size(), 2u);
}

// ---- aggregates -----------------------------------------------------------

TEST(Aggregate, MatchesOfflineComputation) {
    const StudyDir d;
    RatingService s(load_study(d.study()), config(d));
    Rng rng(1);
    for (int i = 0; i < 12; ++i) {
        const std::string rater = "p" + std::to_string(i);
        while (!answer_next(s, rater, [&](const std::string& kind) -> json {
                    if (kind == "ab_choice") return std::vector<std::string>{"A", "B", "NP"}[rng.index(3)];
                    if (kind == "intelligibility") return static_cast<int>(rng.index(101));
                    return 1 + static_cast<int>(rng.index(5));
                }).empty()) {
        }
    }
    const auto offline = evalkit::read_ratings(d.ratings());
    ASSERT_EQ(offline.size(), 72u);

    std::vector<evalkit::RatingRecord> ab;
    for (const auto& r : offline)
        if (r.kind == evalkit::RatingKind::ab_choice) ab.push_back(r);
    const auto want = evalkit::aggregate_ab(ab, 200, 42);
    const auto got = body(s.aggregate("sysA_vs_sysB")).at("ab_choice");
    EXPECT_EQ(got.at("n"), 24);
    EXPECT_EQ(got.at("A").at("mean").get<double>(), want.a.mean);
    EXPECT_EQ(got.at("A").at("lower").get<double>(), want.a.lower);
    EXPECT_EQ(got.at("NP").at("upper").get<double>(), want.np.upper);

    const auto q = evalkit::aggregate_mos(offline, evalkit::RatingKind::mos_quality, "sysA");
    const auto sys = body(s.aggregate("sysA"));
    EXPECT_EQ(sys.at("mos_quality").at("mean").get<double>(), q.mean);
    EXPECT_EQ(sys.at("mos_quality").at("upper").get<double>(), q.upper);
    EXPECT_EQ(sys.at("mos_quality").at("n"), 24);
    EXPECT_TRUE(sys.at("intelligibility").is_null());
    EXPECT_FALSE(body(s.aggregate("sysB")).at("intelligibility").is_null());
    EXPECT_EQ(s.aggregate("nobody").status, 404);
    EXPECT_EQ(s.aggregate("").status, 400);
}

// ---- HTTP -----------------------------------------------------------------

TEST(Http, EndToEnd) {
    const StudyDir d;
    RatingService svc(load_study(d.study()), config(d));
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    std::thread t([&] { server.run(); });
    server.wait_until_ready();

    httplib::Client c("127.0.0.1", port);
    auto next = c.Get("/api/rater/ivy/next-trial");
    ASSERT_TRUE(next);
    EXPECT_EQ(next->status, 200);
    const auto trial = json::parse(next->body);
    const std::string url = trial.at("audio_urls")[0];
    auto wav = c.Get(url);
    ASSERT_TRUE(wav);
    EXPECT_EQ(wav->status, 200);
    EXPECT_EQ(wav->get_header_value("Content-Type"), "audio/wav");
    EXPECT_NO_THROW(dsp::decode_wav(wav->body));

    const std::string kind = trial.at("kind");
    auto post = c.Post("/api/ratings", rating("ivy", trial.at("trial_id"), kind, default_pick(kind)), "application/json");
    ASSERT_TRUE(post);
    EXPECT_EQ(post->status, 200);
    auto again = c.Post("/api/ratings", rating("ivy", trial.at("trial_id"), kind, default_pick(kind)), "application/json");
    EXPECT_EQ(again->status, 409);

    auto prog = c.Get("/api/progress/ivy");
    EXPECT_EQ(json::parse(prog->body).at("completed"), 1);
    auto agg = c.Get("/api/aggregate?comparison=sysA_vs_sysB");
    EXPECT_EQ(agg->status, 200);
    EXPECT_EQ(json::parse(agg->body).at("schema_version"), 1);
    EXPECT_EQ(c.Get("/api/nothing")->status, 404);

    // A second server cannot take the same port.
    HttpServer other(svc);
    EXPECT_THROW(other.bind("127.0.0.1", port), Error);

    server.stop();
    t.join();
}
