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

// Listening-test service: serves blinded trials to raters and appends their
// ratings to a line-delimited file. RatingService holds all logic and speaks
// JSON strings; HttpServer only routes requests to it.

#pragma once

#include "kidvoice/evalkit.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

namespace kidvoice::ratesvc {

inline constexpr int kSchemaVersion = 1;

struct Sample {
    std::string system_id;
    std::string audio_path;  // relative to the study file's directory
};

/// One trial asks for exactly one rating kind. AB trials carry two samples;
/// rated values are stored relative to sample order ("A" = samples[0]) under
/// the comparison id, whatever slot the rater heard them in.
struct Trial {
    std::string trial_id;
    evalkit::RatingKind kind = evalkit::RatingKind::mos_quality;
    std::string utterance_id;
    std::string comparison;  // AB only; defaults to "<a>_vs_<b>"
    std::vector<Sample> samples;

    /// system_id written to RatingRecords for this trial.
    const std::string& record_system() const;
};

struct Study {
    std::string base_dir;
    std::vector<Trial> trials;

    const Trial* find(const std::string& trial_id) const;
};

/// Throws DataError for malformed JSON, unknown kinds, wrong sample counts,
/// duplicate trial ids or duplicate (utterance, system, kind) triples.
Study study_from_json(const std::string& text, const std::string& base_dir);
/// Also requires every referenced WAV to exist.
Study load_study(const std::string& path);

struct ServiceConfig {
    std::string ratings_path;
    std::uint64_t seed = 0;
    int bootstrap_n = 1000;
};

struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class RatingService {
public:
    /// Replays an existing ratings file so duplicates stay rejected across
    /// restarts.
    RatingService(Study study, ServiceConfig cfg);

    Response next_trial(const std::string& rater_id);
    Response audio(const std::string& token) const;
    /// Body: {rater_id, trial_id, kind, value[, timestamp]}. The value of an
    /// AB trial names the slot the rater heard.
    Response post_rating(const std::string& body);
    Response aggregate(const std::string& comparison) const;
    Response progress(const std::string& rater_id) const;

    /// Seeded trial order for one rater (indices into study().trials).
    std::vector<std::size_t> permutation(const std::string& rater_id) const;
    /// True when the rater hears samples[1] in slot A.
    bool swapped(const std::string& rater_id, const std::string& trial_id) const;

    const Study& study() const { return study_; }
    std::vector<evalkit::RatingRecord> records() const;

private:
    using Key = std::tuple<std::string, std::string, std::string, evalkit::RatingKind>;
    static Key key_of(const evalkit::RatingRecord& r);
    std::string token_for(const std::string& rater_id, const std::string& trial_id, int slot) const;
    bool rated(const std::string& rater_id, const Trial& t) const;
    void append(const evalkit::RatingRecord& r);

    Study study_;
    ServiceConfig cfg_;
    mutable std::mutex mu_;
    std::vector<evalkit::RatingRecord> records_;
    std::set<Key> seen_;
    std::set<std::pair<std::string, std::string>> served_;
    std::map<std::string, std::string> tokens_;  // token -> absolute audio path
};

/// Routes the HTTP API onto a RatingService.
class HttpServer {
public:
    explicit HttpServer(RatingService& svc);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds without serving; port 0 picks a free port. Returns the port.
    /// Throws Error(usage) when the port is taken.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    /// Blocks until run() accepts connections.
    void wait_until_ready() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace kidvoice::ratesvc
