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

#include "kidvoice/ratesvc.hpp"

#include "kidvoice/common.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <numeric>

namespace kidvoice::ratesvc {

namespace fs = std::filesystem;
using evalkit::RatingKind;
using evalkit::RatingRecord;
using Json = nlohmann::ordered_json;

const std::string& Trial::record_system() const {
    return kind == RatingKind::ab_choice ? comparison : samples.front().system_id;
}

const Trial* Study::find(const std::string& trial_id) const {
    for (const auto& t : trials) {
        if (t.trial_id == trial_id) return &t;
    }
    return nullptr;
}

Study study_from_json(const std::string& text, const std::string& base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("study: malformed JSON: ") + e.what());
    }
    Study s;
    s.base_dir = base_dir;
    std::set<std::string> ids;
    std::set<std::tuple<std::string, std::string, RatingKind>> triples;
    try {
        for (const auto& jt : j.at("trials")) {
            Trial t;
            t.trial_id = jt.at("trial_id").get<std::string>();
            t.kind = evalkit::parse_rating_kind(jt.at("kind").get<std::string>());
            t.utterance_id = jt.at("utterance_id").get<std::string>();
            for (const auto& js : jt.at("samples")) {
                t.samples.push_back({js.at("system_id").get<std::string>(), js.at("audio").get<std::string>()});
            }
            const std::size_t want = t.kind == RatingKind::ab_choice ? 2 : 1;
            if (t.samples.size() != want) {
                throw DataError("study: trial " + t.trial_id + " needs " + std::to_string(want) + " sample(s)");
            }
            if (t.kind == RatingKind::ab_choice) {
                if (t.samples[0].system_id == t.samples[1].system_id) {
                    throw DataError("study: trial " + t.trial_id + " compares a system with itself");
                }
                t.comparison = jt.value("comparison", t.samples[0].system_id + "_vs_" + t.samples[1].system_id);
            }
            if (t.trial_id.empty() || !ids.insert(t.trial_id).second) {
                throw DataError("study: duplicate or empty trial id '" + t.trial_id + "'");
            }
            if (!triples.emplace(t.utterance_id, t.record_system(), t.kind).second) {
                throw DataError("study: trial " + t.trial_id + " repeats utterance, system and kind of another trial");
            }
            s.trials.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("study: ") + e.what());
    }
    if (s.trials.empty()) throw DataError("study: no trials");
    return s;
}

Study load_study(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw DataError("study: cannot read " + path);
    }
    Study s = study_from_json(text, fs::absolute(path).parent_path().string());
    for (const auto& t : s.trials) {
        for (const auto& smp : t.samples) {
            if (!fs::is_regular_file(fs::path(s.base_dir) / smp.audio_path)) {
                throw DataError("study: trial " + t.trial_id + ": missing audio " + smp.audio_path);
            }
        }
    }
    return s;
}

namespace {

Response json_response(int status, Json j) {
    Json out;
    out["schema_version"] = kSchemaVersion;
    for (auto& [k, v] : j.items()) out[k] = v;
    return {status, out.dump(), "application/json"};
}

Response error_response(int status, const std::string& msg) { return json_response(status, Json{{"error", msg}}); }

Json interval_json(const evalkit::ConfidenceInterval& ci) {
    return Json{{"mean", ci.mean}, {"lower", ci.lower}, {"upper", ci.upper}, {"n", ci.n}};
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// A crash between write and fsync can leave a partial last line. It was
// never acknowledged, so it is dropped.
void drop_torn_tail(const std::string& path) {
    std::error_code ec;
    if (!fs::exists(path, ec)) return;
    const std::string bytes = read_file(path);
    if (bytes.empty() || bytes.back() == '\n') return;
    const auto keep = bytes.rfind('\n');
    fs::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

}  // namespace

RatingService::RatingService(Study study, ServiceConfig cfg) : study_(std::move(study)), cfg_(std::move(cfg)) {
    if (cfg_.ratings_path.empty()) throw DataError("ratesvc: no ratings path");
    drop_torn_tail(cfg_.ratings_path);
    records_ = evalkit::read_ratings(cfg_.ratings_path);
    for (const auto& r : records_) seen_.insert(key_of(r));
}

RatingService::Key RatingService::key_of(const RatingRecord& r) {
    return {r.rater_id, r.utterance_id, r.system_id, r.kind};
}

std::vector<std::size_t> RatingService::permutation(const std::string& rater_id) const {
    std::vector<std::size_t> p(study_.trials.size());
    std::iota(p.begin(), p.end(), 0);
    Rng rng(derive_seed(cfg_.seed, fnv1a64(rater_id), 0x7E1A));
    rng.shuffle(p);
    return p;
}

bool RatingService::swapped(const std::string& rater_id, const std::string& trial_id) const {
    Rng rng(derive_seed(cfg_.seed, fnv1a64(rater_id), fnv1a64(trial_id)));
    return rng.uniform() < 0.5;
}

std::string RatingService::token_for(const std::string& rater_id, const std::string& trial_id, int slot) const {
    const std::string material =
        std::to_string(cfg_.seed) + '\n' + rater_id + '\n' + trial_id + '\n' + std::to_string(slot);
    return sha256_hex(material).substr(0, 32);
}

bool RatingService::rated(const std::string& rater_id, const Trial& t) const {
    return seen_.count({rater_id, t.utterance_id, t.record_system(), t.kind}) > 0;
}

Response RatingService::next_trial(const std::string& rater_id) {
    if (rater_id.empty()) return error_response(400, "empty rater id");
    std::lock_guard lock(mu_);
    const auto order = permutation(rater_id);
    std::size_t done = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const Trial& t = study_.trials[order[pos]];
        if (rated(rater_id, t)) {
            ++done;
            continue;
        }
        served_.emplace(rater_id, t.trial_id);
        const bool swap = t.kind == RatingKind::ab_choice && swapped(rater_id, t.trial_id);
        Json urls = Json::array();
        for (std::size_t slot = 0; slot < t.samples.size(); ++slot) {
            const auto& smp = t.samples[swap ? 1 - slot : slot];
            const auto token = token_for(rater_id, t.trial_id, static_cast<int>(slot));
            tokens_[token] = (fs::path(study_.base_dir) / smp.audio_path).string();
            urls.push_back("/api/audio/" + token + ".wav");
        }
        Json scale;
        switch (t.kind) {
        case RatingKind::ab_choice: scale = Json{{"choices", {"A", "B", "NP"}}}; break;
        case RatingKind::intelligibility: scale = Json{{"min", 0}, {"max", 100}}; break;
        default: scale = Json{{"min", 1}, {"max", 5}}; break;
        }
        return json_response(200, Json{{"done", false},
                                       {"trial_id", t.trial_id},
                                       {"kind", std::string(evalkit::to_string(t.kind))},
                                       {"audio_urls", urls},
                                       {"scale", scale},
                                       {"completed", done},
                                       {"total", order.size()}});
    }
    return json_response(200, Json{{"done", true}, {"completed", done}, {"total", order.size()}});
}

Response RatingService::audio(const std::string& token) const {
    std::string path;
    {
        std::lock_guard lock(mu_);
        auto it = tokens_.find(token);
        if (it == tokens_.end()) return error_response(404, "unknown audio token");
        path = it->second;
    }
    try {
        return {200, read_file(path), "audio/wav"};
    } catch (const std::exception&) {
        return error_response(500, "audio unavailable");
    }
}

void RatingService::append(const RatingRecord& r) {
    const std::string line = evalkit::record_to_json_line(r) + "\n";
    const int fd = ::open(cfg_.ratings_path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw DataError("ratesvc: cannot open " + cfg_.ratings_path + ": " + std::strerror(errno));
    std::size_t off = 0;
    while (off < line.size()) {
        const auto n = ::write(fd, line.data() + off, line.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            const std::string msg = std::strerror(errno);
            ::close(fd);
            throw DataError("ratesvc: write failed: " + msg);
        }
        off += static_cast<std::size_t>(n);
    }
    const bool synced = ::fsync(fd) == 0;
    ::close(fd);
    if (!synced) throw DataError("ratesvc: fsync failed on " + cfg_.ratings_path);
}

Response RatingService::post_rating(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
        return error_response(400, "malformed JSON");
    }
    if (!j.is_object()) return error_response(400, "expected a JSON object");
    RatingRecord r;
    std::string trial_id;
    try {
        r.rater_id = j.at("rater_id").get<std::string>();
        trial_id = j.at("trial_id").get<std::string>();
        r.kind = evalkit::parse_rating_kind(j.at("kind").get<std::string>());
        const auto& v = j.at("value");
        if (v.is_string()) {
            r.value = v.get<std::string>();
        } else if (v.is_number_integer()) {
            r.value = std::to_string(v.get<long>());
        } else {
            return error_response(400, "value must be a string or an integer");
        }
        r.timestamp = j.contains("timestamp") ? j.at("timestamp").get<std::string>() : utc_now();
    } catch (const nlohmann::json::exception& e) {
        return error_response(400, std::string("bad rating: ") + e.what());
    } catch (const DataError& e) {
        return error_response(400, e.what());
    }

    std::lock_guard lock(mu_);
    const Trial* t = study_.find(trial_id);
    if (t == nullptr) return error_response(404, "unknown trial " + trial_id);
    if (r.kind != t->kind) {
        return error_response(400, "trial " + trial_id + " expects " + std::string(evalkit::to_string(t->kind)));
    }
    if (served_.count({r.rater_id, trial_id}) == 0) {
        return error_response(409, "trial " + trial_id + " was not served to " + r.rater_id);
    }
    r.utterance_id = t->utterance_id;
    r.system_id = t->record_system();
    try {
        evalkit::validate_record(r);
    } catch (const DataError& e) {
        return error_response(400, e.what());
    }
    // Slot letters become sample order on disk.
    if (r.kind == RatingKind::ab_choice && r.value != "NP" && swapped(r.rater_id, trial_id)) {
        r.value = r.value == "A" ? "B" : "A";
    }
    if (seen_.count(key_of(r)) > 0) return error_response(409, "duplicate rating");
    try {
        append(r);
    } catch (const DataError& e) {
        return error_response(500, e.what());
    }
    seen_.insert(key_of(r));
    records_.push_back(r);
    return json_response(200, Json{{"ack", true}, {"index", records_.size() - 1}});
}

std::vector<RatingRecord> RatingService::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

Response RatingService::aggregate(const std::string& comparison) const {
    if (comparison.empty()) return error_response(400, "missing comparison");
    const auto all = records();
    bool is_ab = false;
    bool is_system = false;
    for (const auto& t : study_.trials) {
        if (t.kind == RatingKind::ab_choice && t.comparison == comparison) is_ab = true;
        if (t.kind != RatingKind::ab_choice && t.samples.front().system_id == comparison) is_system = true;
    }
    if (!is_ab && !is_system) return error_response(404, "unknown comparison " + comparison);

    Json out{{"comparison", comparison}};
    if (is_ab) {
        std::vector<RatingRecord> ab;
        for (const auto& r : all) {
            if (r.kind == RatingKind::ab_choice && r.system_id == comparison) ab.push_back(r);
        }
        if (ab.empty()) {
            out["ab_choice"] = nullptr;
        } else {
            const auto res = evalkit::aggregate_ab(ab, cfg_.bootstrap_n, cfg_.seed);
            out["ab_choice"] = Json{{"A", interval_json(res.a)},
                                    {"B", interval_json(res.b)},
                                    {"NP", interval_json(res.np)},
                                    {"n", res.n}};
        }
    }
    if (is_system) {
        for (auto kind : {RatingKind::mos_quality, RatingKind::mos_naturalness, RatingKind::intelligibility}) {
            const std::string name(evalkit::to_string(kind));
            bool any = false;
            for (const auto& r : all) any = any || (r.kind == kind && r.system_id == comparison);
            out[name] = any ? interval_json(evalkit::aggregate_mos(all, kind, comparison)) : Json(nullptr);
        }
    }
    return json_response(200, out);
}

Response RatingService::progress(const std::string& rater_id) const {
    std::lock_guard lock(mu_);
    std::size_t done = 0;
    for (const auto& t : study_.trials) done += rated(rater_id, t) ? 1 : 0;
    return json_response(200, Json{{"rater_id", rater_id},
                                   {"completed", done},
                                   {"total", study_.trials.size()},
                                   {"remaining", study_.trials.size() - done}});
}

// ---- HTTP -----------------------------------------------------------------

struct HttpServer::Impl {
    httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(RatingService& svc) : impl_(std::make_unique<Impl>()) {
    auto& s = impl_->server;
    // The library default sets SO_REUSEPORT, which lets a second server
    // share a busy port silently. Address reuse alone still allows quick
    // restarts.
    s.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    s.Get(R"(/api/rater/([^/]+)/next-trial)", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.next_trial(req.matches[1]));
    });
    s.Get(R"(/api/audio/([0-9a-f]+)\.wav)", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.audio(req.matches[1]));
    });
    s.Post("/api/ratings", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.post_rating(req.body));
    });
    s.Get("/api/aggregate", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.aggregate(req.get_param_value("comparison")));
    });
    s.Get(R"(/api/progress/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.progress(req.matches[1]));
    });
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            res.set_content(Json{{"schema_version", kSchemaVersion}, {"error", "not found"}}.dump(),
                            "application/json");
        }
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    auto& s = impl_->server;
    if (port == 0) {
        const int p = s.bind_to_any_port(host);
        if (p < 0) throw Error(Error::Kind::usage, "serve: cannot bind " + host);
        return p;
    }
    if (!s.bind_to_port(host, port)) {
        throw Error(Error::Kind::usage, "serve: port " + std::to_string(port) + " unavailable");
    }
    return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace kidvoice::ratesvc
