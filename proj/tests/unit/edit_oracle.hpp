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

// Edit distance by breadth-first search over single-character edits: an
// oracle that shares nothing with the dynamic-programming implementation.
// Strings over {a, b, c} up to a maximum length are numbered densely;
// distances are computed from sources that are canonical under symbol
// relabeling and extended to all pairs through the relabeling.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

namespace kvtest {

class EditSearchOracle {
public:
    explicit EditSearchOracle(int max_len) : max_len_(max_len) {
        offset_.push_back(0);
        std::size_t width = 1;
        for (int l = 0; l <= max_len_; ++l) {
            offset_.push_back(offset_.back() + width);
            width *= 3;
        }
        const std::size_t n = offset_.back();
        strings_.reserve(n);
        for (int l = 0; l <= max_len_; ++l) {
            const std::size_t count = offset_[l + 1] - offset_[l];
            for (std::size_t v = 0; v < count; ++v) {
                std::string s(static_cast<std::size_t>(l), 'a');
                std::size_t x = v;
                for (int i = 0; i < l; ++i) {
                    s[i] = static_cast<char>('a' + x % 3);
                    x /= 3;
                }
                strings_.push_back(s);
            }
        }
        static constexpr std::array<std::array<int, 3>, 6> perms = {
            {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
        for (const auto& p : perms) {
            std::vector<std::uint32_t> map(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::string s = strings_[i];
                for (char& c : s) c = static_cast<char>('a' + p[c - 'a']);
                map[i] = static_cast<std::uint32_t>(id(s));
            }
            relabel_.push_back(std::move(map));
        }
        source_row_.assign(n, -1);
        for (std::size_t i = 0; i < n; ++i) {
            if (canonical(strings_[i])) {
                source_row_[i] = static_cast<int>(dist_.size());
                dist_.push_back(bfs(i));
            }
        }
        canon_perm_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < relabel_.size(); ++p) {
                if (source_row_[relabel_[p][i]] >= 0) {
                    canon_perm_[i] = static_cast<std::uint8_t>(p);
                    break;
                }
            }
        }
    }

    std::size_t size() const { return strings_.size(); }
    const std::string& str(std::size_t i) const { return strings_[i]; }

    int distance(std::size_t a, std::size_t b) const {
        const auto& map = relabel_[canon_perm_[a]];
        return dist_[static_cast<std::size_t>(source_row_[map[a]])][map[b]];
    }

private:
    std::size_t id(const std::string& s) const {
        std::size_t v = 0;
        for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) v = v * 3 + static_cast<std::size_t>(s[i] - 'a');
        return offset_[s.size()] + v;
    }

    // First occurrences appear in the order a, b, c.
    static bool canonical(const std::string& s) {
        char next = 'a';
        for (char c : s) {
            if (c > next) return false;
            if (c == next) ++next;
        }
        return true;
    }

    std::vector<std::uint8_t> bfs(std::size_t src) const {
        std::vector<std::uint8_t> d(strings_.size(), 0xFF);
        std::deque<std::size_t> q{src};
        d[src] = 0;
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop_front();
            const std::string& s = strings_[u];
            auto visit = [&](const std::string& t) {
                const std::size_t v = id(t);
                if (d[v] == 0xFF) {
                    d[v] = static_cast<std::uint8_t>(d[u] + 1);
                    q.push_back(v);
                }
            };
            for (std::size_t i = 0; i < s.size(); ++i) {
                std::string t = s;
                t.erase(i, 1);
                visit(t);
                for (char c : {'a', 'b', 'c'}) {
                    if (c == s[i]) continue;
                    t = s;
                    t[i] = c;
                    visit(t);
                }
            }
            if (static_cast<int>(s.size()) < max_len_) {
                for (std::size_t i = 0; i <= s.size(); ++i) {
                    for (char c : {'a', 'b', 'c'}) {
                        std::string t = s;
                        t.insert(t.begin() + static_cast<std::ptrdiff_t>(i), c);
                        visit(t);
                    }
                }
            }
        }
        return d;
    }

    int max_len_;
    std::vector<std::size_t> offset_;
    std::vector<std::string> strings_;
    std::vector<std::vector<std::uint32_t>> relabel_;
    std::vector<int> source_row_;
    std::vector<std::uint8_t> canon_perm_;
    std::vector<std::vector<std::uint8_t>> dist_;
};

}  // namespace kvtest
