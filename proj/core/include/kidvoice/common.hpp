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

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kidvoice {

inline constexpr const char* kVersion = "0.4.0";

/// Base class for every error raised by the library. The kind drives the
/// command-line exit code.
class Error : public std::runtime_error {
public:
    enum class Kind { usage, data, numeric };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Malformed input files, invalid configurations, out-of-range values.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Kind::data, what) {}
};

/// Non-finite activations, losses, or gradients.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(Kind::numeric, what) {}
};

/// SplitMix64 finalizer; used to derive independent stream seeds from a
/// base seed and integer tags.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return mix64(base ^ mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t tag2) {
    return derive_seed(derive_seed(base, tag), tag2);
}

/// Seeded generator. The engine is std::mt19937_64 (fully specified by the
/// standard); the real-valued conversions are written out here because the
/// standard distributions are implementation-defined, and artifacts must be
/// byte-identical across toolchains.
/// FNV-1a, for turning identifiers into seed tags.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return static_cast<std::size_t>(v % n);
    }

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Raw 32-byte SHA-256.
std::string sha256_raw(std::string_view bytes);

std::string read_file(const std::string& path);

/// Writes to `path` through a temporary sibling and rename, so readers never
/// observe a partially written file.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace kidvoice
