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

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kidvoice::dsp {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}

std::uint16_t get_u16(const std::string& b, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                      (static_cast<unsigned char>(b[at + 1]) << 8));
}

}  // namespace

std::string encode_wav(const Waveform& w) {
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (double x : w.samples) {
        if (!std::isfinite(x)) throw NumericError("encode_wav: non-finite sample");
        const double c = std::clamp(x, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<std::uint16_t>(q));
    }
    return out;
}

Waveform decode_wav(const std::string& b) {
    if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
        throw DataError("not a RIFF/WAVE file");
    }
    std::size_t pos = 12;
    int channels = 0, bits = 0, format = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (pos + 8 <= b.size()) {
        const std::string id = b.substr(pos, 4);
        const std::uint32_t len = get_u32(b, pos + 4);
        const std::size_t body = pos + 8;
        if (body + len > b.size()) throw DataError("truncated WAV chunk '" + id + "'");
        if (id == "fmt ") {
            if (len < 16) throw DataError("short WAV fmt chunk");
            format = get_u16(b, body);
            channels = get_u16(b, body + 2);
            rate = get_u32(b, body + 4);
            bits = get_u16(b, body + 14);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw DataError("WAV data chunk before fmt chunk");
            if (format != 1 || channels != 1 || bits != 16) {
                throw DataError("unsupported WAV encoding (need PCM 16-bit mono)");
            }
            Waveform w;
            w.sample_rate_hz = static_cast<int>(rate);
            const std::size_t n = len / 2;
            w.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto q = static_cast<std::int16_t>(get_u16(b, body + 2 * i));
                w.samples[i] = q / 32767.0;
            }
            return w;
        }
        pos = body + len + (len & 1);
    }
    throw DataError("WAV file has no data chunk");
}

void write_wav(const std::string& path, const Waveform& w) { write_file_atomic(path, encode_wav(w)); }

Waveform read_wav(const std::string& path) {
    try {
        return decode_wav(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace kidvoice::dsp
