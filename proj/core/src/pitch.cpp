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

namespace kidvoice::dsp {

namespace {

double frame_pitch(const double* x, int n, int lag_min, int lag_max, int sample_rate,
                   double threshold) {
    double energy = 0.0;
    for (int i = 0; i < n; ++i) energy += x[i] * x[i];
    if (energy < 1e-12 * n) return 0.0;

    // prefix[i] = sum of x^2 over [0, i)
    std::vector<double> prefix(static_cast<size_t>(n) + 1, 0.0);
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];

    const int lo = std::max(1, lag_min - 1);
    const int hi = std::min(n - 2, lag_max + 1);
    if (hi <= lo + 1) return 0.0;
    std::vector<double> r(static_cast<size_t>(hi) + 1, 0.0);
    for (int lag = lo; lag <= hi; ++lag) {
        double cross = 0.0;
        for (int i = 0; i + lag < n; ++i) cross += x[i] * x[i + lag];
        const double e1 = prefix[n - lag];
        const double e2 = prefix[n] - prefix[lag];
        const double denom = std::sqrt(e1 * e2);
        r[lag] = denom > 0.0 ? cross / denom : 0.0;
    }

    const int first = std::max(lo + 1, lag_min);
    const int last = std::min(hi - 1, lag_max);
    double peak = -1.0;
    for (int lag = first; lag <= last; ++lag) peak = std::max(peak, r[lag]);
    if (peak < threshold) return 0.0;

    // Earliest local maximum close to the global one avoids octave errors at
    // multiples of the true period.
    for (int lag = first; lag <= last; ++lag) {
        if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * peak && r[lag] >= threshold) {
            const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
            const double denom = a - 2.0 * b + c;
            double shift = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
            shift = std::clamp(shift, -0.5, 0.5);
            return sample_rate / (lag + shift);
        }
    }
    return 0.0;
}

}  // namespace

std::vector<double> estimate_pitch(const Waveform& w, const PitchOptions& opts) {
    if (w.sample_rate_hz < 8000) throw DataError("estimate_pitch: sample rate must be >= 8000 Hz");
    const int sr = w.sample_rate_hz;
    const int frame = std::max(4, static_cast<int>(std::lround(sr * opts.frame_ms / 1000.0)));
    const int hop = std::max(1, static_cast<int>(std::lround(sr * opts.hop_ms / 1000.0)));
    const int lag_min = std::max(2, static_cast<int>(std::floor(sr / opts.fmax_hz)));
    const int lag_max = std::min(frame - 2, static_cast<int>(std::ceil(sr / opts.fmin_hz)));

    const auto len = static_cast<long>(w.samples.size());
    std::vector<double> out;
    if (len == 0) return out;
    const long frames = len < frame ? 1 : 1 + (len - frame) / hop;
    out.reserve(static_cast<size_t>(frames));
    std::vector<double> buf(static_cast<size_t>(frame), 0.0);
    for (long f = 0; f < frames; ++f) {
        const long start = f * hop;
        for (int i = 0; i < frame; ++i) {
            const long at = start + i;
            buf[i] = at < len ? w.samples[static_cast<size_t>(at)] : 0.0;
        }
        out.push_back(frame_pitch(buf.data(), frame, lag_min, lag_max, sr, opts.voicing_threshold));
    }
    return out;
}

double median_voiced_pitch(const std::vector<double>& pitch) {
    std::vector<double> voiced;
    for (double p : pitch) {
        if (p > 0.0) voiced.push_back(p);
    }
    if (voiced.empty()) return 0.0;
    std::sort(voiced.begin(), voiced.end());
    const size_t mid = voiced.size() / 2;
    return voiced.size() % 2 == 1 ? voiced[mid] : 0.5 * (voiced[mid - 1] + voiced[mid]);
}

}  // namespace kidvoice::dsp
