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

// Signal-processing core: WAV I/O, STFT, mel analysis, Griffin-Lim
// vocoding, autocorrelation pitch tracking and mel-cepstral distortion.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace kidvoice::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr double kMelFloor = 1e-10;

struct Waveform {
    std::vector<double> samples;
    int sample_rate_hz = kSampleRate;

    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

struct MelConfig {
    int n_fft = 512;
    int hop = 128;
    int n_mels = 40;
    double fmin = 0.0;
    double fmax = 8000.0;
    int sample_rate_hz = kSampleRate;
};

/// Log-mel frames, one row per frame. Entries are natural-log energies
/// floored at log(kMelFloor).
struct MelSpectrogram {
    Eigen::MatrixXd frames;  // F x n_mels
    MelConfig config;

    int num_frames() const { return static_cast<int>(frames.rows()); }
    int n_mels() const { return config.n_mels; }
};

using ComplexSpectrogram = Eigen::MatrixXcd;  // F x (n_fft/2 + 1)

// ---- WAV ------------------------------------------------------------------

/// PCM 16-bit mono little-endian. Samples are clamped to [-1, 1] and
/// quantized as round(x * 32767).
std::string encode_wav(const Waveform& w);
Waveform decode_wav(const std::string& bytes);
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

// ---- analysis -------------------------------------------------------------

/// Periodic Hann window.
std::vector<double> hann_window(int n);

/// Hann-windowed, centered STFT with reflect padding of n_fft/2 on each
/// side. F = 1 + floor(len / hop).
ComplexSpectrogram stft(const Waveform& w, int n_fft, int hop);

/// HTK-scale triangular filterbank, n_mels x (n_fft/2 + 1), unnormalized.
Eigen::MatrixXd mel_filterbank(const MelConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg = {});

/// Log-mel of an already computed power spectrogram (F x bins).
MelSpectrogram mel_from_power(const Eigen::MatrixXd& power, const MelConfig& cfg);

// ---- vocoding -------------------------------------------------------------

struct GriffinLimOptions {
    int iterations = 60;
    std::uint64_t seed = 0;
    double peak = 0.9;
};

/// Non-negative least-squares inversion of the mel filterbank, returning a
/// linear magnitude spectrogram (F x bins). The log floor is subtracted
/// before inversion so an all-floor mel maps to exact silence.
Eigen::MatrixXd mel_to_magnitude(const MelSpectrogram& m);

/// Phase recovery from a magnitude spectrogram. If `convergence` is non-null
/// it receives the spectral convergence ||(|STFT(x_k)| - target)|| / ||target||
/// after each iteration.
Waveform griffin_lim_magnitude(const Eigen::MatrixXd& magnitude, const MelConfig& cfg,
                               const GriffinLimOptions& opts,
                               std::vector<double>* convergence = nullptr);

Waveform griffin_lim(const MelSpectrogram& m, const GriffinLimOptions& opts = {});

/// Output length of the vocoder for F frames: hop * (F - 1) samples.
inline std::size_t vocoder_output_length(int frames, int hop) {
    return frames <= 1 ? 0 : static_cast<std::size_t>(hop) * static_cast<std::size_t>(frames - 1);
}

/// Mel to waveform. Griffin-Lim is the built-in implementation.
class Vocoder {
public:
    virtual ~Vocoder() = default;
    virtual Waveform synthesize(const MelSpectrogram& m, std::uint64_t seed) const = 0;
    virtual std::string name() const = 0;
};

class GriffinLimVocoder final : public Vocoder {
public:
    explicit GriffinLimVocoder(int iterations = 60) : iterations_(iterations) {}
    Waveform synthesize(const MelSpectrogram& m, std::uint64_t seed) const override;
    std::string name() const override { return "griffin-lim"; }

private:
    int iterations_;
};

// ---- pitch ----------------------------------------------------------------

struct PitchOptions {
    double frame_ms = 32.0;
    double hop_ms = 16.0;
    double fmin_hz = 80.0;
    double fmax_hz = 2000.0;
    double voicing_threshold = 0.5;
};

/// Per-frame normalized autocorrelation pitch in Hz; 0 marks unvoiced frames.
std::vector<double> estimate_pitch(const Waveform& w, const PitchOptions& opts = {});

double median_voiced_pitch(const std::vector<double>& pitch);

// ---- distortion -----------------------------------------------------------

/// Orthonormal DCT-II of one log-mel frame.
Eigen::VectorXd mel_cepstrum(const Eigen::VectorXd& log_mel);

/// 10*sqrt(2)/ln(10) times the mean Euclidean distance between cepstra c1..,
/// over the first min(Fa, Fb) frames.
double mel_cepstral_distortion(const MelSpectrogram& a, const MelSpectrogram& b);

}  // namespace kidvoice::dsp
