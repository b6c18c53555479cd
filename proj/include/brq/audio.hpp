#pragma once

// PCM16 WAV I/O and the fixed acoustic front end: 80-dim log-Mel features at
// 10 ms hop (25 ms periodic Hann window, 512-point DFT, HTK mel scale over
// 0-8000 Hz, natural log with a 1e-10 floor), plus non-learned frame
// stacking that lowers the sequence rate by the stack factor.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "brq/matrix.hpp"

namespace brq {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWinSamples = 400; // 25 ms
inline constexpr int kHopSamples = 160; // 10 ms
inline constexpr int kDftSize = 512;
inline constexpr int kSpectrumBins = kDftSize / 2 + 1; // 257
inline constexpr int kMelBins = 80;
inline constexpr double kLogFloor = 1e-10;

struct AudioBuffer {
    std::vector<double> samples; // amplitudes in [-1, 1]
    int sample_rate = kSampleRate;
};

struct MelSpectrogram {
    Matrix frames; // T x 80, natural-log Mel energies
    int hop_ms = 10;
    int win_ms = 25;
};

struct StackedFeatures {
    Matrix frames; // T' x (80 * stack)
    int stack = 4; // stride equals stack
};

// RIFF/WAVE, PCM 16-bit, mono, 16 kHz only. Samples are int16 / 32768.
AudioBuffer load_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate = kSampleRate);

// 1 + floor((N - 400) / 160) for N >= 400, else 0.
std::size_t mel_frame_count(std::size_t n_samples);

// T x 257 one-sided power spectrum of Hann-windowed frames.
Matrix stft_power(const AudioBuffer& audio);

MelSpectrogram log_mel_spectrogram(const AudioBuffer& audio);

// Concatenates groups of `stack` consecutive rows; the T mod stack tail is
// dropped.
StackedFeatures stack_frames(const MelSpectrogram& mel, int stack = 4);

// Center frequency (Hz) of each triangular Mel filter.
const std::array<double, kMelBins>& mel_filter_centers_hz();

// Feature dump: 8-byte magic "MEL80\0\0\0", two LE uint32 (T, 80), then
// float32 rows (little-endian, row-major).
void write_feature_dump(const std::string& path, const MelSpectrogram& mel);
MelSpectrogram read_feature_dump(const std::string& path);

} // namespace brq
