#include "brq/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "brq/error.hpp"

namespace brq {

namespace {

// ─── little-endian byte helpers ─────────────────────────────────────────────

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open file: " + path);
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const unsigned char* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open file for writing: " + path);
    }
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        fail(ErrorKind::IoError, "short write: " + path);
    }
}

// ─── DFT and window tables ──────────────────────────────────────────────────

struct DftTables {
    std::array<double, kDftSize> cos_t{};
    std::array<double, kDftSize> sin_t{};
    std::array<double, kWinSamples> hann{};
};

const DftTables& dft_tables() {
    static const DftTables tables = [] {
        DftTables t;
        constexpr double two_pi = 6.283185307179586476925286766559;
        for (int i = 0; i < kDftSize; ++i) {
            const double theta = two_pi * i / kDftSize;
            t.cos_t[i] = std::cos(theta);
            t.sin_t[i] = std::sin(theta);
        }
        for (int n = 0; n < kWinSamples; ++n) {
            t.hann[n] = 0.5 - 0.5 * std::cos(two_pi * n / kWinSamples);
        }
        return t;
    }();
    return tables;
}

// ─── HTK mel filterbank ─────────────────────────────────────────────────────

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilter {
    int first_bin = 0;
    std::vector<double> weights;
};

struct MelBank {
    std::array<MelFilter, kMelBins> filters;
    std::array<double, kMelBins> centers_hz{};
};

const MelBank& mel_bank() {
    static const MelBank bank = [] {
        MelBank b;
        const double mel_max = hz_to_mel(kSampleRate / 2.0);
        std::array<double, kMelBins + 2> edge_hz{};
        for (int i = 0; i < kMelBins + 2; ++i) {
            edge_hz[i] = mel_to_hz(mel_max * i / (kMelBins + 1));
        }
        const double bin_hz = static_cast<double>(kSampleRate) / kDftSize;
        for (int m = 0; m < kMelBins; ++m) {
            const double lo = edge_hz[m];
            const double center = edge_hz[m + 1];
            const double hi = edge_hz[m + 2];
            b.centers_hz[m] = center;
            MelFilter filter;
            int first = -1;
            for (int k = 0; k < kSpectrumBins; ++k) {
                const double f = k * bin_hz;
                double w = 0.0;
                if (f > lo && f < hi) {
                    w = (f <= center) ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
                }
                if (w > 0.0) {
                    if (first < 0) {
                        first = k;
                    }
                    filter.weights.push_back(w);
                } else if (first >= 0) {
                    break; // triangles are contiguous in k
                }
            }
            filter.first_bin = std::max(first, 0);
            b.filters[m] = std::move(filter);
        }
        return b;
    }();
    return bank;
}

} // namespace

// ─── WAV I/O ────────────────────────────────────────────────────────────────

AudioBuffer load_wav(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        fail(ErrorKind::CorruptFile, "not a RIFF/WAVE file: " + path);
    }

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data_ptr = nullptr;
    std::size_t data_size = 0;

    std::size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + off;
        const std::uint32_t chunk_size = read_u32(hdr + 4);
        const std::size_t body = off + 8;
        if (body + chunk_size > bytes.size()) {
            fail(ErrorKind::CorruptFile, "truncated chunk in " + path);
        }
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_size < 16) {
                fail(ErrorKind::CorruptFile, "short fmt chunk in " + path);
            }
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_size = chunk_size;
        }
        off = body + chunk_size + (chunk_size & 1); // chunks are 2-byte aligned
    }

    if (!have_fmt || data_ptr == nullptr) {
        fail(ErrorKind::CorruptFile, "missing fmt or data chunk in " + path);
    }
    if (format != 1 || channels != 1 || rate != static_cast<std::uint32_t>(kSampleRate) ||
        bits != 16) {
        fail(ErrorKind::UnsupportedFormat,
             "need PCM16 mono 16 kHz, got format=" + std::to_string(format) +
                 " channels=" + std::to_string(channels) + " rate=" + std::to_string(rate) +
                 " bits=" + std::to_string(bits) + ": " + path);
    }
    if (data_size % 2 != 0) {
        fail(ErrorKind::CorruptFile, "odd data chunk size in " + path);
    }

    AudioBuffer audio;
    audio.sample_rate = kSampleRate;
    audio.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        const std::int16_t s =
            static_cast<std::int16_t>(read_u16(data_ptr + 2 * i));
        audio.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return audio;
}

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::vector<unsigned char> out;
    out.reserve(44 + samples.size() * 2);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);

    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    append_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    append_u32(out, 16);
    append_u16(out, 1); // PCM
    append_u16(out, 1); // mono
    append_u32(out, static_cast<std::uint32_t>(sample_rate));
    append_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
    append_u16(out, 2);  // block align
    append_u16(out, 16); // bits
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    append_u32(out, data_bytes);
    for (double s : samples) {
        const long v = std::lround(s * 32768.0);
        const std::int16_t q =
            static_cast<std::int16_t>(std::clamp(v, -32768L, 32767L));
        append_u16(out, static_cast<std::uint16_t>(q));
    }
    write_file(path, out.data(), out.size());
}

// ─── Front end ──────────────────────────────────────────────────────────────

std::size_t mel_frame_count(std::size_t n_samples) {
    if (n_samples < static_cast<std::size_t>(kWinSamples)) {
        return 0;
    }
    return 1 + (n_samples - kWinSamples) / kHopSamples;
}

Matrix stft_power(const AudioBuffer& audio) {
    const std::size_t frames = mel_frame_count(audio.samples.size());
    if (frames == 0) {
        fail(ErrorKind::TooShort,
             "need at least " + std::to_string(kWinSamples) + " samples, got " +
                 std::to_string(audio.samples.size()));
    }
    const auto& t = dft_tables();
    Matrix power(frames, kSpectrumBins);
    std::vector<double> windowed(kWinSamples);
    for (std::size_t frame = 0; frame < frames; ++frame) {
        const double* x = audio.samples.data() + frame * kHopSamples;
        for (int n = 0; n < kWinSamples; ++n) {
            windowed[n] = x[n] * t.hann[n];
        }
        double* out = power.row(frame);
        for (int k = 0; k < kSpectrumBins; ++k) {
            double re = 0.0;
            double im = 0.0;
            // The frame is zero beyond the window, so the 512-point DFT only
            // needs the first 400 samples.
            for (int n = 0; n < kWinSamples; ++n) {
                const int idx = (k * n) & (kDftSize - 1);
                re += windowed[n] * t.cos_t[idx];
                im -= windowed[n] * t.sin_t[idx];
            }
            out[k] = re * re + im * im;
        }
    }
    return power;
}

MelSpectrogram log_mel_spectrogram(const AudioBuffer& audio) {
    const Matrix power = stft_power(audio);
    const auto& bank = mel_bank();
    MelSpectrogram mel;
    mel.frames = Matrix(power.rows, kMelBins);
    for (std::size_t frame = 0; frame < power.rows; ++frame) {
        const double* p = power.row(frame);
        double* out = mel.frames.row(frame);
        for (int m = 0; m < kMelBins; ++m) {
            const MelFilter& f = bank.filters[m];
            double energy = 0.0;
            for (std::size_t j = 0; j < f.weights.size(); ++j) {
                energy += f.weights[j] * p[f.first_bin + static_cast<int>(j)];
            }
            out[m] = std::log(std::max(energy, kLogFloor));
        }
    }
    return mel;
}

StackedFeatures stack_frames(const MelSpectrogram& mel, int stack) {
    if (stack < 1) {
        fail(ErrorKind::InvalidConfig, "stack must be >= 1");
    }
    const std::size_t t_out = mel.frames.rows / static_cast<std::size_t>(stack);
    if (t_out == 0) {
        fail(ErrorKind::EmptyInput,
             "need at least " + std::to_string(stack) + " mel frames, got " +
                 std::to_string(mel.frames.rows));
    }
    StackedFeatures out;
    out.stack = stack;
    out.frames = Matrix(t_out, mel.frames.cols * static_cast<std::size_t>(stack));
    for (std::size_t t = 0; t < t_out; ++t) {
        double* dst = out.frames.row(t);
        for (int s = 0; s < stack; ++s) {
            const double* src = mel.frames.row(t * stack + s);
            std::memcpy(dst + s * mel.frames.cols, src, mel.frames.cols * sizeof(double));
        }
    }
    return out;
}

const std::array<double, kMelBins>& mel_filter_centers_hz() {
    return mel_bank().centers_hz;
}

// ─── Feature dump ───────────────────────────────────────────────────────────

namespace {
constexpr unsigned char kMelMagic[8] = {'M', 'E', 'L', '8', '0', 0, 0, 0};
}

void write_feature_dump(const std::string& path, const MelSpectrogram& mel) {
    std::vector<unsigned char> out;
    out.reserve(16 + mel.frames.data.size() * 4);
    out.insert(out.end(), kMelMagic, kMelMagic + 8);
    append_u32(out, static_cast<std::uint32_t>(mel.frames.rows));
    append_u32(out, static_cast<std::uint32_t>(mel.frames.cols));
    for (double v : mel.frames.data) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        append_u32(out, bits);
    }
    write_file(path, out.data(), out.size());
}

MelSpectrogram read_feature_dump(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMelMagic, 8) != 0) {
        fail(ErrorKind::CorruptFile, "bad feature dump magic: " + path);
    }
    const std::uint32_t rows = read_u32(bytes.data() + 8);
    const std::uint32_t cols = read_u32(bytes.data() + 12);
    if (cols != static_cast<std::uint32_t>(kMelBins)) {
        fail(ErrorKind::UnsupportedFormat, "feature dump is not 80-dim: " + path);
    }
    const std::size_t need = 16 + static_cast<std::size_t>(rows) * cols * 4;
    if (bytes.size() < need) {
        fail(ErrorKind::CorruptFile, "truncated feature dump: " + path);
    }
    MelSpectrogram mel;
    mel.frames = Matrix(rows, cols);
    for (std::size_t i = 0; i < mel.frames.data.size(); ++i) {
        const std::uint32_t bits = read_u32(bytes.data() + 16 + 4 * i);
        mel.frames.data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return mel;
}

} // namespace brq
