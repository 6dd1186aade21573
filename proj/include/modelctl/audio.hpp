#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace modelctl {

inline constexpr int kDefaultSampleRate = 16000;

// Mono audio in the raw float domain. Amplitudes are not restricted to
// [-1, 1]; the strong attack preset deliberately exceeds full scale.
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t frames() const noexcept { return samples.size(); }
  double seconds() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  // Throws NonFiniteValue / InvalidArgument.
  void validate() const;
};

struct SegmentMetadata {
  std::string model_id;
  std::string source_lang;
  long steps = 0;

  bool operator==(const SegmentMetadata&) const = default;
};

// The trainable audio prefix. max|samples| <= epsilon holds for every
// instance that leaves this library (constructed, projected or loaded).
struct AdversarialSegment {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;
  double epsilon = 0.0;
  SegmentMetadata metadata;

  std::size_t frames() const noexcept { return samples.size(); }
  // Throws ConstraintViolation when the amplitude bound is broken.
  void validate() const;

  bool operator==(const AdversarialSegment&) const = default;
};

// Largest float that does not exceed `epsilon`. Clamping float samples to
// this value keeps |x| <= epsilon exact when compared in double precision.
float float_bound(double epsilon);

double linf_norm(std::span<const float> samples);

// segment ++ audio in raw sample space. No resampling, gain or crossfade.
Waveform prepend(const AdversarialSegment& segment, const Waveform& audio);

// Elementwise clamp to [-epsilon, epsilon].
std::vector<float> project_linf(std::span<const float> samples, double epsilon);
void project_linf_inplace(std::span<float> samples, double epsilon);

// `<base>.f32le` holds raw little-endian binary32 samples, `<base>.json` the
// sidecar {frames, sample_rate, epsilon, model_id, source_lang, steps}.
// `base` may be given with or without either extension.
void save_segment(const AdversarialSegment& segment, const std::filesystem::path& base);
AdversarialSegment load_segment(const std::filesystem::path& base);

std::filesystem::path segment_payload_path(const std::filesystem::path& base);
std::filesystem::path segment_sidecar_path(const std::filesystem::path& base);

enum class WavEncoding { kPcm16, kFloat32 };

// Mono WAV only. PCM16 is mapped to floats as value / 32768.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const Waveform& audio, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace modelctl
