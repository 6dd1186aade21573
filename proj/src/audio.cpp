#include "modelctl/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "modelctl/errors.hpp"

namespace modelctl {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_finite(std::span<const float> samples, const char* what) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw NonFiniteValue(std::string(what) + ": non-finite sample at index " +
                           std::to_string(i));
    }
  }
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

fs::path strip_segment_ext(const fs::path& base) {
  const auto ext = base.extension();
  if (ext == ".f32le" || ext == ".json") {
    auto copy = base;
    return copy.replace_extension();
  }
  return base;
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be positive");
  check_finite(samples, "waveform");
}

void AdversarialSegment::validate() const {
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be positive");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("epsilon must be finite and non-negative");
  }
  check_finite(samples, "segment");
  const double peak = linf_norm(samples);
  if (peak > epsilon) {
    throw ConstraintViolation("segment peak " + std::to_string(peak) +
                              " exceeds epsilon " + std::to_string(epsilon));
  }
}

float float_bound(double epsilon) {
  float bound = static_cast<float>(epsilon);
  while (static_cast<double>(bound) > epsilon) bound = std::nextafter(bound, 0.0f);
  return bound;
}

double linf_norm(std::span<const float> samples) {
  double peak = 0.0;
  for (float s : samples) peak = std::max(peak, std::fabs(static_cast<double>(s)));
  return peak;
}

Waveform prepend(const AdversarialSegment& segment, const Waveform& audio) {
  if (segment.sample_rate != audio.sample_rate) {
    throw SampleRateMismatch("segment is " + std::to_string(segment.sample_rate) +
                             " Hz but audio is " + std::to_string(audio.sample_rate) + " Hz");
  }
  Waveform out;
  out.sample_rate = audio.sample_rate;
  out.samples.reserve(segment.samples.size() + audio.samples.size());
  out.samples.insert(out.samples.end(), segment.samples.begin(), segment.samples.end());
  out.samples.insert(out.samples.end(), audio.samples.begin(), audio.samples.end());
  return out;
}

void project_linf_inplace(std::span<float> samples, double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be non-negative");
  check_finite(samples, "project_linf");
  const float bound = float_bound(epsilon);
  for (float& s : samples) s = std::clamp(s, -bound, bound);
}

std::vector<float> project_linf(std::span<const float> samples, double epsilon) {
  std::vector<float> out(samples.begin(), samples.end());
  project_linf_inplace(out, epsilon);
  return out;
}

fs::path segment_payload_path(const fs::path& base) {
  auto p = strip_segment_ext(base);
  p += ".f32le";
  return p;
}

fs::path segment_sidecar_path(const fs::path& base) {
  auto p = strip_segment_ext(base);
  p += ".json";
  return p;
}

void save_segment(const AdversarialSegment& segment, const fs::path& base) {
  segment.validate();
  std::vector<char> payload;
  payload.reserve(segment.samples.size() * 4);
  for (float s : segment.samples) put_u32(payload, std::bit_cast<std::uint32_t>(s));
  write_all(segment_payload_path(base), payload);

  json sidecar = {
      {"frames", segment.samples.size()},
      {"sample_rate", segment.sample_rate},
      {"epsilon", segment.epsilon},
      {"model_id", segment.metadata.model_id},
      {"source_lang", segment.metadata.source_lang},
      {"steps", segment.metadata.steps},
  };
  const std::string text = sidecar.dump(2) + "\n";
  write_all(segment_sidecar_path(base), std::vector<char>(text.begin(), text.end()));
}

AdversarialSegment load_segment(const fs::path& base) {
  const auto sidecar_path = segment_sidecar_path(base);
  const auto payload_path = segment_payload_path(base);
  json sidecar;
  {
    std::ifstream in(sidecar_path);
    if (!in) throw CorruptFile("missing segment sidecar " + sidecar_path.string());
    try {
      sidecar = json::parse(in);
    } catch (const json::exception& e) {
      throw CorruptFile("unparseable sidecar " + sidecar_path.string() + ": " + e.what());
    }
  }

  AdversarialSegment segment;
  std::size_t frames = 0;
  try {
    frames = sidecar.at("frames").get<std::size_t>();
    segment.sample_rate = sidecar.at("sample_rate").get<int>();
    segment.epsilon = sidecar.at("epsilon").get<double>();
    segment.metadata.model_id = sidecar.at("model_id").get<std::string>();
    segment.metadata.source_lang = sidecar.at("source_lang").get<std::string>();
    segment.metadata.steps = sidecar.at("steps").get<long>();
  } catch (const json::exception& e) {
    throw CorruptFile("invalid sidecar " + sidecar_path.string() + ": " + e.what());
  }

  const auto bytes = read_all(payload_path);
  if (bytes.size() % 4 != 0) {
    throw CorruptFile("payload size " + std::to_string(bytes.size()) +
                      " is not a multiple of 4 bytes");
  }
  if (bytes.size() / 4 != frames) {
    throw FrameCountMismatch("payload holds " + std::to_string(bytes.size() / 4) +
                             " frames, sidecar declares " + std::to_string(frames));
  }
  segment.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    segment.samples[i] = std::bit_cast<float>(get_u32(bytes.data() + 4 * i));
  }
  segment.validate();
  return segment;
}

Waveform read_wav(const fs::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw CorruptFile(path.string() + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw CorruptFile(path.string() + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw CorruptFile(path.string() + ": short fmt chunk");
      format = get_u16(bytes.data() + body);
      channels = get_u16(bytes.data() + body + 2);
      rate = get_u32(bytes.data() + body + 4);
      bits = get_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 40) format = get_u16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || data == nullptr) throw CorruptFile(path.string() + ": missing fmt/data chunk");
  if (channels != 1) throw InvalidArgument(path.string() + ": only mono WAV is supported");

  Waveform out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    out.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const auto v = static_cast<std::int16_t>(get_u16(data + 2 * i));
      out.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    out.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      out.samples[i] = std::bit_cast<float>(get_u32(data + 4 * i));
    }
  } else {
    throw InvalidArgument(path.string() + ": unsupported WAV encoding (format " +
                          std::to_string(format) + ", " + std::to_string(bits) + " bits)");
  }
  out.validate();
  return out;
}

void write_wav(const Waveform& audio, const fs::path& path, WavEncoding encoding) {
  audio.validate();
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t block = bits / 8;
  const auto data_size = static_cast<std::uint32_t>(audio.samples.size() * block);

  std::vector<char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, pcm ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block);
  put_u16(out, static_cast<std::uint16_t>(block));
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (float s : audio.samples) {
    if (pcm) {
      const long q = std::lround(std::clamp(static_cast<double>(s) * 32768.0, -32768.0, 32767.0));
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      put_u32(out, std::bit_cast<std::uint32_t>(s));
    }
  }
  write_all(path, out);
}

}  // namespace modelctl
