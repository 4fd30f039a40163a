#include "pvc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace pvc {

namespace {

u32 read_u32(const unsigned char* p) {
  return static_cast<u32>(p[0]) | (static_cast<u32>(p[1]) << 8) |
         (static_cast<u32>(p[2]) << 16) | (static_cast<u32>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, u32 v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open wav file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 44, "wav file too short: " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
          "not a RIFF/WAVE file: " + path);

  int channels = 0;
  int rate = 0;
  int bits = 0;
  int format = 0;
  std::size_t data_off = 0;
  std::size_t data_len = 0;

  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const char* id = bytes.data() + off;
    const u32 sz = read_u32(p + off + 4);
    const std::size_t body = off + 8;
    if (std::memcmp(id, "fmt ", 4) == 0 && body + 16 <= bytes.size()) {
      format = read_u16(p + body);
      channels = read_u16(p + body + 2);
      rate = static_cast<int>(read_u32(p + body + 4));
      bits = read_u16(p + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = std::min<std::size_t>(sz, bytes.size() - body);
    }
    off = body + sz + (sz & 1);  // chunks are word-aligned
  }

  require(format == 1, "unsupported wav encoding (want PCM): " + path);
  require(bits == 16, "unsupported wav bit depth (want 16): " + path);
  require(channels == 1 || channels == 2, "unsupported channel count: " + path);
  require(rate > 0 && data_off > 0, "malformed wav file: " + path);

  const std::size_t n_frames = data_len / (2 * static_cast<std::size_t>(channels));
  Waveform w;
  w.rate = rate;
  w.samples.resize(n_frames);
  const unsigned char* d = p + data_off;
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t k = (i * static_cast<std::size_t>(channels) +
                             static_cast<std::size_t>(c)) * 2;
      const std::int16_t s = static_cast<std::int16_t>(d[k] | (d[k + 1] << 8));
      acc += static_cast<double>(s) / 32768.0;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  require_arg(w.rate > 0, "write_wav: rate must be positive");
  std::string out;
  out.reserve(44 + w.samples.size() * 2);
  const u32 data_bytes = static_cast<u32>(w.samples.size() * 2);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<u32>(w.rate));
  put_u32(out, static_cast<u32>(w.rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.append("data");
  put_u32(out, data_bytes);
  for (double v : w.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    const long q = std::lround(c * 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write wav file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "failed writing wav file: " + path);
}

double max_abs(const Waveform& w) {
  double m = 0.0;
  for (double v : w.samples) m = std::max(m, std::fabs(v));
  return m;
}

void peak_normalize(Waveform& w, double peak) {
  const double m = max_abs(w);
  if (m > peak && m > 0.0) {
    const double g = peak / m;
    for (double& v : w.samples) v *= g;
  }
}

}  // namespace pvc
