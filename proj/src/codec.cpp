#include "d2gv/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace d2gv {

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t abs = x & 0x7FFFFFFFu;
  if (abs >= 0x7F800000u) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (abs > 0x7F800000u ? 0x200u : 0u));
  }
  if (abs >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);  // rounds to inf
  if (abs < 0x38800000u) {
    // subnormal half: value = m * 2^-24
    if (abs < 0x33000000u) return static_cast<std::uint16_t>(sign);
    const std::uint32_t e = abs >> 23;
    const std::uint32_t m = (abs & 0x7FFFFFu) | 0x800000u;
    const std::uint32_t shift = 126 - e;  // value = m 2^(e-150) = h 2^-24
    std::uint32_t h = m >> shift;
    const std::uint32_t rem = m & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = ((abs - 0x38000000u) >> 13);
  const std::uint32_t rem = abs & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return static_cast<std::uint16_t>(sign | h);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t e = (h >> 10) & 0x1Fu;
  const std::uint32_t m = h & 0x3FFu;
  if (e == 0) {
    const float v = std::ldexp(static_cast<float>(m), -24);
    return sign ? -v : v;
  }
  if (e == 31) return std::bit_cast<float>(sign | 0x7F800000u | (m << 13));
  return std::bit_cast<float>(sign | ((e + 112) << 23) | (m << 13));
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  std::size_t size() const { return buf_.size(); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw std::runtime_error("container truncated");
  }
  std::uint8_t u8() {
    unsigned char b;
    raw(&b, 1);
    return b;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  void seek(std::uint64_t pos) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(pos));
    if (!in_) throw std::runtime_error("container: cannot seek to GoP record");
  }

 private:
  std::uint64_t le(int n) {
    unsigned char b[8];
    raw(b, static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::istream& in_;
};

std::uint16_t checked_u16(int v, const char* what) {
  if (v < 0 || v > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument(std::string("save: ") + what + " does not fit in 16 bits");
  }
  return static_cast<std::uint16_t>(v);
}

std::uint8_t checked_u8(int v, const char* what) {
  if (v < 0 || v > 255) throw std::invalid_argument(std::string("save: ") + what + " does not fit in 8 bits");
  return static_cast<std::uint8_t>(v);
}

struct Ranges {
  double lo[5];  // mu_x, mu_y, r, g, b
  double hi[5];
};

Ranges attribute_ranges(const std::vector<Gaussian2d>& gs) {
  Ranges r;
  std::fill(std::begin(r.lo), std::end(r.lo), 0.0);
  std::fill(std::begin(r.hi), std::end(r.hi), 0.0);
  for (std::size_t n = 0; n < gs.size(); ++n) {
    const double v[5] = {gs[n].mu.x(), gs[n].mu.y(), gs[n].color[0], gs[n].color[1], gs[n].color[2]};
    for (int i = 0; i < 5; ++i) {
      // ranges are stored as f32; widen to cover every value after rounding
      const double f = static_cast<float>(v[i]);
      r.lo[i] = n == 0 ? f : std::min(r.lo[i], f);
      r.hi[i] = n == 0 ? f : std::max(r.hi[i], f);
    }
  }
  return r;
}

std::uint16_t quantize16(double v, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double q = std::round((v - lo) / (hi - lo) * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

double dequantize16(std::uint16_t q, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return lo + (hi - lo) * (static_cast<double>(q) / 65535.0);
}

void write_record(Writer& w, const GopModel& m, bool quantized) {
  const auto& cfg = m.net.config;
  w.u16(checked_u16(m.frame_count, "frame count"));
  w.u16(checked_u16(cfg.latent_dim, "latent dimension"));
  w.u16(checked_u16(cfg.hidden, "hidden width"));
  w.u8(checked_u8(cfg.spatial_bands, "spatial bands"));
  w.u8(checked_u8(cfg.temporal_bands, "temporal bands"));
  w.u8(checked_u8(cfg.steps_per_unit, "integration steps"));
  w.u8(static_cast<std::uint8_t>(cfg.integrator));
  w.u8(static_cast<std::uint8_t>(cfg.dynamics));
  w.u8(static_cast<std::uint8_t>((cfg.use_dc ? 1 : 0) | (cfg.use_gate ? 2 : 0)));
  m.net.weights.for_each([&](const auto& t) {
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(t.data()[i]);
  });
  w.u32(static_cast<std::uint32_t>(m.canonical.size()));
  if (quantized) {
    const Ranges r = attribute_ranges(m.canonical);
    for (int i = 0; i < 5; ++i) {
      w.f32(r.lo[i]);
      w.f32(r.hi[i]);
    }
    for (const auto& g : m.canonical) {
      w.u16(quantize16(g.mu.x(), r.lo[0], r.hi[0]));
      w.u16(quantize16(g.mu.y(), r.lo[1], r.hi[1]));
      w.u16(float_to_half(static_cast<float>(g.log_sx)));
      w.u16(float_to_half(static_cast<float>(g.log_sy)));
      w.u16(float_to_half(static_cast<float>(canonical_theta(g.theta))));
      for (int c = 0; c < 3; ++c) w.u16(quantize16(g.color[c], r.lo[2 + c], r.hi[2 + c]));
    }
  } else {
    for (const auto& g : m.canonical) {
      w.f32(g.mu.x());
      w.f32(g.mu.y());
      w.f32(g.log_sx);
      w.f32(g.log_sy);
      w.f32(g.theta);
      for (int c = 0; c < 3; ++c) w.f32(g.color[c]);
    }
  }
}

/// Reads one record; stops after `limit` primitives (negative: all).
PrefixModel read_record(Reader& rd, const ContainerHeader& h, int limit) {
  PrefixModel out;
  GopModel& m = out.model;
  m.width = h.width;
  m.height = h.height;
  m.frame_count = rd.u16();
  DeformConfig cfg;
  cfg.latent_dim = rd.u16();
  cfg.hidden = rd.u16();
  cfg.spatial_bands = rd.u8();
  cfg.temporal_bands = rd.u8();
  cfg.steps_per_unit = rd.u8();
  const std::uint8_t integ = rd.u8();
  const std::uint8_t dyn = rd.u8();
  const std::uint8_t heads = rd.u8();
  if (integ > 1 || dyn > 2 || heads > 3) throw std::runtime_error("container: invalid network configuration");
  cfg.integrator = static_cast<Integrator>(integ);
  cfg.dynamics = static_cast<Dynamics>(dyn);
  cfg.use_dc = (heads & 1) != 0;
  cfg.use_gate = (heads & 2) != 0;
  cfg.frame_width = h.width;
  cfg.frame_height = h.height;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("container: ") + e.what());
  }
  if (m.frame_count < 1) throw std::runtime_error("container: GoP with zero frames");
  m.net.config = cfg;
  m.net.weights = NetWeights<double>::zeros(cfg);
  m.net.weights.for_each([&](auto& t) {
    const std::uint32_t rows = rd.u32(), cols = rd.u32();
    if (rows != static_cast<std::uint32_t>(t.rows()) || cols != static_cast<std::uint32_t>(t.cols())) {
      throw std::runtime_error("container: network tensor shape does not match its configuration");
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rd.f32();
  });
  const std::uint32_t count = rd.u32();
  out.stored = static_cast<int>(count);
  std::uint32_t take = count;
  if (limit >= 0 && static_cast<std::uint32_t>(limit) < count) take = static_cast<std::uint32_t>(limit);
  out.clamped = limit > static_cast<int>(count);
  m.canonical.resize(take);
  if (h.quantized()) {
    Ranges r;
    for (int i = 0; i < 5; ++i) {
      r.lo[i] = rd.f32();
      r.hi[i] = rd.f32();
    }
    for (auto& g : m.canonical) {
      g.mu.x() = dequantize16(rd.u16(), r.lo[0], r.hi[0]);
      g.mu.y() = dequantize16(rd.u16(), r.lo[1], r.hi[1]);
      g.log_sx = half_to_float(rd.u16());
      g.log_sy = half_to_float(rd.u16());
      g.theta = half_to_float(rd.u16());
      for (int c = 0; c < 3; ++c) g.color[c] = dequantize16(rd.u16(), r.lo[2 + c], r.hi[2 + c]);
    }
  } else {
    for (auto& g : m.canonical) {
      g.mu.x() = rd.f32();
      g.mu.y() = rd.f32();
      g.log_sx = rd.f32();
      g.log_sy = rd.f32();
      g.theta = rd.f32();
      for (int c = 0; c < 3; ++c) g.color[c] = rd.f32();
    }
  }
  for (const auto& g : m.canonical) {
    if (!g.finite()) throw std::runtime_error("container: non-finite primitive attribute");
  }
  if (!m.net.weights.finite()) throw std::runtime_error("container: non-finite network weight");
  return out;
}

}  // namespace

std::size_t record_bytes(const GopModel& model, bool quantized) {
  std::size_t n = 2 + 2 + 2 + 6;
  model.net.weights.for_each([&](const auto& t) { n += 8 + 4 * static_cast<std::size_t>(t.size()); });
  n += 4;
  if (quantized) n += 40 + 16 * model.canonical.size();
  else n += 32 * model.canonical.size();
  return n;
}

std::string encode_container(const std::vector<GopModel>& models, int gop_size, bool quantize) {
  if (models.empty()) throw std::invalid_argument("save: no GoPs to write");
  for (const auto& m : models) {
    if (m.width != models[0].width || m.height != models[0].height) {
      throw std::invalid_argument("save: GoPs disagree on frame dimensions");
    }
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kFormatVersion);
  w.u16(checked_u16(models[0].width, "width"));
  w.u16(checked_u16(models[0].height, "height"));
  w.u16(checked_u16(gop_size, "GoP size"));
  w.u32(static_cast<std::uint32_t>(models.size()));
  w.u32(quantize ? kFlagQuantized : 0u);
  std::uint64_t offset = kHeaderBytes + 8 * models.size();
  for (const auto& m : models) {
    w.u64(offset);
    offset += record_bytes(m, quantize);
  }
  for (const auto& m : models) write_record(w, m, quantize);
  return std::move(w.str());
}

ContainerHeader read_header(std::istream& in) {
  Reader rd(in);
  char magic[4];
  rd.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a D2GV container (bad magic)");
  ContainerHeader h;
  h.version = rd.u16();
  if (h.version != kFormatVersion) {
    throw std::runtime_error("unsupported container version " + std::to_string(h.version));
  }
  h.width = rd.u16();
  h.height = rd.u16();
  h.gop_size = rd.u16();
  const std::uint32_t gops = rd.u32();
  h.flags = rd.u32();
  if (h.width < 1 || h.height < 1 || h.gop_size < 1) throw std::runtime_error("container: zero dimension in header");
  if ((h.flags & ~kFlagQuantized) != 0) throw std::runtime_error("container: unknown header flags");
  if (gops == 0 || gops > (1u << 24)) throw std::runtime_error("container: implausible GoP count");
  h.offsets.resize(gops);
  std::uint64_t prev = kHeaderBytes + 8ull * gops;
  for (std::uint32_t i = 0; i < gops; ++i) {
    h.offsets[i] = rd.u64();
    if (i == 0 ? h.offsets[i] != prev : h.offsets[i] <= prev) {
      throw std::runtime_error("container: GoP offsets are not strictly increasing");
    }
    prev = h.offsets[i];
  }
  return h;
}

ContainerHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in);
}

Container decode_container(const std::string& bytes) {
  std::istringstream in(bytes);
  Container c;
  c.header = read_header(in);
  Reader rd(in);
  for (int g = 0; g < c.header.gop_count(); ++g) {
    const std::uint64_t start = c.header.offsets[static_cast<std::size_t>(g)];
    if (start >= bytes.size()) throw std::runtime_error("container: GoP offset past end of file");
    rd.seek(start);
    auto rec = read_record(rd, c.header, -1);
    const std::uint64_t end = g + 1 < c.header.gop_count() ? c.header.offsets[static_cast<std::size_t>(g) + 1]
                                                           : bytes.size();
    if (start + record_bytes(rec.model, c.header.quantized()) != end) {
      throw std::runtime_error("container: GoP record size does not match offsets table");
    }
    c.gops.push_back(std::move(rec.model));
  }
  return c;
}

std::uint64_t save(const std::vector<GopModel>& models, int gop_size, const std::filesystem::path& path,
                   bool quantize) {
  const std::string bytes = encode_container(models, gop_size, quantize);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return bytes.size();
}

Container load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_container(ss.str());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

PrefixModel load_prefix(std::istream& in, int gop, int k) {
  if (k < 0) throw std::invalid_argument("load_prefix: negative primitive count");
  const ContainerHeader h = read_header(in);
  if (gop < 0 || gop >= h.gop_count()) throw std::out_of_range("load_prefix: GoP index out of range");
  Reader rd(in);
  rd.seek(h.offsets[static_cast<std::size_t>(gop)]);
  return read_record(rd, h, k);
}

PrefixModel load_prefix(const std::filesystem::path& path, int gop, int k) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_prefix(in, gop, k);
}

PrefixModel load_prefix_ratio(const std::filesystem::path& path, int gop, double keep_ratio) {
  if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("load_prefix: keep ratio outside [0, 1]");
  const PrefixModel full_count = load_prefix(path, gop, 0);
  const int k = static_cast<int>(std::lround(keep_ratio * full_count.stored));
  return load_prefix(path, gop, k);
}

std::size_t param_count(const GopModel& model) { return model.param_count(); }

std::size_t param_count(const std::vector<GopModel>& models) {
  std::size_t n = 0;
  for (const auto& m : models) n += m.param_count();
  return n;
}

}  // namespace d2gv
