#include "ctrlgs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "ctrlgs/config.hpp"
#include "ctrlgs/error.hpp"

namespace ctrlgs {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void doubles(const double* d, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(d);
    buf_.insert(buf_.end(), p, p + n * sizeof(double));
  }
  void vec(std::span<const double> v) {
    pod<std::uint64_t>(v.size());
    doubles(v.data(), v.size());
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string section)
      : p_(data), end_(data + size), section_(std::move(section)) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  void doubles(double* d, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(d, p_, n * sizeof(double));
    p_ += n * sizeof(double);
  }
  std::vector<double> vec() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    doubles(v.data(), n);
    return v;
  }
  std::string text() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(p_, p_ + n);
    p_ += n;
    return s;
  }
  void expect_end() const {
    if (p_ != end_) bad("trailing bytes");
  }
  [[noreturn]] void bad(const std::string& what) const {
    fail(ErrorKind::kLoad, "checkpoint section " + section_ + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (std::size_t(end_ - p_) < n) bad("truncated");
  }
  const char* p_;
  const char* end_;
  std::string section_;
};

constexpr int kGaussianDoubles = 3 + 4 + 3 + 1 + 3 * kMaxShCoeffs;

void put_gaussians(Writer& w, const std::vector<GaussianParams>& items) {
  w.pod<std::uint64_t>(items.size());
  for (const auto& g : items) for_each_field(g, [&](int, const double* d, int n) { w.doubles(d, n); });
}

std::vector<GaussianParams> get_gaussians(Reader& r) {
  const auto n = r.pod<std::uint64_t>();
  if (n > (std::uint64_t(1) << 32)) r.bad("implausible Gaussian count");
  std::vector<GaussianParams> items(n);
  for (auto& g : items) for_each_field(g, [&](int, double* d, int k) { r.doubles(d, k); });
  return items;
}

void put_field_tensors(Writer& w, const DeformationField& f) {
  auto tensors = const_cast<DeformationField&>(f).tensors();
  w.pod<std::uint64_t>(tensors.size());
  for (const auto& t : tensors) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.cls));
    w.vec(t.values);
  }
}

void get_field_tensors(Reader& r, DeformationField& f) {
  auto tensors = f.tensors();
  if (r.pod<std::uint64_t>() != tensors.size()) r.bad("tensor count does not match the field configuration");
  for (auto& t : tensors) {
    if (r.pod<std::uint32_t>() != static_cast<std::uint32_t>(t.cls)) r.bad("tensor class out of order");
    const auto n = r.pod<std::uint64_t>();
    if (n != t.values.size()) r.bad(std::string("tensor length mismatch for ") + param_class_name(t.cls));
    r.doubles(t.values.data(), n);
  }
}

void put_section(std::vector<char>& out, const char tag[4], std::vector<char>& payload) {
  out.insert(out.end(), tag, tag + 4);
  const std::uint64_t n = payload.size();
  const auto* p = reinterpret_cast<const char*>(&n);
  out.insert(out.end(), p, p + sizeof(n));
  out.insert(out.end(), payload.begin(), payload.end());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& s, bool with_optimizer) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
  {
    const std::uint32_t v = kCheckpointVersion;
    const auto* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + 4);
  }
  {
    Writer w;
    w.text(config_to_json(s.config).dump());
    put_section(out, "CONF", w.bytes());
  }
  {
    Writer w;
    w.pod<std::int32_t>(s.canonical.sh_degree);
    put_gaussians(w, s.canonical.items);
    put_section(out, "GAUS", w.bytes());
  }
  {
    Writer w;
    const DeformConfig& c = s.field.config;
    for (int v : {c.grid.features, c.grid.spatial_resolution, c.grid.temporal_resolution, c.grid.levels,
                  c.grid.upsample, c.encoder_width, c.head_hidden})
      w.pod<std::int32_t>(v);
    w.doubles(c.grid.bounds_min.data(), 3);
    w.doubles(c.grid.bounds_max.data(), 3);
    w.pod<double>(c.grid.init_noise);
    w.pod<std::uint8_t>(c.segment_heads ? 1 : 0);
    put_field_tensors(w, s.field);
    put_section(out, "FILD", w.bytes());
  }
  {
    Writer w;
    w.vec(s.quantizer.windows().boundaries);
    w.pod<double>(s.quantizer.q());
    w.vec(s.quantizer.known_timestamps());
    put_section(out, "QUAN", w.bytes());
  }
  if (with_optimizer) {
    Writer w;
    w.pod<std::int64_t>(s.optim.step);
    put_gaussians(w, s.optim.m);
    put_gaussians(w, s.optim.v);
    put_field_tensors(w, s.optim.field_m);
    put_field_tensors(w, s.optim.field_v);
    w.vec(s.stats.grad_accum);
    w.pod<std::uint64_t>(s.stats.count.size());
    for (int c : s.stats.count) w.pod<std::int32_t>(c);
    put_section(out, "OPTM", w.bytes());
  }
  {
    Writer w;
    w.doubles(s.background.data(), 3);
    w.pod<double>(s.scene_extent);
    w.pod<std::int64_t>(s.iteration);
    put_section(out, "STAT", w.bytes());
  }
  std::ofstream os(path, std::ios::binary);
  require(bool(os), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os.write(out.data(), std::streamsize(out.size()));
  require(bool(os), ErrorKind::kIo, "failed writing " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorKind::kLoad, "cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader header(bytes.data(), bytes.size(), "header");
  char magic[8];
  for (char& c : magic) c = header.pod<char>();
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) header.bad("bad magic (not a CTRLGS01 checkpoint)");
  const auto version = header.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    header.bad("unsupported format version " + std::to_string(version) + " (this build reads " +
               std::to_string(kCheckpointVersion) + ")");

  std::map<std::string, std::pair<const char*, std::size_t>> sections;
  std::size_t pos = 12;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 12) Reader(nullptr, 0, "directory").bad("truncated section header");
    const std::string tag(bytes.data() + pos, 4);
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos + 4, 8);
    pos += 12;
    if (len > bytes.size() - pos) Reader(nullptr, 0, tag).bad("truncated");
    if (tag != "CONF" && tag != "GAUS" && tag != "FILD" && tag != "QUAN" && tag != "OPTM" && tag != "STAT")
      Reader(nullptr, 0, tag).bad("unknown section");
    sections[tag] = {bytes.data() + pos, len};
    pos += len;
  }
  auto open = [&](const char* tag) {
    const auto it = sections.find(tag);
    if (it == sections.end()) Reader(nullptr, 0, tag).bad("missing");
    return Reader(it->second.first, it->second.second, tag);
  };

  TrainState s;
  {
    Reader r = open("CONF");
    try {
      s.config = config_from_json(nlohmann::json::parse(r.text()));
    } catch (const std::exception& e) {
      r.bad(e.what());
    }
    r.expect_end();
  }
  {
    Reader r = open("GAUS");
    s.canonical.sh_degree = r.pod<std::int32_t>();
    if (s.canonical.sh_degree < 0 || s.canonical.sh_degree > 1) r.bad("unsupported SH degree");
    s.canonical.items = get_gaussians(r);
    r.expect_end();
  }
  {
    Reader r = open("FILD");
    DeformConfig c;
    int* ints[] = {&c.grid.features, &c.grid.spatial_resolution, &c.grid.temporal_resolution, &c.grid.levels,
                   &c.grid.upsample, &c.encoder_width, &c.head_hidden};
    for (int* p : ints) {
      *p = r.pod<std::int32_t>();
      if (*p < 1 || *p > 4096) r.bad("implausible field dimension");
    }
    r.doubles(c.grid.bounds_min.data(), 3);
    r.doubles(c.grid.bounds_max.data(), 3);
    c.grid.init_noise = r.pod<double>();
    c.segment_heads = r.pod<std::uint8_t>() != 0;
    try {
      s.field = DeformationField::create(c, 0);
    } catch (const Error& e) {
      r.bad(e.what());
    }
    get_field_tensors(r, s.field);
    r.expect_end();
  }
  {
    Reader r = open("QUAN");
    WindowSet w;
    w.boundaries = r.vec();
    const double q = r.pod<double>();
    const std::vector<double> known = r.vec();
    r.expect_end();
    try {
      s.quantizer = TemporalQuantizer(w, q, known);
    } catch (const Error& e) {
      r.bad(e.what());
    }
  }
  const std::size_t n = s.canonical.size();
  if (sections.contains("OPTM")) {
    Reader r = open("OPTM");
    s.optim.step = r.pod<std::int64_t>();
    s.optim.m = get_gaussians(r);
    s.optim.v = get_gaussians(r);
    if (s.optim.m.size() != n || s.optim.v.size() != n) r.bad("moment rows do not match the Gaussian count");
    s.optim.field_m = s.field.zeros_like();
    s.optim.field_v = s.field.zeros_like();
    get_field_tensors(r, s.optim.field_m);
    get_field_tensors(r, s.optim.field_v);
    s.stats.grad_accum = r.vec();
    const auto cn = r.pod<std::uint64_t>();
    if (s.stats.grad_accum.size() != n || cn != n) r.bad("densify statistics do not match the Gaussian count");
    s.stats.count.resize(n);
    for (auto& c : s.stats.count) c = r.pod<std::int32_t>();
    r.expect_end();
  } else {
    s.optim.m.assign(n, GaussianParams::zeros());
    s.optim.v = s.optim.m;
    s.optim.field_m = s.field.zeros_like();
    s.optim.field_v = s.optim.field_m;
    s.stats.reset(n);
  }
  {
    Reader r = open("STAT");
    r.doubles(s.background.data(), 3);
    s.scene_extent = r.pod<double>();
    s.iteration = static_cast<int>(r.pod<std::int64_t>());
    r.expect_end();
  }
  return s;
}

}  // namespace ctrlgs
