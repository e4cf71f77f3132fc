#include "cwda/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "cwda/errors.hpp"

namespace cwda {

DomainShift DomainShift::preset(const std::string& name) {
  if (name == "fog") return fog();
  if (name == "strong-fog") return strong_fog();
  if (name == "none") return none();
  throw ConfigError("unknown shift preset '" + name + "' (expected fog, strong-fog or none)");
}

ShapeSpec ShapeSpec::random(std::mt19937_64& rng) {
  ShapeSpec s;
  s.shape = static_cast<ShapeClass>(std::uniform_int_distribution<int>(0, 2)(rng));
  s.size = std::uniform_int_distribution<int>(6, 20)(rng);
  std::uniform_int_distribution<int> pos(0, static_cast<int>(kImageSize) - s.size);
  s.x0 = pos(rng);
  s.y0 = pos(rng);
  std::uniform_real_distribution<double> bright(0.55, 1.0);
  std::uniform_real_distribution<double> dark(0.0, 0.25);
  for (auto& c : s.color) c = bright(rng);
  for (auto& c : s.background) c = dark(rng);
  return s;
}

namespace {

bool inside(const ShapeSpec& s, int px, int py) {
  const double x = px + 0.5, y = py + 0.5;
  const double size = s.size;
  if (x < s.x0 || x > s.x0 + size || y < s.y0 || y > s.y0 + size) return false;
  switch (s.shape) {
    case ShapeClass::Square: return true;
    case ShapeClass::Circle: {
      const double cx = s.x0 + size / 2.0, cy = s.y0 + size / 2.0, r = size / 2.0;
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
    }
    case ShapeClass::Triangle: {
      // Apex at the top centre, base along the bottom edge.
      const double t = (y - s.y0) / size;
      return std::abs(x - (s.x0 + size / 2.0)) <= t * size / 2.0;
    }
  }
  return false;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::mt19937_64 sample_stream(std::uint64_t seed, int domain, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(domain), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

Render render_shape(const ShapeSpec& spec) {
  constexpr int n = static_cast<int>(kImageSize);
  Render r;
  r.pixels.resize(kImagePixels);
  r.mask.assign(kImageSize * kImageSize, 0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool on = inside(spec, x, y);
      const std::size_t p = static_cast<std::size_t>(y * n + x);
      r.mask[p] = on ? 1 : 0;
      for (std::size_t c = 0; c < kImageChannels; ++c) {
        r.pixels[c * kImageSize * kImageSize + p] = on ? spec.color[c] : spec.background[c];
      }
    }
  }
  return r;
}

std::array<double, 4> box_from_mask(const std::vector<std::uint8_t>& mask) {
  std::size_t x_min = kImageSize, y_min = kImageSize, x_max = 0, y_max = 0;
  bool any = false;
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      if (!mask[y * kImageSize + x]) continue;
      any = true;
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (!any) throw ContractError("empty object mask");
  const double n = kImageSize;
  const double x0 = static_cast<double>(x_min), x1 = static_cast<double>(x_max + 1);
  const double y0 = static_cast<double>(y_min), y1 = static_cast<double>(y_max + 1);
  return {(x0 + x1) / 2.0 / n, (y0 + y1) / 2.0 / n, (x1 - x0) / n, (y1 - y0) / n};
}

std::vector<double> apply_shift(const std::vector<double>& pixels, const DomainShift& shift, std::mt19937_64& rng) {
  const double alpha = shift.alpha_min == shift.alpha_max
                           ? shift.alpha_min
                           : std::uniform_real_distribution<double>(shift.alpha_min, shift.alpha_max)(rng);
  const double brightness = shift.brightness_delta == 0.0
                                ? 0.0
                                : std::uniform_real_distribution<double>(-shift.brightness_delta,
                                                                         shift.brightness_delta)(rng);
  std::normal_distribution<double> noise(0.0, shift.noise_sigma > 0.0 ? shift.noise_sigma : 1.0);
  std::vector<double> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double v = alpha * pixels[i] + (1.0 - alpha) * shift.haze_color;
    if (shift.noise_sigma > 0.0) v += noise(rng);
    out[i] = std::clamp(v + brightness, 0.0, 1.0);
  }
  return out;
}

Sample::Sample(std::vector<std::uint8_t> pixels, ObjectLabel truth, DomainLabel domain, bool label_visible)
    : pixels_(std::move(pixels)), truth_(truth), domain_(domain), label_visible_(label_visible) {
  if (pixels_.size() != kImagePixels) throw DimensionError("sample must hold 3x32x32 pixels");
}

Tensor Sample::image() const {
  std::vector<double> values(pixels_.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = pixels_[i] / 255.0;
  return Tensor::from({kImageChannels, kImageSize, kImageSize}, std::move(values));
}

const ObjectLabel& Sample::label() const {
  if (!label_visible_) throw ContractError("label of a hidden target-domain sample was requested");
  return truth_;
}

ObjectLabel oracle_label(const Sample& sample) { return sample.truth_; }

std::vector<ObjectLabel> oracle_labels(const std::vector<Sample>& samples) {
  std::vector<ObjectLabel> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(oracle_label(s));
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void SplitRatios::validate() const {
  if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0)) throw ConfigError("split ratios must all be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

std::array<std::size_t, 3> SplitRatios::counts(std::size_t n) const {
  validate();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ConfigError("split ratios leave an empty split for " + std::to_string(n) + " samples");
  }
  return {n_train, n_val, n - n_train - n_val};
}

const std::vector<Sample>& Dataset::split(DomainLabel domain, Split split) const {
  return domain.is_target() ? target[static_cast<int>(split)] : source[static_cast<int>(split)];
}

Dataset generate(const GenerateOptions& options) {
  Dataset ds;
  ds.options = options;
  for (int d = 0; d < 2; ++d) {
    const DomainLabel domain(d);
    const std::size_t n = domain.is_target() ? options.n_target : options.n_source;
    const auto counts = options.ratios.counts(n);
    auto& splits = domain.is_target() ? ds.target : ds.source;
    std::size_t index = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      splits[s].reserve(counts[s]);
      for (std::size_t i = 0; i < counts[s]; ++i, ++index) {
        auto rng = sample_stream(options.seed, d, index);
        const ShapeSpec spec = ShapeSpec::random(rng);
        Render r = render_shape(spec);
        std::vector<double> pixels = domain.is_target() ? apply_shift(r.pixels, options.shift, rng) : r.pixels;
        std::vector<std::uint8_t> q(pixels.size());
        std::transform(pixels.begin(), pixels.end(), q.begin(), quantize);
        ObjectLabel truth{static_cast<int>(spec.shape), box_from_mask(r.mask)};
        splits[s].emplace_back(std::move(q), truth, domain, !domain.is_target());
      }
    }
  }
  return ds;
}

namespace {

constexpr char kSplitMagic[4] = {'C', 'W', 'D', 'S'};
constexpr std::uint32_t kSplitVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw IoError("dataset split file is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
};

std::string split_file(DomainLabel domain, Split split) {
  return std::string(domain.is_target() ? "target_" : "source_") + to_string(split) + ".bin";
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<std::uint8_t> encode_split(const std::vector<Sample>& samples) {
  std::vector<std::uint8_t> out(kSplitMagic, kSplitMagic + 4);
  put_u32(out, kSplitVersion);
  put_u32(out, static_cast<std::uint32_t>(samples.size()));
  put_u32(out, kImageChannels);
  put_u32(out, kImageSize);
  put_u32(out, kImageSize);
  for (const auto& s : samples) {
    const ObjectLabel truth = oracle_label(s);
    out.push_back(static_cast<std::uint8_t>(s.domain().value()));
    out.push_back(s.label_visible() ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(truth.class_id));
    out.push_back(0);
    for (double b : truth.box) put_f64(out, b);
    out.insert(out.end(), s.pixels().begin(), s.pixels().end());
  }
  return out;
}

std::vector<Sample> decode_split(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kSplitMagic, 4) != 0) throw IoError("not a dataset split file");
  r.pos = 4;
  if (r.u32() != kSplitVersion) throw IoError("unsupported dataset split version");
  const std::uint32_t count = r.u32();
  if (r.u32() != kImageChannels || r.u32() != kImageSize || r.u32() != kImageSize) {
    throw IoError("dataset split has unexpected image geometry");
  }
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const int domain = r.u8();
    const bool visible = r.u8() != 0;
    ObjectLabel truth;
    truth.class_id = r.u8();
    r.u8();
    for (auto& b : truth.box) b = r.f64();
    r.need(kImagePixels);
    std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + kImagePixels));
    r.pos += kImagePixels;
    samples.emplace_back(std::move(pixels), truth, DomainLabel(domain), visible);
  }
  if (r.pos != bytes.size()) throw IoError("trailing bytes in dataset split file");
  return samples;
}

std::string Dataset::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (int d = 0; d < 2; ++d) {
    for (int s = 0; s < 3; ++s) {
      for (std::uint8_t byte : encode_split(split(DomainLabel(d), static_cast<Split>(s)))) {
        h ^= byte;
        h *= 1099511628211ULL;
      }
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (int d = 0; d < 2; ++d) {
    for (int s = 0; s < 3; ++s) {
      const DomainLabel domain(d);
      const auto split = static_cast<Split>(s);
      write_file(dir / split_file(domain, split), encode_split(dataset.split(domain, split)));
    }
  }
  const auto& o = dataset.options;
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw IoError("cannot write " + (dir / "meta.txt").string());
  meta << "format_version=1\n"
       << "seed=" << o.seed << '\n'
       << "n_source=" << o.n_source << '\n'
       << "n_target=" << o.n_target << '\n'
       << "ratio_train=" << format_double(o.ratios.train) << '\n'
       << "ratio_val=" << format_double(o.ratios.val) << '\n'
       << "ratio_test=" << format_double(o.ratios.test) << '\n'
       << "shift_preset=" << o.shift_name << '\n'
       << "haze_alpha_min=" << format_double(o.shift.alpha_min) << '\n'
       << "haze_alpha_max=" << format_double(o.shift.alpha_max) << '\n'
       << "haze_color=" << format_double(o.shift.haze_color) << '\n'
       << "noise_sigma=" << format_double(o.shift.noise_sigma) << '\n'
       << "brightness_delta=" << format_double(o.shift.brightness_delta) << '\n';
  for (int d = 0; d < 2; ++d) {
    for (int s = 0; s < 3; ++s) {
      const DomainLabel domain(d);
      const auto split = static_cast<Split>(s);
      meta << "count_" << (d ? "target_" : "source_") << to_string(split) << '='
           << dataset.split(domain, split).size() << '\n';
    }
  }
  meta << "hash=" << dataset.hash() << '\n';
  if (!meta) throw IoError("failed writing meta.txt");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw IoError("no dataset at " + dir.string() + " (meta.txt missing)");
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&kv, &dir](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("meta.txt in " + dir.string() + " lacks " + key);
    return it->second;
  };
  if (get("format_version") != "1") throw IoError("unsupported dataset format version");
  Dataset ds;
  auto& o = ds.options;
  o.seed = std::stoull(get("seed"));
  o.n_source = std::stoull(get("n_source"));
  o.n_target = std::stoull(get("n_target"));
  o.ratios = {std::stod(get("ratio_train")), std::stod(get("ratio_val")), std::stod(get("ratio_test"))};
  o.shift_name = get("shift_preset");
  o.shift = {std::stod(get("haze_alpha_min")), std::stod(get("haze_alpha_max")), std::stod(get("haze_color")),
             std::stod(get("noise_sigma")), std::stod(get("brightness_delta"))};
  for (int d = 0; d < 2; ++d) {
    for (int s = 0; s < 3; ++s) {
      const DomainLabel domain(d);
      const auto split = static_cast<Split>(s);
      auto samples = decode_split(read_file(dir / split_file(domain, split)));
      (d ? ds.target : ds.source)[static_cast<std::size_t>(s)] = std::move(samples);
    }
  }
  if (ds.hash() != get("hash")) throw IoError("dataset in " + dir.string() + " does not match its recorded hash");
  return ds;
}

}  // namespace cwda
