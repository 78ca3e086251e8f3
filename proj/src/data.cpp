#include "enas/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace enas {

std::vector<std::size_t> Dataset::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unlabelled_stream() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == SplitTag::labelled || tags[i] == SplitTag::unlabelled) out.push_back(i);
  return out;
}

Tensor Dataset::gather(std::span<const std::size_t> idx) const { return gather_rows(images, idx); }

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

namespace {

constexpr double kPi = std::numbers::pi;

struct ClassPattern {
  int family;
  double freq;
  double angle;
  double color[3];
};

ClassPattern class_pattern(int c) {
  ClassPattern p{};
  p.family = c % 4;
  const int variant = c / 4;
  p.freq = 1.5 + variant;
  p.angle = kPi * (0.15 + 0.37 * c);
  for (int ch = 0; ch < 3; ++ch) p.color[ch] = 0.55 + 0.45 * std::cos(2.0 * kPi * (c / 10.0 + ch / 3.0));
  return p;
}

double pattern_value(const ClassPattern& p, double u, double v, double phase, double angle) {
  // u, v in [-1, 1]
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double along = u * ca + v * sa;
  switch (p.family) {
    case 0:  // oriented bars
      return std::sin(kPi * p.freq * along + phase);
    case 1: {  // rings
      const double r = std::sqrt(u * u + v * v);
      return std::cos(2.0 * kPi * p.freq * 0.5 * r + phase);
    }
    case 2: {  // checkers
      const double across = -u * sa + v * ca;
      return std::sin(kPi * p.freq * along + phase) * std::sin(kPi * p.freq * across + phase);
    }
    default:  // gradient with a soft fold
      return std::tanh(p.freq * along + 0.5 * std::sin(phase));
  }
}

}  // namespace

Dataset gen_synthetic(const SyntheticOptions& opt, std::uint64_t seed) {
  if (opt.classes < 2) throw DataError("gen_synthetic: need at least 2 classes");
  if (opt.per_class < 1) throw DataError("gen_synthetic: per_class must be positive");
  if (opt.resolution != 8 && opt.resolution != 16 && opt.resolution != 32) {
    throw DataError("gen_synthetic: resolution must be 8, 16 or 32");
  }
  if (opt.channels < 1) throw DataError("gen_synthetic: channels must be positive");
  if (opt.class_offset < 0) throw DataError("gen_synthetic: class_offset must be non-negative");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto n = static_cast<std::size_t>(opt.classes) * static_cast<std::size_t>(opt.per_class);
  const auto c = static_cast<std::size_t>(opt.channels);
  const auto r = static_cast<std::size_t>(opt.resolution);
  Dataset d;
  d.classes = opt.classes;
  d.images = Tensor({n, c, r, r});
  d.labels.resize(n);
  d.tags.assign(n, SplitTag::unlabelled);
  std::size_t i = 0;
  for (int k = 0; k < opt.per_class; ++k) {
    for (int cls = 0; cls < opt.classes; ++cls, ++i) {
      const ClassPattern p = class_pattern(cls + opt.class_offset);
      d.labels[i] = cls;
      const double phase = opt.jitter * kPi * (2.0 * uniform_real(rng) - 1.0);
      const double angle = p.angle + opt.jitter * (kPi / 12.0) * (2.0 * uniform_real(rng) - 1.0);
      const double contrast = 1.0 - 0.5 * opt.jitter * uniform_real(rng);
      const double du = opt.jitter * 0.25 * (2.0 * uniform_real(rng) - 1.0);
      const double dv = opt.jitter * 0.25 * (2.0 * uniform_real(rng) - 1.0);
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) {
          const double u = (2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(r) - 1.0) + du;
          const double v = (2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(r) - 1.0) + dv;
          const double base = pattern_value(p, u, v, phase, angle) * contrast;
          for (std::size_t ch = 0; ch < c; ++ch) {
            double val = 0.5 + 0.4 * base * p.color[ch % 3];
            if (opt.noise_sigma > 0) val += opt.noise_sigma * noise(rng);
            d.images.at4(i, ch, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
          }
        }
      }
    }
  }
  return d;
}

Dataset split(Dataset data, const SplitOptions& opt, std::uint64_t seed) {
  if (opt.test_fraction < 0 || opt.test_fraction >= 1) throw DataError("split: test_fraction must be in [0, 1)");
  if (opt.labelled_per_class < 0 || opt.calibration_count < 0) throw DataError("split: counts must be non-negative");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.classes));
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  for (auto& members : by_class) {
    // Fisher-Yates with the portable index draw
    for (std::size_t j = members.size(); j > 1; --j) std::swap(members[j - 1], members[uniform_index(rng, j)]);
  }
  std::fill(data.tags.begin(), data.tags.end(), SplitTag::unlabelled);
  std::vector<std::size_t> cursor(by_class.size(), 0);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    const auto take = static_cast<std::size_t>(std::floor(opt.test_fraction * static_cast<double>(by_class[k].size())));
    for (std::size_t j = 0; j < take; ++j) data.tags[by_class[k][cursor[k]++]] = SplitTag::test;
  }
  int calib_left = opt.calibration_count;
  while (calib_left > 0) {
    bool progressed = false;
    for (std::size_t k = 0; k < by_class.size() && calib_left > 0; ++k) {
      if (cursor[k] + static_cast<std::size_t>(opt.labelled_per_class) >= by_class[k].size()) continue;
      data.tags[by_class[k][cursor[k]++]] = SplitTag::calibration;
      --calib_left;
      progressed = true;
    }
    if (!progressed) throw DataError("split: not enough images for " + std::to_string(opt.calibration_count) + " calibration examples");
  }
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].size() - cursor[k] < static_cast<std::size_t>(opt.labelled_per_class)) {
      throw DataError("split: class " + std::to_string(k) + " has " + std::to_string(by_class[k].size() - cursor[k]) +
                      " training images, fewer than labelled_per_class = " + std::to_string(opt.labelled_per_class));
    }
    for (int j = 0; j < opt.labelled_per_class; ++j) data.tags[by_class[k][cursor[k]++]] = SplitTag::labelled;
  }
  return data;
}

// ---- binary format -----------------------------------------------------------

namespace {

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class U>
  U get() {
    if (b_.size() - pos_ < sizeof(U)) {
      throw FormatError("dataset file truncated at byte offset " + std::to_string(pos_) + " (size " +
                        std::to_string(b_.size()) + ")");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_dataset(const Dataset& data) {
  const auto& s = data.images.shape();
  if (s.size() != 4 || s[0] != data.labels.size() || data.tags.size() != data.labels.size()) {
    throw DataError("dataset arrays are inconsistent: images " + shape_str(s) + ", " +
                    std::to_string(data.labels.size()) + " labels, " + std::to_string(data.tags.size()) + " tags");
  }
  std::string out = "ENDS";
  put<std::uint16_t>(out, kDatasetFormatVersion);
  for (auto v : {s[0], s[1], s[2], s[3], static_cast<std::size_t>(data.classes)}) put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  out.reserve(out.size() + data.images.numel() * 4 + data.size() * 3);
  for (float v : data.images.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  for (int l : data.labels) put<std::uint16_t>(out, static_cast<std::uint16_t>(l));
  for (auto t : data.tags) put<std::uint8_t>(out, static_cast<std::uint8_t>(t));
  return out;
}

Dataset deserialize_dataset(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "ENDS") throw FormatError("not a dataset file (bad magic at byte offset 0)");
  Reader in(bytes.substr(4));
  const auto version = in.get<std::uint16_t>();
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version) + " at byte offset 4");
  }
  std::size_t dims[5];
  for (auto& d : dims) d = in.get<std::uint32_t>();
  Dataset d;
  d.classes = static_cast<int>(dims[4]);
  d.images = Tensor({dims[0], dims[1], dims[2], dims[3]});
  const std::size_t need = d.images.numel() * 4 + dims[0] * 3;
  if (bytes.size() - 4 - in.pos() < need) {
    throw FormatError("dataset file truncated: payload needs " + std::to_string(need) + " bytes after byte offset " +
                      std::to_string(4 + in.pos()) + ", file has " + std::to_string(bytes.size()));
  }
  for (auto& v : d.images.storage()) v = std::bit_cast<float>(in.get<std::uint32_t>());
  d.labels.resize(dims[0]);
  for (auto& l : d.labels) {
    l = in.get<std::uint16_t>();
    if (l >= d.classes) throw FormatError("label " + std::to_string(l) + " out of range before byte offset " + std::to_string(4 + in.pos()));
  }
  d.tags.resize(dims[0]);
  for (auto& t : d.tags) {
    const auto raw = in.get<std::uint8_t>();
    if (raw > 3) throw FormatError("bad split tag " + std::to_string(raw) + " before byte offset " + std::to_string(4 + in.pos()));
    t = static_cast<SplitTag>(raw);
  }
  if (!in.done()) throw FormatError("trailing bytes after byte offset " + std::to_string(4 + in.pos()));
  return d;
}

void save_binary(const Dataset& data, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(data);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::ios_base::failure("write failed: " + path.string());
}

Dataset load_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_dataset(ss.str());
}

}  // namespace enas
