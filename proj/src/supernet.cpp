#include "enas/supernet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace enas {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::size_t fan_in(const Shape& shape) {
  if (shape.size() == 4) return shape[1] * shape[2] * shape[3];
  if (shape.size() == 2) return shape[1];
  return 1;
}

// Gaussian entries for weights, 1 for norm scales, 0 for shifts and biases.
Tensor init_tensor(const std::string& path, const Shape& shape, Rng& rng, double stddev) {
  if (ends_with(path, "/scale")) return Tensor(shape, 1.0f);
  if (ends_with(path, "/shift") || ends_with(path, "/bias")) return Tensor(shape, 0.0f);
  const double sd = stddev > 0 ? stddev : std::sqrt(2.0 / static_cast<double>(fan_in(shape)));
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(shape);
  for (auto& v : t.storage()) v = static_cast<float>(dist(rng));
  return t;
}

SliceRange slice_for(const Shape& maximal, const Shape& active, const std::string& path) {
  if (maximal.size() != active.size()) {
    throw DimensionError("parameter " + path + ": active rank differs from maximal shape " + shape_str(maximal));
  }
  SliceRange r;
  r.sizes = active;
  r.offsets.assign(active.size(), 0);
  for (std::size_t a = 0; a < active.size(); ++a) {
    if (active[a] > maximal[a]) {
      throw DimensionError("parameter " + path + ": active shape " + shape_str(active) + " exceeds maximal " +
                           shape_str(maximal));
    }
    // kernel axes are centered
    if (active.size() == 4 && a >= 2) r.offsets[a] = (maximal[a] - active[a]) / 2;
  }
  return r;
}

// Visits (flat index in `maximal`, flat index in the box) for every element of the box.
template <class F>
void for_each_in_box(const Shape& maximal, const SliceRange& r, F&& f) {
  const std::size_t rank = maximal.size();
  std::vector<std::size_t> stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) stride[a - 1] = stride[a] * maximal[a];
  const std::size_t total = shape_numel(r.sizes);
  if (total == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < rank; ++a) flat += (r.offsets[a] + idx[a]) * stride[a];
    f(flat, k);
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < r.sizes[a]) break;
      idx[a] = 0;
    }
  }
}

std::string calib_key(const SearchSpace& space, const ArchConfig& arch) { return encode(canonical(space, arch)); }

}  // namespace

bool SubnetView::covers(const std::string& path, const Shape& shape, std::size_t flat) const {
  auto it = slices.find(path);
  if (it == slices.end()) return false;
  const auto& r = it->second;
  for (std::size_t a = shape.size(); a-- > 0;) {
    const std::size_t i = flat % shape[a];
    flat /= shape[a];
    if (i < r.offsets[a] || i >= r.offsets[a] + r.sizes[a]) return false;
  }
  return true;
}

// ---- StandaloneNet -----------------------------------------------------------

StandaloneNet::StandaloneNet(SearchSpace space, ArchConfig arch, ParamStore params)
    : space_(std::move(space)), arch_(std::move(arch)), params_(std::move(params)) {
  validate_arch(space_, arch_);
  for (const auto& req : weight_requests(space_, arch_)) {
    if (!params_.contains(req.path)) throw FormatError("missing parameter " + req.path);
    if (params_.at(req.path).shape() != req.active) {
      throw FormatError("parameter " + req.path + " has shape " + shape_str(params_.at(req.path).shape()) +
                        ", expected " + shape_str(req.active));
    }
  }
}

StandaloneNet StandaloneNet::random(const SearchSpace& space, const ArchConfig& arch, Rng& rng, double stddev) {
  validate_arch(space, arch);
  ParamStore store;
  for (const auto& req : weight_requests(space, arch)) store.add(req.path, init_tensor(req.path, req.active, rng, stddev));
  return StandaloneNet(space, arch, std::move(store));
}

Var<float> StandaloneNet::run(const Tensor& input, NormMode mode, bool features_only, StatsMap<float>* record) {
  NormContext<float> ctx;
  ctx.mode = mode;
  ctx.calib = &calib_;
  ctx.record = record;
  auto fetch = [&](const WeightRequest& req) -> Var<float> { return params_.at(req.path); };
  return run_network(space_, arch_, Var<float>::constant(input), ctx, fetch, features_only);
}

Var<float> StandaloneNet::forward(const Tensor& input, NormMode mode) { return run(input, mode, false, nullptr); }

Var<float> StandaloneNet::features(const Tensor& input, NormMode mode) { return run(input, mode, true, nullptr); }

void StandaloneNet::recalibrate(const Tensor& batch) {
  if (batch.empty()) throw std::invalid_argument("recalibrate: empty calibration batch");
  NoGradGuard guard;
  StatsMap<float> stats;
  run(batch, NormMode::train, true, &stats);
  calib_ = std::move(stats);
}

// ---- Supernet ----------------------------------------------------------------

Supernet::Supernet(SearchSpace space, std::uint64_t seed) : space_(std::move(space)), seed_(seed), params_(seed) {
  validate_space(space_);
  Rng rng(seed);
  for (const auto& req : weight_requests(space_, largest(space_))) {
    params_.add(req.path, init_tensor(req.path, req.active, rng, 0.0));
  }
}

std::map<std::string, Shape> Supernet::maximal_shapes() const {
  std::map<std::string, Shape> out;
  for (const auto& [path, var] : params_.entries()) out[path] = var.shape();
  return out;
}

SubnetView Supernet::slice_view(const ArchConfig& arch) const {
  validate_arch(space_, arch);
  SubnetView view;
  view.arch = arch;
  for (const auto& req : weight_requests(space_, arch)) {
    view.slices[req.path] = slice_for(params_.at(req.path).shape(), req.active, req.path);
  }
  return view;
}

Var<float> Supernet::run(const ArchConfig& arch, const Tensor& input, NormContext<float>& ctx) {
  validate_arch(space_, arch);
  auto fetch = [&](const WeightRequest& req) -> Var<float> {
    const auto& full = params_.at(req.path);
    if (full.shape() == req.active) return full;
    const auto r = slice_for(full.shape(), req.active, req.path);
    return crop(full, std::span<const std::size_t>(r.offsets), std::span<const std::size_t>(r.sizes));
  };
  return run_network(space_, arch, Var<float>::constant(input), ctx, fetch);
}

Var<float> Supernet::forward(const ArchConfig& arch, const Tensor& input, NormMode mode) {
  NormContext<float> ctx;
  ctx.mode = mode;
  if (mode == NormMode::eval) {
    ctx.calib = calibration(arch);
    if (!ctx.calib) throw MissingCalibrationError("subnet " + encode(arch) + " has not been recalibrated");
  }
  return run(arch, input, ctx);
}

void Supernet::recalibrate(const ArchConfig& arch, const Tensor& calib_batch) {
  if (calib_batch.empty()) throw std::invalid_argument("recalibrate: empty calibration batch");
  NoGradGuard guard;
  StatsMap<float> stats;
  NormContext<float> ctx;
  ctx.mode = NormMode::train;
  ctx.record = &stats;
  run(arch, calib_batch, ctx);
  calib_cache_[calib_key(space_, arch)] = std::move(stats);
}

const StatsMap<float>* Supernet::calibration(const ArchConfig& arch) const {
  auto it = calib_cache_.find(calib_key(space_, arch));
  return it == calib_cache_.end() ? nullptr : &it->second;
}

StandaloneNet Supernet::extract_standalone(const ArchConfig& arch) const {
  const auto view = slice_view(arch);
  ParamStore store(seed_);
  for (const auto& [path, r] : view.slices) {
    const auto& full = params_.at(path).value();
    Tensor t(r.sizes);
    for_each_in_box(full.shape(), r, [&](std::size_t src, std::size_t dst) { t[dst] = full[src]; });
    store.add(path, std::move(t));
  }
  StandaloneNet net(space_, canonical(space_, arch), std::move(store));
  if (const auto* stats = calibration(arch)) net.set_calibration(*stats);
  return net;
}

void Supernet::load_slices(const StandaloneNet& net) {
  if (!(net.space() == space_)) throw FormatError("network was built for a different search space");
  const auto view = slice_view(net.arch());
  for (const auto& [path, r] : view.slices) {
    auto& full = params_.at(path).mutable_value();
    const auto& src = net.params().at(path).value();
    const Shape maximal = full.shape();
    for_each_in_box(maximal, r, [&](std::size_t dst, std::size_t s) { full[dst] = src[s]; });
  }
  clear_calibration();
}

void Supernet::accumulate_gradients(std::span<const ArchConfig> archs, std::span<const Var<float>> losses) {
  if (archs.size() != losses.size()) {
    throw DimensionError("accumulate_gradients: " + std::to_string(archs.size()) + " archs but " +
                         std::to_string(losses.size()) + " losses");
  }
  for (const auto& loss : losses) backward(loss);
}

// ---- model files -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'N', 'A', 'S'};

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_record(std::string& out, const std::string& path, const Shape& shape, std::span<const float> data) {
  put_string(out, path);
  put<std::uint8_t>(out, 1);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : data) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model file truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const StandaloneNet& net) {
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kModelFormatVersion);
  put_string(out, space_to_text(net.space()));
  put_string(out, encode(net.arch()));
  const auto& calib = net.calibration();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.params().size() + 2 * calib.size()));
  for (const auto& [path, var] : net.params().entries()) put_record(out, path, var.shape(), var.value().values());
  for (const auto& [layer, stats] : calib) {
    put_record(out, layer + "/calib_mean", {stats.mean.size()}, stats.mean);
    put_record(out, layer + "/calib_var", {stats.var.size()}, stats.var);
  }
  return out;
}

StandaloneNet deserialize_model(std::string_view bytes) {
  Reader in(bytes);
  if (in.raw(4) != std::string_view(kMagic, 4)) throw FormatError("not a model file (bad magic)");
  const auto version = in.get<std::uint16_t>();
  if (version != kModelFormatVersion) throw FormatError("unsupported model format version " + std::to_string(version));
  SearchSpace space;
  ArchConfig arch;
  try {
    space = parse_space_text(in.get_string());
    arch = decode(in.get_string(), space);
  } catch (const SpaceError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  } catch (const ArchError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  ParamStore store;
  StatsMap<float> calib;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string path = in.get_string();
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != 1) throw FormatError("record " + path + ": unsupported dtype " + std::to_string(dtype));
    const auto ndim = in.get<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = in.get<std::uint32_t>();
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(in.get<std::uint32_t>());
    if (ends_with(path, "/calib_mean")) {
      calib[path.substr(0, path.size() - 11)].mean = std::move(data);
    } else if (ends_with(path, "/calib_var")) {
      calib[path.substr(0, path.size() - 10)].var = std::move(data);
    } else {
      if (store.contains(path)) throw FormatError("duplicate record " + path);
      store.add(path, Tensor(std::move(shape), std::move(data)));
    }
  }
  if (!in.done()) throw FormatError("trailing bytes after last record");
  StandaloneNet net(std::move(space), std::move(arch), std::move(store));
  net.set_calibration(std::move(calib));
  return net;
}

void save_model(const StandaloneNet& net, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  const auto bytes = serialize_model(net);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::ios_base::failure("write failed: " + path.string());
}

StandaloneNet load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace enas
