#pragma once

// Weight-sharing supernet. One maximal parameter set; a subnet is a slice
// view of it: leading channel prefixes, centered kernel windows and the first
// d blocks of each stage.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "enas/network.hpp"
#include "enas/optim.hpp"
#include "enas/search_space.hpp"

namespace enas {

/// Active index box of one parameter tensor.
struct SliceRange {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> sizes;
  bool operator==(const SliceRange&) const = default;
};

struct SubnetView {
  ArchConfig arch;
  std::map<std::string, SliceRange> slices;  // only active parameters
  bool operator==(const SubnetView&) const = default;

  /// True when element `flat` of parameter `path` (maximal shape `shape`)
  /// lies inside this view.
  bool covers(const std::string& path, const Shape& shape, std::size_t flat) const;
};

/// A fixed architecture with its own (copied) parameters.
class StandaloneNet {
 public:
  StandaloneNet(SearchSpace space, ArchConfig arch, ParamStore params);

  /// Fresh weights: conv/linear entries ~ N(0, stddev^2) (stddev <= 0 means
  /// He fan-in scaling), normalization scale 1 and shift 0, bias 0.
  static StandaloneNet random(const SearchSpace& space, const ArchConfig& arch, Rng& rng, double stddev = 0.0);

  const SearchSpace& space() const { return space_; }
  const ArchConfig& arch() const { return arch_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Logits [N, classes]. Eval mode requires recalibrate() first.
  Var<float> forward(const Tensor& input, NormMode mode);
  /// Final feature map before global pooling.
  Var<float> features(const Tensor& input, NormMode mode);

  void recalibrate(const Tensor& batch);
  bool calibrated() const { return !calib_.empty(); }
  const StatsMap<float>& calibration() const { return calib_; }
  void set_calibration(StatsMap<float> stats) { calib_ = std::move(stats); }

 private:
  Var<float> run(const Tensor& input, NormMode mode, bool features_only, StatsMap<float>* record);

  SearchSpace space_;
  ArchConfig arch_;
  ParamStore params_;
  StatsMap<float> calib_;
};

class Supernet {
 public:
  /// He fan-in Gaussian init of every maximal tensor, deterministic per seed.
  Supernet(SearchSpace space, std::uint64_t seed);

  const SearchSpace& space() const { return space_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  /// Maximal shape of every parameter.
  std::map<std::string, Shape> maximal_shapes() const;

  SubnetView slice_view(const ArchConfig& arch) const;

  /// Logits [N, classes] of the subnet. Eval mode uses the statistics stored
  /// by recalibrate() for this arch.
  Var<float> forward(const ArchConfig& arch, const Tensor& input, NormMode mode);

  /// Recomputes and stores per-layer normalization statistics of `arch`.
  void recalibrate(const ArchConfig& arch, const Tensor& calib_batch);
  const StatsMap<float>* calibration(const ArchConfig& arch) const;
  void clear_calibration() { calib_cache_.clear(); }

  /// Deep copy of the subnet's sliced weights (and its calibration, if any).
  StandaloneNet extract_standalone(const ArchConfig& arch) const;

  /// Writes a network's weights into the matching slices (e.g. a seed model
  /// of the largest arch trained elsewhere).
  void load_slices(const StandaloneNet& net);

  /// Sums gradients of several subnet losses into the shared weights, one
  /// backward per loss.
  void accumulate_gradients(std::span<const ArchConfig> archs, std::span<const Var<float>> losses);

 private:
  Var<float> run(const ArchConfig& arch, const Tensor& input, NormContext<float>& ctx);

  SearchSpace space_;
  std::uint64_t seed_;
  ParamStore params_;
  std::map<std::string, StatsMap<float>> calib_cache_;
};

/// Model file: magic "ENAS", u16 version, u32-length-prefixed space text and
/// arch encoding, u32 record count, then per record: u32 path length, path
/// bytes, u8 dtype (1 = f32), u8 ndim, ndim x u32 dims, little-endian
/// row-major payload. Calibration statistics, when present, are stored as
/// extra records "<layer>/calib_mean" and "<layer>/calib_var".
inline constexpr std::uint16_t kModelFormatVersion = 1;

void save_model(const StandaloneNet& net, const std::filesystem::path& path);
StandaloneNet load_model(const std::filesystem::path& path);
std::string serialize_model(const StandaloneNet& net);
StandaloneNet deserialize_model(std::string_view bytes);

}  // namespace enas
