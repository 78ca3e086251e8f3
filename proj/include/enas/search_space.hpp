#pragma once

// Stage-structured elastic search spaces (depth, width multiplier, expand
// ratio, kernel size), canonical architecture encoding and resource counting.

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace enas {

using Rng = std::mt19937_64;
using BigInt = boost::multiprecision::cpp_int;

class SpaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid architecture for a space, or malformed encoding.
class ArchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { hswish, relu };

struct ConvSpec {
  int out = 0;  // 0 = layer absent
  int kernel = 3;
  int stride = 1;
  bool operator==(const ConvSpec&) const = default;
};

/// Non-elastic inverted residual block placed between stem and stages.
struct FixedBlockSpec {
  int out = 0;  // 0 = absent
  int kernel = 3;
  int expand = 1;
  int stride = 1;
  bool operator==(const FixedBlockSpec&) const = default;
};

struct StageSpec {
  std::vector<int> depth_choices;
  std::vector<int> width_choices;  // one entry per width multiplier
  std::vector<int> expand_choices;
  std::vector<int> kernel_choices;
  int stride = 1;

  int max_depth() const { return depth_choices.back(); }
  bool operator==(const StageSpec&) const = default;
};

struct SearchSpace {
  std::string name;
  int resolution = 32;
  int in_channels = 3;
  int classes = 10;
  Activation activation = Activation::hswish;
  std::vector<std::string> width_labels;
  ConvSpec stem;
  FixedBlockSpec first_block;
  std::vector<StageSpec> stages;
  int final_conv = 0;   // 1x1 conv + norm + act before pooling; 0 = absent
  int feature_mix = 0;  // 1x1 conv + act after pooling; 0 = absent

  std::size_t total_blocks() const;
  /// Index of the first block of `stage` in the flat per-block lists.
  std::size_t block_offset(std::size_t stage) const;
  bool operator==(const SearchSpace&) const = default;
};

/// One point of a space. `kernels`/`expands` hold a choice for every block of
/// the maximal depth (stage-major); blocks past a stage's depth are inactive
/// but keep their values.
struct ArchConfig {
  int width_index = 0;
  std::vector<int> depths;
  std::vector<int> kernels;
  std::vector<int> expands;

  auto operator<=>(const ArchConfig&) const = default;
};

struct LatencyModel {
  double ms_per_gflop = 10.0;
  double offset_ms = 0.0;
};

struct ResourceReport {
  std::int64_t flops = 0;  // one multiply-accumulate = 2 FLOPs
  std::int64_t params = 0;
  double latency_proxy = 0.0;  // milliseconds-equivalent
  bool operator==(const ResourceReport&) const = default;
};

/// Geometry of one active inverted-residual block.
struct BlockGeometry {
  int in = 0;
  int mid = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  bool expand_conv = true;  // false when expand ratio is 1
  bool residual = false;
};

/// Known names: mbv3-large, mbv3-small, proxyless, desk-tiny. Anything else
/// is parsed as inline space text (see space_to_text).
SearchSpace build_space(std::string_view source);
SearchSpace parse_space_text(std::string_view text);
std::string space_to_text(const SearchSpace& space);
void validate_space(const SearchSpace& space);

/// Exact product over stages of sum_d (|K| * |E|)^d, times width choices.
BigInt count_subnets(const SearchSpace& space);

void validate_arch(const SearchSpace& space, const ArchConfig& arch);
bool is_valid_arch(const SearchSpace& space, const ArchConfig& arch);

ArchConfig sample_uniform(const SearchSpace& space, Rng& rng);
ArchConfig largest(const SearchSpace& space);
ArchConfig smallest(const SearchSpace& space);
/// Lower median width multiplier; upper median depth, expand and kernel.
ArchConfig medium(const SearchSpace& space);

/// Copy with inactive blocks reset to the first choice; two archs describe
/// the same network iff their canonical forms are equal.
ArchConfig canonical(const SearchSpace& space, const ArchConfig& arch);

/// Visits each distinct network of the space once, in canonical form.
void enumerate_archs(const SearchSpace& space, const std::function<void(const ArchConfig&)>& visit);

/// Format: w<idx>|d<d1>,<d2>,...|k<k1>,...|e<e1>,...
std::string encode(const ArchConfig& arch);
ArchConfig decode(std::string_view text, const SearchSpace& space);

/// Active inverted-residual blocks (fixed first block excluded), in order.
std::vector<BlockGeometry> active_blocks(const SearchSpace& space, const ArchConfig& arch);
/// Geometry of the fixed block after the stem; only meaningful when
/// space.first_block.out > 0.
BlockGeometry first_block_geometry(const SearchSpace& space);
/// Input channels of the first elastic stage.
int stages_input_channels(const SearchSpace& space);
/// Output channels of the last stage for a width multiplier.
int stages_output_channels(const SearchSpace& space, int width_index);

ResourceReport count_resources(const SearchSpace& space, const ArchConfig& arch, int resolution = 0,
                               const LatencyModel& latency = {});

std::size_t uniform_index(Rng& rng, std::size_t n);
double uniform_real(Rng& rng);
/// Independent stream seed from a base seed and a stream tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace enas
