#pragma once

// Synthetic image datasets, stratified labelled/unlabelled/test/calibration
// splitting, and a small binary file format.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "enas/search_space.hpp"
#include "enas/tensor.hpp"

namespace enas {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SplitTag : std::uint8_t { labelled = 0, unlabelled = 1, test = 2, calibration = 3 };

struct Dataset {
  Tensor images;            // [N, C, H, W], values in [0, 1]
  std::vector<int> labels;  // N
  std::vector<SplitTag> tags;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> indices(SplitTag tag) const;
  /// Every training image: labelled and unlabelled tags together.
  std::vector<std::size_t> unlabelled_stream() const;
  Tensor gather(std::span<const std::size_t> idx) const;
  std::vector<int> gather_labels(std::span<const std::size_t> idx) const;
  bool operator==(const Dataset&) const = default;
};

struct SyntheticOptions {
  int classes = 10;
  int per_class = 100;
  int resolution = 16;
  int channels = 3;
  double noise_sigma = 0.05;
  double jitter = 0.5;  // 0 = one fixed image per class before noise
  /// Label c is drawn with the pattern of class c + class_offset. A nonzero
  /// offset gives a related task with different classes (a pretraining source).
  int class_offset = 0;
};

/// Class c draws pattern family c % 4 (oriented bars, rings, checkers,
/// gradients) with class-specific frequency, orientation and colour, then
/// per-sample phase/orientation/contrast jitter and Gaussian pixel noise.
/// All indices come back tagged unlabelled.
Dataset gen_synthetic(const SyntheticOptions& opt, std::uint64_t seed);

struct SplitOptions {
  int labelled_per_class = 40;
  double test_fraction = 0.2;
  int calibration_count = 256;
};

/// Stratified: per class a test share, then calibration images taken round
/// robin over classes, then exactly labelled_per_class labelled images; the
/// rest of the training images are tagged unlabelled.
Dataset split(Dataset data, const SplitOptions& opt, std::uint64_t seed);

/// Magic "ENDS", u16 version, u32 N, C, H, W, K, f32 images, u16 labels,
/// u8 split tags; little-endian.
inline constexpr std::uint16_t kDatasetFormatVersion = 1;

std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(std::string_view bytes);
void save_binary(const Dataset& data, const std::filesystem::path& path);
Dataset load_binary(const std::filesystem::path& path);

}  // namespace enas
