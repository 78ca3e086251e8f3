#pragma once

// Supernet training loop for every loss mode, single-network baselines and
// accuracy evaluation.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "enas/data.hpp"
#include "enas/ssl.hpp"
#include "enas/supernet.hpp"

namespace enas {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SamplingStrategy { spos, sandwich };

std::string to_string(SamplingStrategy s);
SamplingStrategy parse_sampling(std::string_view text);

struct TrainConfig {
  LossMode loss_mode = LossMode::matchnas;
  int n_subnets = 4;  // per step, teacher included
  double tau = 0.95;
  int mu = 4;
  int labelled_batch = 16;
  int epochs = 50;
  double lr0 = 3e-4;
  double weight_decay = 3e-5;
  SamplingStrategy sampling = SamplingStrategy::spos;
  DistillView distill_view = DistillView::weak;
  std::uint64_t seed = 0;
  TermWeights term_weights;
  AugmentOptions augment;
  /// Non-empty: subnets are drawn from these archs plus the largest.
  std::vector<ArchConfig> finite_space;
  /// Optional model file of the largest arch loaded into the supernet first.
  std::string seed_model;
};

void validate_config(const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  double learning_rate = 0.0;
  double total_loss = 0.0;
  double pass_fraction = 0.0;
  std::vector<std::pair<std::string, double>> terms;
  std::vector<std::string> archs;
  bool operator==(const StepRecord&) const = default;
};

/// spos: [largest, n-1 uniform]; sandwich: [largest, smallest, n-2 uniform].
/// With a finite space the uniform draws come from finite ∪ {largest} and
/// "smallest" is the finite member with the fewest FLOPs.
std::vector<ArchConfig> sample_step_archs(const SearchSpace& space, SamplingStrategy strategy, int n, Rng& rng,
                                          std::span<const ArchConfig> finite = {});

/// Number of optimizer steps per epoch (one pass over the labelled split).
std::int64_t steps_per_epoch(const Dataset& data, const TrainConfig& cfg);

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs cfg.epochs epochs on `supernet`. Single-network modes train
/// `fixed_arch` only (defaults to the largest arch).
std::vector<StepRecord> train(Supernet& supernet, const Dataset& data, const TrainConfig& cfg,
                              const StepCallback& on_step = {}, std::optional<ArchConfig> fixed_arch = std::nullopt);

/// Top-1 accuracy of `arch` on the images; requires a prior recalibrate().
double evaluate(Supernet& supernet, const ArchConfig& arch, const Tensor& images, std::span<const int> labels);
/// Recalibrates on the calibration split, then scores the test split.
double evaluate(Supernet& supernet, const ArchConfig& arch, const Dataset& data);
double evaluate(StandaloneNet& net, const Dataset& data);

/// Calibration batch of a dataset (falls back to the training images when
/// there is no calibration split).
Tensor calibration_batch(const Dataset& data);

/// Trains `arch` alone from a fresh init seeded by cfg.seed and returns its
/// weights, recalibrated on the calibration split.
StandaloneNet train_single(const SearchSpace& space, const ArchConfig& arch, const Dataset& data,
                           const TrainConfig& cfg, std::vector<StepRecord>* records = nullptr,
                           const StepCallback& on_step = {});

}  // namespace enas
