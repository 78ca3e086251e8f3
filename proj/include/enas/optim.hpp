#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "enas/autograd.hpp"

namespace enas {

class NoGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named parameters. Paths look like "stage1/block0/dw/conv".
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  Var<float>& add(const std::string& path, Tensor value);
  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  Var<float>& at(const std::string& path);
  const Var<float>& at(const std::string& path) const;

  /// Sorted by path.
  const std::map<std::string, Var<float>>& entries() const { return params_; }
  std::map<std::string, Var<float>>& entries() { return params_; }

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;
  std::uint64_t rng_seed() const { return rng_seed_; }

  void zero_grad();
  /// Deep copy of every value; gradients are not copied.
  ParamStore clone() const;

 private:
  std::map<std::string, Var<float>> params_;
  std::uint64_t rng_seed_;
};

struct Moments {
  std::vector<float> first;
  std::vector<float> second;
};

/// Adam with decoupled weight decay and cosine learning-rate decay
/// lr(t) = lr0 * 0.5 * (1 + cos(pi * t / T)).
///
/// Only elements that received a gradient since the last zero_grad are
/// touched (moments, decay and the step itself), so a step driven by one
/// subnet leaves parameters outside its slice bit-identical.
class AdamW {
 public:
  struct Options {
    double lr0 = 3e-4;
    double weight_decay = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t horizon = 1;  // T of the cosine schedule, in steps
  };

  AdamW(const ParamStore& params, Options options);

  double learning_rate(std::int64_t t) const;
  double current_learning_rate() const { return learning_rate(step_); }
  std::int64_t step_count() const { return step_; }
  const Options& options() const { return options_; }
  const Moments& moments(const std::string& path) const { return moments_.at(path); }
  bool has_moments(const std::string& path) const { return moments_.count(path) != 0; }

  /// Applies one update at schedule position step_count(), then advances it.
  void step(ParamStore& params);

 private:
  Options options_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace enas
