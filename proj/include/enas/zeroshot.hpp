#pragma once

// Training-free architecture scoring and resource-constrained selection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "enas/data.hpp"
#include "enas/supernet.hpp"

namespace enas {

class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ZenOptions {
  int repeats = 16;
  double eps = 1e-2;
  int batch = 8;
};

/// ||F(x + eps * delta) - F(x)||_F / eps for one feature map function.
double perturbation_expansion(const std::function<Tensor(const Tensor&)>& features, const Tensor& x,
                              const Tensor& delta, double eps);

/// log of the mean perturbation expansion of the final pre-pooling feature
/// map over `repeats` draws of N(0, 1) weights, input and perturbation.
/// Normalization runs on batch statistics with unit scale and zero shift.
double zen_score(const SearchSpace& space, const ArchConfig& arch, const ZenOptions& opt, std::uint64_t seed);

/// Per-architecture seed: derived from the base seed and the canonical
/// encoding, so a network's score does not depend on visiting order.
std::uint64_t arch_seed(const SearchSpace& space, const ArchConfig& arch, std::uint64_t base);

using Scorer = std::function<double(const ArchConfig&)>;

/// Memoizing zen scorer over canonical encodings.
class ZenScorer {
 public:
  ZenScorer(SearchSpace space, ZenOptions opt, std::uint64_t seed);
  double operator()(const ArchConfig& arch);
  std::size_t evaluations() const { return evaluations_; }

 private:
  SearchSpace space_;
  ZenOptions opt_;
  std::uint64_t seed_;
  std::map<std::string, double> cache_;
  std::size_t evaluations_ = 0;
};

enum class ResourceKind { flops, params };

struct Constraint {
  ResourceKind kind = ResourceKind::flops;
  std::int64_t bound = 0;
  bool operator==(const Constraint&) const = default;
};

using ConstraintSet = std::vector<Constraint>;

std::string to_string(const Constraint& c);  // "flops <= N"
bool satisfies(const ResourceReport& r, const Constraint& c);

/// One budget per line: "flops <= N" or "params <= N"; '#' starts a comment.
ConstraintSet parse_constraints(std::string_view text);
ConstraintSet load_constraints(const std::filesystem::path& path);
/// Throws InfeasibleError when a budget admits no architecture.
void check_feasible(const SearchSpace& space, const ConstraintSet& constraints);

struct ScoredCandidate {
  ArchConfig arch;
  double score = 0.0;
  ResourceReport resources;
  int constraint_id = 0;
  bool operator==(const ScoredCandidate&) const = default;
};

struct SearchOptions {
  int samples_per_constraint = 20;
  /// Score every feasible network instead of sampling.
  bool exhaustive = false;
  int max_draws = 10000;
};

/// Higher score first, then fewer FLOPs, then encoding.
bool better_candidate(const ScoredCandidate& a, const ScoredCandidate& b);

/// Per budget: collect feasible archs (rejection sampling or enumeration),
/// score them and keep the best. Candidates whose score is not finite are
/// dropped.
std::vector<ScoredCandidate> zero_shot_search(const SearchSpace& space, const Scorer& scorer,
                                              const ConstraintSet& constraints, const SearchOptions& opt, Rng& rng);

/// One member per budget; a member whose encoding repeats an earlier one is
/// searched once more and kept if it repeats again.
std::vector<ScoredCandidate> narrow_space(const SearchSpace& space, const Scorer& scorer,
                                          const ConstraintSet& constraints, const SearchOptions& opt, Rng& rng);

/// Narrowed-space file: one "<encoding>\t<constraint>" line per member.
std::string narrowed_to_text(const std::vector<ScoredCandidate>& members, const ConstraintSet& constraints);
std::vector<ArchConfig> parse_narrowed(std::string_view text, const SearchSpace& space);

struct ValidationResult {
  ArchConfig arch;
  double accuracy = 0.0;
  std::int64_t flops = 0;
};

/// Highest test-split accuracy after per-candidate recalibration; ties go
/// to fewer FLOPs, then encoding.
ValidationResult validation_search(Supernet& supernet, std::span<const ArchConfig> candidates, const Dataset& data);

}  // namespace enas
