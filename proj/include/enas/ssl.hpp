#pragma once

// Semi-supervised loss terms: augmentations, confidence-thresholded
// pseudo-labels and the per-mode step objective.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "enas/autograd.hpp"
#include "enas/search_space.hpp"

namespace enas {

class AssemblyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugmentOptions {
  double flip_prob = 0.5;
  int max_shift = 2;                // translation in pixels, edge padded
  double max_erase_fraction = 0.25;  // strong only
  double intensity_lo = 0.7;         // strong only
  double intensity_hi = 1.3;
};

/// Random horizontal flip plus integer translation, per image.
Tensor augment_weak(const Tensor& batch, Rng& rng, const AugmentOptions& opt = {});
/// Weak, then one erased rectangle filled with the batch mean and a
/// per-image intensity scale; results clamped to [0, 1].
Tensor augment_strong(const Tensor& batch, Rng& rng, const AugmentOptions& opt = {});

struct SslBatch {
  Tensor labelled_x;
  std::vector<int> labelled_y;
  Tensor x_weak;
  Tensor unlabelled_u;
  Tensor u_weak;
  Tensor u_strong;
  int mu = 0;
};

struct PseudoLabelResult {
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  double pass_fraction = 0.0;

  bool any() const;
  std::size_t size() const { return labels.size(); }
};

/// Argmax labels; mask[i] iff max softmax probability >= tau.
PseudoLabelResult pseudo_label(const Tensor& teacher_logits, double tau);

/// Mean cross-entropy over the labelled batch.
Var<float> labelled_loss(const Var<float>& logits, std::span<const int> labels);

/// Cross-entropy against hard pseudo-labels; masked rows contribute zero and
/// the sum is divided by the total row count.
Var<float> unlabelled_loss_distilled(const Var<float>& student_logits, const PseudoLabelResult& teacher);

/// Self-labelling form: pseudo-labels come from `teacher_logits_weak`, which
/// is treated as a constant.
Var<float> unlabelled_loss_self(const Var<float>& student_logits_strong, const Tensor& teacher_logits_weak, double tau);

enum class LossMode { matchnas, naive_ssl_nas, supervised_nas, fixmatch_single, supervised_single };
enum class DistillView { weak, strong };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);
std::string to_string(DistillView view);
DistillView parse_distill_view(std::string_view text);

bool uses_unlabelled(LossMode mode);
bool is_single_network(LossMode mode);

/// Loss terms of one network in one step.
struct SubnetTerms {
  Var<float> labelled;
  std::optional<Var<float>> unlabelled;
};

struct TermWeights {
  double labelled = 1.0;
  double unlabelled = 1.0;
};

struct StepLoss {
  Var<float> total;
  std::vector<Var<float>> per_network;  // teacher first, then students
  std::vector<std::pair<std::string, double>> terms;
};

/// matchnas:          teacher (l + u) + each student (l + u)
/// naive-ssl-nas:     each student (l + u), no teacher
/// supervised-nas:    each student l only, no teacher
/// fixmatch-single:   teacher (l + u) only
/// supervised-single: teacher l only
/// Teacher terms are named loss_l_A / loss_u_A, student i (1-based)
/// loss_l_sub_i / loss_u_sub_i.
StepLoss assemble_step_loss(LossMode mode, const SubnetTerms* teacher, std::span<const SubnetTerms> students,
                            const TermWeights& weights = {});

}  // namespace enas
