#include "enas/ssl.hpp"

#include <algorithm>
#include <cmath>

namespace enas {

namespace {

void check_images(const Tensor& batch, const char* what) {
  if (batch.rank() != 4) throw DimensionError(std::string(what) + ": expected NCHW batch, got " + shape_str(batch.shape()));
}

int draw_shift(Rng& rng, int max_shift) {
  if (max_shift <= 0) return 0;
  return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(2 * max_shift + 1))) - max_shift;
}

}  // namespace

Tensor augment_weak(const Tensor& batch, Rng& rng, const AugmentOptions& opt) {
  check_images(batch, "augment_weak");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out(batch.shape());
  const auto hi = static_cast<long>(h) - 1, wi = static_cast<long>(w) - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = uniform_real(rng) < opt.flip_prob;
    const int dy = draw_shift(rng, opt.max_shift);
    const int dx = draw_shift(rng, opt.max_shift);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        const auto sy = static_cast<std::size_t>(std::clamp(static_cast<long>(y) - dy, 0L, hi));
        for (std::size_t x = 0; x < w; ++x) {
          auto sx = std::clamp(static_cast<long>(x) - dx, 0L, wi);
          if (flip) sx = wi - sx;
          out.at4(i, ch, y, x) = batch.at4(i, ch, sy, static_cast<std::size_t>(sx));
        }
      }
    }
  }
  return out;
}

Tensor augment_strong(const Tensor& batch, Rng& rng, const AugmentOptions& opt) {
  Tensor out = augment_weak(batch, rng, opt);
  const std::size_t n = out.dim(0), c = out.dim(1), h = out.dim(2), w = out.dim(3);
  double total = 0.0;
  for (float v : out.values()) total += v;
  const auto fill = out.numel() ? static_cast<float>(total / static_cast<double>(out.numel())) : 0.0f;
  const double side = std::sqrt(std::clamp(opt.max_erase_fraction, 0.0, 1.0));
  const auto max_h = static_cast<std::size_t>(std::floor(static_cast<double>(h) * side));
  const auto max_w = static_cast<std::size_t>(std::floor(static_cast<double>(w) * side));
  for (std::size_t i = 0; i < n; ++i) {
    if (max_h > 0 && max_w > 0) {
      const std::size_t eh = 1 + uniform_index(rng, max_h);
      const std::size_t ew = 1 + uniform_index(rng, max_w);
      const std::size_t y0 = uniform_index(rng, h - eh + 1);
      const std::size_t x0 = uniform_index(rng, w - ew + 1);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = y0; y < y0 + eh; ++y)
          for (std::size_t x = x0; x < x0 + ew; ++x) out.at4(i, ch, y, x) = fill;
    }
    const auto s = static_cast<float>(opt.intensity_lo + (opt.intensity_hi - opt.intensity_lo) * uniform_real(rng));
    float* img = out.data() + i * c * h * w;
    for (std::size_t k = 0; k < c * h * w; ++k) img[k] = std::clamp(img[k] * s, 0.0f, 1.0f);
  }
  return out;
}

bool PseudoLabelResult::any() const {
  return std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

PseudoLabelResult pseudo_label(const Tensor& teacher_logits, double tau) {
  if (teacher_logits.rank() != 2) {
    throw DimensionError("pseudo_label: logits must be [M, K], got " + shape_str(teacher_logits.shape()));
  }
  const std::size_t m = teacher_logits.dim(0), k = teacher_logits.dim(1);
  const Tensor probs = softmax_rows(teacher_logits);
  PseudoLabelResult r;
  r.labels.resize(m);
  r.mask.resize(m);
  std::size_t passed = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = probs.data() + i * k;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    r.labels[i] = static_cast<int>(best);
    r.mask[i] = static_cast<double>(row[best]) >= tau ? 1 : 0;
    passed += r.mask[i];
  }
  r.pass_fraction = m ? static_cast<double>(passed) / static_cast<double>(m) : 0.0;
  return r;
}

Var<float> labelled_loss(const Var<float>& logits, std::span<const int> labels) {
  return cross_entropy_from_logits(logits, labels, Reduction::mean);
}

Var<float> unlabelled_loss_distilled(const Var<float>& student_logits, const PseudoLabelResult& teacher) {
  if (student_logits.value().rank() != 2 || student_logits.value().dim(0) != teacher.size()) {
    throw std::invalid_argument("unlabelled loss: student has " + shape_str(student_logits.shape()) +
                                " logits but teacher labelled " + std::to_string(teacher.size()) + " rows");
  }
  std::vector<float> weights(teacher.mask.begin(), teacher.mask.end());
  return weighted_cross_entropy(student_logits, std::span<const int>(teacher.labels), std::span<const float>(weights),
                                static_cast<float>(teacher.size()));
}

Var<float> unlabelled_loss_self(const Var<float>& student_logits_strong, const Tensor& teacher_logits_weak, double tau) {
  if (teacher_logits_weak.rank() != 2 || student_logits_strong.value().rank() != 2 ||
      teacher_logits_weak.dim(0) != student_logits_strong.value().dim(0)) {
    throw std::invalid_argument("unlabelled loss: row count mismatch between " +
                                shape_str(student_logits_strong.shape()) + " and " +
                                shape_str(teacher_logits_weak.shape()));
  }
  return unlabelled_loss_distilled(student_logits_strong, pseudo_label(teacher_logits_weak, tau));
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::matchnas: return "matchnas";
    case LossMode::naive_ssl_nas: return "naive-ssl-nas";
    case LossMode::supervised_nas: return "supervised-nas";
    case LossMode::fixmatch_single: return "fixmatch-single";
    case LossMode::supervised_single: return "supervised-single";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view text) {
  for (auto m : {LossMode::matchnas, LossMode::naive_ssl_nas, LossMode::supervised_nas, LossMode::fixmatch_single,
                 LossMode::supervised_single}) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown loss mode '" + std::string(text) + "'");
}

std::string to_string(DistillView view) { return view == DistillView::weak ? "weak" : "strong"; }

DistillView parse_distill_view(std::string_view text) {
  if (text == "weak") return DistillView::weak;
  if (text == "strong") return DistillView::strong;
  throw std::invalid_argument("unknown distill view '" + std::string(text) + "' (expected weak or strong)");
}

bool uses_unlabelled(LossMode mode) {
  return mode == LossMode::matchnas || mode == LossMode::naive_ssl_nas || mode == LossMode::fixmatch_single;
}

bool is_single_network(LossMode mode) {
  return mode == LossMode::fixmatch_single || mode == LossMode::supervised_single;
}

StepLoss assemble_step_loss(LossMode mode, const SubnetTerms* teacher, std::span<const SubnetTerms> students,
                            const TermWeights& weights) {
  const bool want_teacher = mode == LossMode::matchnas || is_single_network(mode);
  const bool want_students = !is_single_network(mode);
  const bool want_u = uses_unlabelled(mode);
  const std::string name = to_string(mode);
  if (want_teacher != (teacher != nullptr)) {
    throw AssemblyError(name + (want_teacher ? " needs teacher terms" : " takes no teacher terms"));
  }
  if (!want_students && !students.empty()) throw AssemblyError(name + " takes no subnet terms");
  // matchnas with n = 1 is the teacher alone
  if (want_students && !teacher && students.empty()) throw AssemblyError(name + " needs at least one subnet");

  StepLoss out;
  auto weigh = [](const Var<float>& v, double w) { return w == 1.0 ? v : scale(v, static_cast<float>(w)); };
  auto one = [&](const SubnetTerms& t, const std::string& suffix) {
    if (!t.labelled.valid()) throw AssemblyError(name + ": missing labelled term for " + suffix);
    if (want_u != t.unlabelled.has_value()) {
      throw AssemblyError(name + (want_u ? ": missing unlabelled term for " : ": unexpected unlabelled term for ") + suffix);
    }
    Var<float> loss = weigh(t.labelled, weights.labelled);
    out.terms.emplace_back("loss_l_" + suffix, static_cast<double>(t.labelled.value()[0]));
    if (t.unlabelled) {
      loss = add(loss, weigh(*t.unlabelled, weights.unlabelled));
      out.terms.emplace_back("loss_u_" + suffix, static_cast<double>(t.unlabelled->value()[0]));
    }
    out.per_network.push_back(loss);
  };
  if (teacher) one(*teacher, "A");
  for (std::size_t i = 0; i < students.size(); ++i) one(students[i], "sub_" + std::to_string(i + 1));

  out.total = out.per_network.front();
  for (std::size_t i = 1; i < out.per_network.size(); ++i) out.total = add(out.total, out.per_network[i]);
  return out;
}

}  // namespace enas
