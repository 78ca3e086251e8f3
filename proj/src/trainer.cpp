#include "enas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace enas {

std::string to_string(SamplingStrategy s) { return s == SamplingStrategy::spos ? "spos" : "sandwich"; }

SamplingStrategy parse_sampling(std::string_view text) {
  if (text == "spos") return SamplingStrategy::spos;
  if (text == "sandwich") return SamplingStrategy::sandwich;
  throw std::invalid_argument("unknown sampling strategy '" + std::string(text) + "' (expected spos or sandwich)");
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.n_subnets < 1) throw std::invalid_argument("n_subnets must be at least 1");
  if (cfg.sampling == SamplingStrategy::sandwich && cfg.n_subnets < 2) {
    throw std::invalid_argument("sandwich sampling needs n_subnets >= 2");
  }
  if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) throw std::invalid_argument("tau must be in [0, 1]");
  if (cfg.mu < 0) throw std::invalid_argument("mu must be non-negative");
  if (cfg.labelled_batch < 1) throw std::invalid_argument("labelled_batch must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(cfg.lr0 >= 0.0)) throw std::invalid_argument("lr0 must be non-negative");
  if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
}

std::vector<ArchConfig> sample_step_archs(const SearchSpace& space, SamplingStrategy strategy, int n, Rng& rng,
                                          std::span<const ArchConfig> finite) {
  if (n < 1) throw std::invalid_argument("sample_step_archs: n must be at least 1");
  if (strategy == SamplingStrategy::sandwich && n < 2) {
    throw std::invalid_argument("sample_step_archs: sandwich sampling needs n >= 2");
  }
  const ArchConfig top = largest(space);
  std::vector<ArchConfig> pool;
  if (!finite.empty()) {
    pool.assign(finite.begin(), finite.end());
    if (std::find(pool.begin(), pool.end(), top) == pool.end()) pool.push_back(top);
  }
  auto draw = [&] { return pool.empty() ? sample_uniform(space, rng) : pool[uniform_index(rng, pool.size())]; };

  std::vector<ArchConfig> out{top};
  if (strategy == SamplingStrategy::sandwich) {
    if (pool.empty()) {
      out.push_back(smallest(space));
    } else {
      auto cheapest = std::min_element(pool.begin(), pool.end(), [&](const ArchConfig& a, const ArchConfig& b) {
        const auto fa = count_resources(space, a).flops, fb = count_resources(space, b).flops;
        return fa != fb ? fa < fb : encode(a) < encode(b);
      });
      out.push_back(*cheapest);
    }
  }
  while (static_cast<int>(out.size()) < n) out.push_back(draw());
  return out;
}

std::int64_t steps_per_epoch(const Dataset& data, const TrainConfig& cfg) {
  const auto l = static_cast<std::int64_t>(data.indices(SplitTag::labelled).size());
  return (l + cfg.labelled_batch - 1) / cfg.labelled_batch;
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t j = v.size(); j > 1; --j) std::swap(v[j - 1], v[uniform_index(rng, j)]);
}

/// Cycles through a shuffled index list, reshuffling on wrap.
class Stream {
 public:
  Stream(std::vector<std::size_t> idx, Rng& rng) : idx_(std::move(idx)), rng_(rng) { shuffle(idx_, rng_); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count && !idx_.empty()) {
      if (pos_ == idx_.size()) {
        shuffle(idx_, rng_);
        pos_ = 0;
      }
      out.push_back(idx_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> idx_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

Var<float> zero_loss() { return Var<float>::constant(Tensor({1}, 0.0f)); }

// Forward `view` through `arch` (grad off) and label it.
PseudoLabelResult label_view(Supernet& net, const ArchConfig& arch, const Tensor& view, double tau) {
  NoGradGuard guard;
  return pseudo_label(net.forward(arch, view, NormMode::train).value(), tau);
}

Var<float> masked_term(Supernet& net, const ArchConfig& arch, const Tensor& view, const PseudoLabelResult& labels) {
  // An empty mask contributes exactly zero; skip the forward.
  if (!labels.any()) return zero_loss();
  return unlabelled_loss_distilled(net.forward(arch, view, NormMode::train), labels);
}

std::string describe_terms(const StepLoss& loss) {
  std::ostringstream ss;
  for (const auto& [name, v] : loss.terms) ss << ' ' << name << '=' << v;
  return ss.str();
}

}  // namespace

std::vector<StepRecord> train(Supernet& supernet, const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step,
                              std::optional<ArchConfig> fixed_arch) {
  validate_config(cfg);
  const SearchSpace& space = supernet.space();
  const bool single = is_single_network(cfg.loss_mode);
  const ArchConfig single_arch = fixed_arch ? *fixed_arch : largest(space);
  if (single) validate_arch(space, single_arch);
  for (const auto& a : cfg.finite_space) validate_arch(space, a);

  const auto labelled = data.indices(SplitTag::labelled);
  if (labelled.empty()) throw DataError("training needs a non-empty labelled split");
  if (data.images.rank() != 4 || data.images.dim(2) != static_cast<std::size_t>(space.resolution) ||
      data.images.dim(1) != static_cast<std::size_t>(space.in_channels)) {
    throw DataError("dataset images " + shape_str(data.images.shape()) + " do not match space input " +
                    std::to_string(space.in_channels) + "x" + std::to_string(space.resolution) + "x" +
                    std::to_string(space.resolution));
  }
  if (!cfg.seed_model.empty()) supernet.load_slices(load_model(cfg.seed_model));

  Rng rng_l(derive_seed(cfg.seed, 1));
  Rng rng_u(derive_seed(cfg.seed, 2));
  Rng rng_a(derive_seed(cfg.seed, 3));

  const bool semi = uses_unlabelled(cfg.loss_mode);
  std::optional<Stream> u_stream;
  if (semi && cfg.mu > 0) u_stream.emplace(data.unlabelled_stream(), rng_u);

  const std::int64_t per_epoch = steps_per_epoch(data, cfg);
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  AdamW::Options opt;
  opt.lr0 = cfg.lr0;
  opt.weight_decay = cfg.weight_decay;
  opt.horizon = std::max<std::int64_t>(total_steps, 1);
  AdamW optimizer(supernet.params(), opt);

  std::vector<StepRecord> records;
  records.reserve(static_cast<std::size_t>(total_steps));
  std::vector<std::size_t> order = labelled;
  const auto b = static_cast<std::size_t>(cfg.labelled_batch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng_l);
    for (std::int64_t k = 0; k < per_epoch; ++k) {
      const std::size_t begin = static_cast<std::size_t>(k) * b;
      const std::span<const std::size_t> rows(order.data() + begin, std::min(b, order.size() - begin));

      SslBatch batch;
      batch.mu = cfg.mu;
      batch.labelled_x = data.gather(rows);
      batch.labelled_y = data.gather_labels(rows);
      batch.x_weak = augment_weak(batch.labelled_x, rng_l, cfg.augment);
      bool have_u = false;
      if (u_stream) {
        const auto u_rows = u_stream->next(rows.size() * static_cast<std::size_t>(cfg.mu));
        if (!u_rows.empty()) {
          have_u = true;
          batch.unlabelled_u = data.gather(u_rows);
          batch.u_weak = augment_weak(batch.unlabelled_u, rng_u, cfg.augment);
          batch.u_strong = augment_strong(batch.unlabelled_u, rng_u, cfg.augment);
        }
      }

      const std::vector<ArchConfig> archs =
          single ? std::vector<ArchConfig>{single_arch}
                 : sample_step_archs(space, cfg.sampling, cfg.n_subnets, rng_a, cfg.finite_space);

      StepRecord rec;
      rec.step = optimizer.step_count();
      rec.learning_rate = optimizer.current_learning_rate();
      for (const auto& a : archs) rec.archs.push_back(encode(a));

      std::optional<SubnetTerms> teacher;
      std::vector<SubnetTerms> students;
      const auto y = std::span<const int>(batch.labelled_y);
      switch (cfg.loss_mode) {
        case LossMode::matchnas:
        case LossMode::fixmatch_single: {
          const ArchConfig& a = archs.front();
          SubnetTerms t;
          t.labelled = labelled_loss(supernet.forward(a, batch.x_weak, NormMode::train), y);
          PseudoLabelResult pl;
          if (have_u) pl = label_view(supernet, a, batch.u_weak, cfg.tau);
          t.unlabelled = have_u ? masked_term(supernet, a, batch.u_strong, pl) : zero_loss();
          teacher = t;
          rec.pass_fraction = pl.pass_fraction;
          const Tensor& view = cfg.distill_view == DistillView::weak ? batch.u_weak : batch.u_strong;
          for (std::size_t i = 1; i < archs.size(); ++i) {
            SubnetTerms s;
            s.labelled = labelled_loss(supernet.forward(archs[i], batch.x_weak, NormMode::train), y);
            s.unlabelled = have_u ? masked_term(supernet, archs[i], view, pl) : zero_loss();
            students.push_back(s);
          }
          break;
        }
        case LossMode::naive_ssl_nas: {
          double passed = 0.0;
          for (const auto& a : archs) {
            SubnetTerms s;
            s.labelled = labelled_loss(supernet.forward(a, batch.x_weak, NormMode::train), y);
            if (have_u) {
              const auto pl = label_view(supernet, a, batch.u_weak, cfg.tau);
              passed += pl.pass_fraction;
              s.unlabelled = masked_term(supernet, a, batch.u_strong, pl);
            } else {
              s.unlabelled = zero_loss();
            }
            students.push_back(s);
          }
          rec.pass_fraction = passed / static_cast<double>(archs.size());
          break;
        }
        case LossMode::supervised_nas:
          for (const auto& a : archs) {
            students.push_back(SubnetTerms{labelled_loss(supernet.forward(a, batch.x_weak, NormMode::train), y), {}});
          }
          break;
        case LossMode::supervised_single:
          teacher = SubnetTerms{labelled_loss(supernet.forward(archs.front(), batch.x_weak, NormMode::train), y), {}};
          break;
      }

      const StepLoss loss = assemble_step_loss(cfg.loss_mode, teacher ? &*teacher : nullptr, students, cfg.term_weights);
      rec.total_loss = static_cast<double>(loss.total.value()[0]);
      rec.terms = loss.terms;
      if (!std::isfinite(rec.total_loss)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(rec.step) + " (epoch " +
                              std::to_string(epoch) + "):" + describe_terms(loss));
      }

      supernet.params().zero_grad();
      std::vector<ArchConfig> owners;
      if (teacher) owners.push_back(archs.front());
      for (std::size_t i = teacher ? 1 : 0; i < archs.size(); ++i) owners.push_back(archs[i]);
      supernet.accumulate_gradients(owners, loss.per_network);
      optimizer.step(supernet.params());
      supernet.clear_calibration();

      if (on_step) on_step(rec);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

Tensor calibration_batch(const Dataset& data) {
  auto idx = data.indices(SplitTag::calibration);
  if (idx.empty()) idx = data.unlabelled_stream();
  if (idx.empty()) throw DataError("no images available for normalization calibration");
  return data.gather(idx);
}

namespace {

constexpr std::size_t kEvalChunk = 250;

template <class Forward>
double accuracy(const Tensor& images, std::span<const int> labels, Forward&& forward) {
  if (labels.empty()) throw DataError("evaluation needs a non-empty test set");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DataError("evaluation images " + shape_str(images.shape()) + " do not match " +
                    std::to_string(labels.size()) + " labels");
  }
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < labels.size(); begin += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, labels.size() - begin);
    const Tensor logits = forward(take_rows(images, begin, count)).value();
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const float* row = logits.data() + i * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      correct += pred == labels[begin + i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

double evaluate(Supernet& supernet, const ArchConfig& arch, const Tensor& images, std::span<const int> labels) {
  return accuracy(images, labels, [&](const Tensor& x) { return supernet.forward(arch, x, NormMode::eval); });
}

double evaluate(Supernet& supernet, const ArchConfig& arch, const Dataset& data) {
  const auto test = data.indices(SplitTag::test);
  if (test.empty()) throw DataError("evaluation needs a non-empty test split");
  supernet.recalibrate(arch, calibration_batch(data));
  return evaluate(supernet, arch, data.gather(test), data.gather_labels(test));
}

double evaluate(StandaloneNet& net, const Dataset& data) {
  const auto test = data.indices(SplitTag::test);
  if (test.empty()) throw DataError("evaluation needs a non-empty test split");
  if (!net.calibrated()) net.recalibrate(calibration_batch(data));
  const auto labels = data.gather_labels(test);
  return accuracy(data.gather(test), labels, [&](const Tensor& x) { return net.forward(x, NormMode::eval); });
}

StandaloneNet train_single(const SearchSpace& space, const ArchConfig& arch, const Dataset& data, const TrainConfig& cfg,
                           std::vector<StepRecord>* records, const StepCallback& on_step) {
  if (!is_single_network(cfg.loss_mode)) {
    throw std::invalid_argument("train_single needs loss mode fixmatch-single or supervised-single, got " +
                                to_string(cfg.loss_mode));
  }
  Supernet holder(space, cfg.seed);
  auto recs = train(holder, data, cfg, on_step, arch);
  if (records) *records = std::move(recs);
  StandaloneNet net = holder.extract_standalone(arch);
  net.recalibrate(calibration_batch(data));
  return net;
}

}  // namespace enas
