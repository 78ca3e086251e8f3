// Acceptance runner: one PASS/FAIL line per criterion.
//
//   enas_acceptance            all criteria
//   enas_acceptance 1 4 11     a subset
//
// Criteria 7-10 share their training runs, so asking for any of them trains
// the whole group once.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../gradcheck.hpp"
#include "enas/harness.hpp"

using namespace enas;
using enas::testing::max_gradient_error;
using enas::testing::probe_loss;
using enas::testing::random64;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

const SearchSpace& tiny() {
  static const SearchSpace s = build_space("desk-tiny");
  return s;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Tensor uniform_images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, 3, 16, 16});
  for (auto& v : x.storage()) v = float(uniform_real(rng));
  return x;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  for (const auto& [path, v] : a.entries())
    if (!(v.value() == b.at(path).value())) return false;
  return true;
}

// a's choices are elementwise <= b's
ArchConfig shrink_towards(const ArchConfig& b, Rng& rng) {
  ArchConfig a = b;
  if (a.width_index > 0 && uniform_index(rng, 2)) a.width_index = 0;
  for (auto& d : a.depths)
    if (d > 1 && uniform_index(rng, 2)) d = 1;
  for (std::size_t i = 0; i < a.kernels.size(); ++i) {
    if (a.kernels[i] == 5 && uniform_index(rng, 2)) a.kernels[i] = 3;
    if (a.expands[i] == 4 && uniform_index(rng, 2)) a.expands[i] = 2;
  }
  return a;
}

ConstraintSet flops_budgets(int m) {
  const auto lo = count_resources(tiny(), smallest(tiny())).flops;
  const auto hi = count_resources(tiny(), largest(tiny())).flops;
  ConstraintSet out;
  for (int i = 0; i < m; ++i) out.push_back({ResourceKind::flops, lo + (hi - lo) * (i + 1) / m});
  return out;
}

// ---- 1 ---------------------------------------------------------------------

Verdict weight_sharing() {
  Verdict v;
  Supernet net(tiny(), 2);
  Rng rng(3);
  const Tensor x = uniform_images(8, 7);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const auto a = sample_uniform(tiny(), rng);
    auto sa = net.extract_standalone(a);
    net.recalibrate(a, x);
    sa.recalibrate(x);
    for (auto mode : {NormMode::train, NormMode::eval}) {
      const auto p = net.forward(a, x, mode).value(), q = sa.forward(x, mode).value();
      for (std::size_t k = 0; k < p.numel(); ++k) worst = std::max(worst, double(std::abs(p[k] - q[k])));
    }
  }
  v.require(worst < 1e-5, "extraction max diff " + sci(worst));

  std::size_t outside_changed = 0, inside_changed = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Supernet s(tiny(), 10 + trial);
    const ParamStore before = s.params().clone();
    const auto a = sample_uniform(tiny(), rng);
    const auto view = s.slice_view(a);
    AdamW opt(s.params(), {.lr0 = 0.01, .weight_decay = 0.1, .horizon = 10});
    std::vector<ArchConfig> archs{a};
    std::vector<Var<float>> losses{cross_entropy_from_logits(s.forward(a, x, NormMode::train), std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7})};
    s.accumulate_gradients(archs, losses);
    opt.step(s.params());
    for (const auto& [path, p] : s.params().entries()) {
      const auto& old = before.at(path).value();
      for (std::size_t i = 0; i < old.numel(); ++i) {
        const bool changed = p.value()[i] != old[i];
        if (!view.covers(path, old.shape(), i)) outside_changed += changed;
        else inside_changed += changed;
      }
    }
  }
  v.require(outside_changed == 0, std::to_string(outside_changed) + " elements outside the slice changed");
  v.require(inside_changed > 0, "update changed nothing");

  const auto shapes = net.maximal_shapes();
  int bad_pairs = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const auto b = sample_uniform(tiny(), rng);
    const auto a = shrink_towards(b, rng);
    const auto va = net.slice_view(a), vb = net.slice_view(b);
    bool ok = true;
    for (const auto& [path, r] : va.slices) {
      if (!vb.slices.count(path)) { ok = false; break; }
      const auto& shape = shapes.at(path);
      for (std::size_t i = 0; i < shape_numel(shape) && ok; ++i)
        if (va.covers(path, shape, i) && !vb.covers(path, shape, i)) ok = false;
    }
    bad_pairs += !ok;
  }
  v.require(bad_pairs == 0, std::to_string(bad_pairs) + "/100 nested pairs not nested");
  if (v.pass) v.detail = "extraction diff " + sci(worst) + ", locality exact, 100/100 nested pairs";
  return v;
}

// ---- 2 ---------------------------------------------------------------------

Verdict gradients() {
  std::mt19937_64 rng(7);
  auto P = [&](Shape s, double lo = -1, double hi = 1) { return Var<double>::parameter(random64(std::move(s), rng, lo, hi)); };
  std::map<std::string, double> errs;
  auto check = [&](const std::string& name, std::vector<Var<double>>& in, const std::function<Var<double>()>& f) {
    errs[name] = std::max(errs[name], max_gradient_error(in, f));
  };

  struct Case { Shape x, w; int stride, pad, groups; };
  for (const auto& c : {Case{{2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1, 1}, Case{{1, 2, 6, 6}, {3, 2, 3, 3}, 2, 1, 1},
                        Case{{1, 4, 5, 5}, {4, 2, 1, 1}, 1, 0, 2}, Case{{2, 3, 5, 5}, {3, 1, 5, 5}, 1, 2, 3}}) {
    std::vector<Var<double>> in{P(c.x), P(c.w)};
    check("conv2d", in, [&] { return probe_loss(conv2d(in[0], in[1], c.stride, c.pad, c.groups)); });
  }
  {
    std::vector<Var<double>> in{P({3, 2, 3, 3}), P({2}), P({2})};
    check("normalize_batch", in, [&] { return probe_loss(normalize_batch(in[0], in[1], in[2], NormMode::train)); });
    NormStats<double> st{{0.1, -0.2}, {0.5, 1.5}};
    check("normalize_batch", in, [&] { return probe_loss(normalize_batch(in[0], in[1], in[2], NormMode::eval, &st)); });
  }
  {
    std::vector<Var<double>> in{P({40}, -5, 5)};
    check("hswish", in, [&] { return probe_loss(hswish(in[0])); });
    check("relu", in, [&] { return probe_loss(relu(in[0])); });
  }
  {
    std::vector<Var<double>> in{P({2, 3, 2, 2}), P({2, 3, 2, 2})};
    check("add", in, [&] { return probe_loss(add(in[0], in[1])); });
    check("mul", in, [&] { return probe_loss(mul(in[0], in[1])); });
    check("scale", in, [&] { return probe_loss(scale(in[0], 1.7)); });
    check("global_avg_pool", in, [&] { return probe_loss(global_avg_pool(in[0])); });
    check("sum", in, [&] { return sum(in[0]); });
  }
  {
    std::vector<Var<double>> in{P({3, 4}), P({5, 4}), P({5})};
    check("linear", in, [&] { return probe_loss(linear(in[0], in[1], &in[2])); });
  }
  {
    std::vector<Var<double>> in{P({4, 3, 5, 5})};
    const std::size_t off[] = {0, 1, 1, 1}, size[] = {4, 2, 3, 3};
    check("crop", in, [&] { return probe_loss(crop(in[0], off, size)); });
    check("reshape", in, [&] { return probe_loss(reshape(in[0], {12, 25})); });
    check("narrow_rows", in, [&] { return probe_loss(narrow_rows(in[0], 1, 2)); });
  }
  {
    std::vector<Var<double>> in{P({6, 4}, -3, 3)};
    std::vector<int> t{0, 1, 2, 3, 1, 0};
    std::vector<double> wts{1, 0, 1, 1, 0, 1};
    check("cross_entropy", in, [&] { return cross_entropy_from_logits(in[0], t); });
    check("weighted_cross_entropy", in, [&] { return weighted_cross_entropy(in[0], t, std::span<const double>(wts), 6.0); });
  }
  for (bool residual : {true, false}) {
    BlockGeometry g{4, 8, 4, 3, 1, true, residual};
    BlockWeights<double> w;
    std::vector<Var<double>> in{P({2, 4, 5, 5}), P({8, 4, 1, 1}), P({8}, 0.5, 1.5), P({8}), P({8, 1, 3, 3}),
                                P({8}, 0.5, 1.5),  P({8}),         P({4, 8, 1, 1}),  P({4}, 0.5, 1.5), P({4})};
    check("inverted_residual", in, [&] {
      w = {in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
      NormContext<double> ctx;
      return probe_loss(inverted_residual(in[0], g, w, Activation::hswish, ctx, "b"));
    });
  }
  Verdict v;
  std::string worst_name;
  double worst = 0;
  for (const auto& [name, e] : errs) {
    v.require(e < 1e-5, name + " rel err " + sci(e));
    if (e >= worst) worst = e, worst_name = name;
  }
  if (v.pass) v.detail = std::to_string(errs.size()) + " ops, worst " + worst_name + " " + sci(worst);
  return v;
}

// ---- 3 ---------------------------------------------------------------------

Verdict reductions() {
  Verdict v;
  SyntheticOptions so;
  so.per_class = 30;
  const Dataset data = split(gen_synthetic(so, 1), {.labelled_per_class = 8, .test_fraction = 0.2, .calibration_count = 20}, 2);
  TrainConfig base;
  base.epochs = 1;
  base.labelled_batch = 8;
  base.mu = 2;
  base.lr0 = 3e-3;
  base.seed = 4;

  auto cm = base, cf = base;
  cm.loss_mode = LossMode::matchnas;
  cm.n_subnets = 1;
  cm.tau = 0.3;
  cf.loss_mode = LossMode::fixmatch_single;
  cf.tau = 0.3;
  Supernet a(tiny(), 2), b(tiny(), 2);
  const auto ra = train(a, data, cm), rb = train(b, data, cf);
  double worst = 0;
  for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i) worst = std::max(worst, std::abs(ra[i].total_loss - rb[i].total_loss));
  v.require(ra.size() == rb.size() && worst <= 1e-7, "matchnas(n=1) vs fixmatch-single diff " + sci(worst));

  Dataset noisy = data;
  Rng rng(3);
  for (auto i : noisy.indices(SplitTag::unlabelled))
    for (std::size_t j = 0; j < 768; ++j) noisy.images[i * 768 + j] = float(uniform_real(rng));
  auto cs = base;
  cs.loss_mode = LossMode::supervised_nas;
  Supernet c(tiny(), 5), d(tiny(), 5);
  const bool same = train(c, data, cs) == train(d, noisy, cs) && same_params(c.params(), d.params());
  v.require(same, "supervised-nas depends on the unlabelled stream");

  std::mt19937_64 g(9);
  int all_true = 0, monotone = 0;
  for (int batch = 0; batch < 1000; ++batch) {
    std::normal_distribution<float> z(0.0f, 1.0f + batch % 7);
    Tensor logits({32, 10});
    for (auto& x : logits.storage()) x = z(g);
    PseudoLabelResult prev = pseudo_label(logits, 0.0);
    all_true += std::all_of(prev.mask.begin(), prev.mask.end(), [](auto m) { return m != 0; });
    bool ok = true;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0}) {
      const auto cur = pseudo_label(logits, tau);
      for (std::size_t i = 0; i < 32; ++i) ok &= !cur.mask[i] || prev.mask[i];
      prev = cur;
    }
    monotone += ok;
  }
  v.require(all_true == 1000, "tau=0 mask not all-true in " + std::to_string(1000 - all_true) + " batches");
  v.require(monotone == 1000, "mask not monotone in " + std::to_string(1000 - monotone) + " batches");
  if (v.pass) v.detail = "per-step diff " + sci(worst) + ", unlabelled-independent, 1000/1000 batches";
  return v;
}

// ---- 4 ---------------------------------------------------------------------

Verdict cardinality() {
  Verdict v;
  const BigInt large = count_subnets(build_space("mbv3-large"));
  BigInt expect = 2;
  for (int i = 0; i < 5; ++i) expect *= 7371;
  v.require(large == expect, "mbv3-large count " + large.str());
  const double approx = large.convert_to<double>();
  v.require(std::round(approx / 1e19) == 4, "mbv3-large does not round to 4e19");
  const BigInt small = count_subnets(build_space("mbv3-small"));
  const double s = small.convert_to<double>();
  v.require(std::floor(std::log10(s)) == 13, "mbv3-small count " + small.str() + " not of order 1e13");
  std::size_t n = 0;
  enumerate_archs(tiny(), [&](const ArchConfig&) { ++n; });
  v.require(BigInt(n) == count_subnets(tiny()), "desk-tiny enumeration " + std::to_string(n));
  if (v.pass) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "large %s (%.2e), small %s (%.2e), desk-tiny %zu", large.str().c_str(), approx,
                  small.str().c_str(), s, n);
    v.detail = buf;
  }
  return v;
}

// ---- 5 ---------------------------------------------------------------------

Verdict search_oracle() {
  Verdict v;
  ZenScorer scorer(tiny(), {.repeats = 1, .eps = 1e-2, .batch = 2}, 0);
  const auto budgets = flops_budgets(8);
  Rng rng(21);
  const auto found = zero_shot_search(tiny(), std::ref(scorer), budgets, {.exhaustive = true}, rng);
  v.require(found.size() == budgets.size(), "wrong number of candidates");
  int matched = 0;
  for (std::size_t i = 0; i < std::min(found.size(), budgets.size()); ++i) {
    std::optional<ScoredCandidate> best;
    enumerate_archs(tiny(), [&](const ArchConfig& a) {
      const auto r = count_resources(tiny(), a);
      if (!satisfies(r, budgets[i])) return;
      const double s = scorer(a);
      if (!std::isfinite(s)) return;
      if (!best || s > best->score ||
          (s == best->score && (r.flops < best->resources.flops ||
                                (r.flops == best->resources.flops && encode(a) < encode(best->arch)))))
        best = ScoredCandidate{a, s, r, int(i)};
    });
    v.require(satisfies(found[i].resources, budgets[i]), "candidate " + std::to_string(i) + " over budget");
    matched += best && canonical(tiny(), best->arch) == canonical(tiny(), found[i].arch);
  }
  v.require(matched == 8, std::to_string(matched) + "/8 budgets match brute force");
  if (v.pass) v.detail = "8/8 budgets match brute force over " + std::to_string(scorer.evaluations()) + " networks";
  return v;
}

// ---- 6 ---------------------------------------------------------------------

Verdict scorer_sanity() {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    wins += zen_score(tiny(), largest(tiny()), {}, seed) > zen_score(tiny(), smallest(tiny()), {}, seed);
  Verdict v;
  v.require(wins >= 18, "largest wins only " + std::to_string(wins) + "/20");
  if (v.pass) v.detail = "largest wins " + std::to_string(wins) + "/20";
  return v;
}

// ---- 7-10 ------------------------------------------------------------------

// Shared protocol of the training comparisons.
ExperimentConfig protocol_config() {
  ExperimentConfig cfg;
  cfg.space = "desk-tiny";
  cfg.data.synthetic.classes = 10;
  cfg.data.synthetic.resolution = 16;
  cfg.data.synthetic.per_class = 560;
  cfg.data.synthetic.noise_sigma = 0.4;
  cfg.data.synthetic.jitter = 1.0;
  cfg.data.split.labelled_per_class = 40;
  cfg.data.split.test_fraction = 0.2;
  cfg.data.split.calibration_count = 80;  // leaves 4000 unlabelled
  cfg.train.epochs = 30;
  cfg.train.n_subnets = 4;
  cfg.train.tau = 0.95;
  cfg.train.mu = 4;
  cfg.train.lr0 = 3e-3;
  return cfg;
}

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

struct RunResult {
  double smallest = 0;
  std::vector<double> members;  // accuracy of each narrowed-space member
};

class Protocol {
 public:
  Protocol() : cfg_(protocol_config()), data_(make_dataset(cfg_, 0)) {
    const auto budgets = flops_budgets(16);
    ZenScorer scorer(tiny(), cfg_.zen, 0);
    Rng rng(derive_seed(0, 21));
    for (const auto& m : narrow_space(tiny(), std::ref(scorer), budgets, cfg_.search, rng)) members_.push_back(m.arch);
    std::cout << "protocol: " << data_.indices(SplitTag::labelled).size() << " labelled, "
              << data_.indices(SplitTag::unlabelled).size() << " unlabelled, " << data_.indices(SplitTag::test).size()
              << " test, " << members_.size() << " narrowed members" << std::endl;
  }

  // variant: "", "tau0", "strong", "narrow"
  const RunResult& run(const std::string& method, const std::string& variant, std::uint64_t seed) {
    const std::string key = method + "/" + variant + "/" + std::to_string(seed);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    TrainConfig t = train_config_for(cfg_, method_spec(method), seed);
    if (variant == "tau0") t.tau = 0.0;
    if (variant == "strong") t.distill_view = DistillView::strong;
    if (variant == "narrow") t.finite_space = members_;
    const auto t0 = std::chrono::steady_clock::now();
    Supernet net(tiny(), seed);
    train(net, data_, t);
    RunResult r;
    r.smallest = evaluate(net, smallest(tiny()), data_);
    if (method == "matchnas" && (variant.empty() || variant == "narrow"))
      for (const auto& m : members_) r.members.push_back(evaluate(net, m, data_));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "  run " << key << ": smallest " << num(r.smallest);
    if (!r.members.empty()) std::cout << " members " << num(mean(r.members));
    std::cout << " (" << num(secs, 0) << " s)" << std::endl;
    return cache_.emplace(key, std::move(r)).first->second;
  }

  double mean_smallest(const std::string& method, const std::string& variant = "") {
    std::vector<double> v;
    for (auto s : kSeeds) v.push_back(run(method, variant, s).smallest);
    return mean(v);
  }
  double mean_members(const std::string& variant) {
    std::vector<double> v;
    for (auto s : kSeeds) v.push_back(mean(run("matchnas", variant, s).members));
    return mean(v);
  }

  static double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  }

 private:
  ExperimentConfig cfg_;
  Dataset data_;
  std::vector<ArchConfig> members_;
  std::map<std::string, RunResult> cache_;
};

Protocol& protocol() {
  static Protocol p;
  return p;
}

Verdict ordering() {
  auto& p = protocol();
  const double spos = p.mean_smallest("spos"), fm = p.mean_smallest("spos+fixmatch"), mn = p.mean_smallest("matchnas");
  Verdict v;
  v.require(mn > fm && fm > spos, "ordering violated");
  v.require(mn - fm >= 0.02, "matchnas margin " + num(100 * (mn - fm), 2) + " pts < 2");
  v.detail += (v.detail.empty() ? "" : "; ") + std::string("smallest: matchnas ") + num(mn) + ", spos+fixmatch " + num(fm) +
              ", spos " + num(spos);
  return v;
}

Verdict threshold() {
  auto& p = protocol();
  const double hi = p.mean_smallest("matchnas"), lo = p.mean_smallest("matchnas", "tau0");
  Verdict v;
  v.require(hi >= lo, "tau 0.95 below tau 0");
  v.detail += (v.detail.empty() ? "" : "; ") + std::string("smallest: tau 0.95 ") + num(hi) + ", tau 0 " + num(lo);
  return v;
}

Verdict distill_view() {
  auto& p = protocol();
  const double weak = p.mean_smallest("matchnas"), strong = p.mean_smallest("matchnas", "strong");
  Verdict v;
  v.require(weak >= strong, "weak view below strong view");
  v.detail += (v.detail.empty() ? "" : "; ") + std::string("smallest: weak ") + num(weak) + ", strong " + num(strong);
  return v;
}

Verdict narrowed() {
  auto& p = protocol();
  const double narrow = p.mean_members("narrow"), full = p.mean_members("");
  Verdict v;
  v.require(narrow >= full, "narrowed space below full space");
  v.detail += (v.detail.empty() ? "" : "; ") + std::string("16 members: narrowed ") + num(narrow) + ", full " + num(full);
  return v;
}

// ---- 11 --------------------------------------------------------------------

Verdict determinism() {
  auto cfg = parse_config(R"(space = desk-tiny
seed = 5
[data]
classes = 4
per_class = 16
labelled_per_class = 4
test_fraction = 0.25
calibration_count = 8
[train]
epochs = 2
labelled_batch = 8
mu = 2
n_subnets = 3
[compare]
methods = spos, spos+fixmatch, matchnas
seeds = 0, 1
)");
  const auto root = std::filesystem::temp_directory_path() / "enas_acceptance_compare";
  std::filesystem::remove_all(root);
  const auto a = run_compare(cfg, root / "a");
  const auto b = run_compare(cfg, root / "b");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  Verdict v;
  v.require(slurp(root / "a" / "summary.csv") == slurp(root / "b" / "summary.csv"), "summary CSVs differ");
  v.require(a.rows.size() == 3 * 3 * 2, "unexpected row count");
  if (v.pass) v.detail = "byte-identical summary.csv (" + std::to_string(a.rows.size()) + " rows)";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
      {1, {"weight-sharing invariants", weight_sharing}},
      {2, {"gradient correctness", gradients}},
      {3, {"loss-identity reductions", reductions}},
      {4, {"cardinality", cardinality}},
      {5, {"zero-shot search oracle", search_oracle}},
      {6, {"scorer sanity", scorer_sanity}},
      {7, {"method ordering on the smallest subnet", ordering}},
      {8, {"threshold ablation", threshold}},
      {9, {"distill-view ablation", distill_view}},
      {10, {"narrowed space", narrowed}},
      {11, {"pipeline determinism", determinism}},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) {
    try {
      const int id = std::stoi(argv[i]);
      if (!criteria.count(id)) throw std::out_of_range("id");
      wanted.insert(id);
    } catch (const std::exception&) {
      std::cerr << "usage: " << argv[0] << " [criterion 1-11 ...]\n";
      return 1;
    }
  }
  if (wanted.empty())
    for (const auto& [id, _] : criteria) wanted.insert(id);

  int failed = 0;
  for (int id : wanted) {
    const auto& [name, fn] = criteria.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << " (" << name << "): " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << " ["
              << num(secs, 1) << " s]" << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
