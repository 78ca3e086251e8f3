#include "enas/zeroshot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "enas/trainer.hpp"

namespace enas {

double perturbation_expansion(const std::function<Tensor(const Tensor&)>& features, const Tensor& x,
                              const Tensor& delta, double eps) {
  if (x.shape() != delta.shape()) {
    throw DimensionError("perturbation shape " + shape_str(delta.shape()) + " differs from input " + shape_str(x.shape()));
  }
  if (!(eps > 0)) throw std::invalid_argument("perturbation eps must be positive");
  Tensor moved(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) moved[i] = x[i] + static_cast<float>(eps) * delta[i];
  const Tensor f0 = features(x);
  const Tensor f1 = features(moved);
  if (f0.shape() != f1.shape()) throw DimensionError("feature shape changed under perturbation");
  double sq = 0.0;
  for (std::size_t i = 0; i < f0.numel(); ++i) {
    const double d = static_cast<double>(f1[i]) - static_cast<double>(f0[i]);
    sq += d * d;
  }
  return std::sqrt(sq) / eps;
}

double zen_score(const SearchSpace& space, const ArchConfig& arch, const ZenOptions& opt, std::uint64_t seed) {
  if (opt.repeats < 1) throw std::invalid_argument("zen score needs repeats >= 1");
  if (!(opt.eps > 0)) throw std::invalid_argument("zen score needs eps > 0");
  if (opt.batch < 1) throw std::invalid_argument("zen score needs batch >= 1");
  validate_arch(space, arch);
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Shape in{static_cast<std::size_t>(opt.batch), static_cast<std::size_t>(space.in_channels),
                 static_cast<std::size_t>(space.resolution), static_cast<std::size_t>(space.resolution)};
  NoGradGuard guard;
  double total = 0.0;
  for (int r = 0; r < opt.repeats; ++r) {
    StandaloneNet net = StandaloneNet::random(space, arch, rng, 1.0);
    Tensor x(in), delta(in);
    for (auto& v : x.storage()) v = static_cast<float>(gauss(rng));
    for (auto& v : delta.storage()) v = static_cast<float>(gauss(rng));
    total += perturbation_expansion([&](const Tensor& t) { return net.features(t, NormMode::train).value(); }, x, delta,
                                    opt.eps);
  }
  const double score = std::log(total / opt.repeats);
  if (!std::isfinite(score)) throw ScoringError("zen score of " + encode(arch) + " is not finite");
  return score;
}

std::uint64_t arch_seed(const SearchSpace& space, const ArchConfig& arch, std::uint64_t base) {
  // FNV-1a over the canonical encoding
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : encode(canonical(space, arch))) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return derive_seed(base, h);
}

ZenScorer::ZenScorer(SearchSpace space, ZenOptions opt, std::uint64_t seed)
    : space_(std::move(space)), opt_(opt), seed_(seed) {}

double ZenScorer::operator()(const ArchConfig& arch) {
  const std::string key = encode(canonical(space_, arch));
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  ++evaluations_;
  const double s = zen_score(space_, arch, opt_, arch_seed(space_, arch, seed_));
  cache_.emplace(key, s);
  return s;
}

// ---- constraints ---------------------------------------------------------------

std::string to_string(const Constraint& c) {
  return std::string(c.kind == ResourceKind::flops ? "flops" : "params") + " <= " + std::to_string(c.bound);
}

bool satisfies(const ResourceReport& r, const Constraint& c) {
  return (c.kind == ResourceKind::flops ? r.flops : r.params) <= c.bound;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Constraint parse_constraint(const std::string& line, int lineno) {
  const auto op = line.find("<=");
  const std::string where = "constraint line " + std::to_string(lineno) + ": ";
  if (op == std::string::npos) throw std::invalid_argument(where + "expected 'flops <= N' or 'params <= N', got '" + line + "'");
  const std::string key = trim(std::string_view(line).substr(0, op));
  const std::string num = trim(std::string_view(line).substr(op + 2));
  Constraint c;
  if (key == "flops") {
    c.kind = ResourceKind::flops;
  } else if (key == "params") {
    c.kind = ResourceKind::params;
  } else {
    throw std::invalid_argument(where + "unknown resource '" + key + "'");
  }
  double value = 0;
  const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
  if (ec != std::errc() || ptr != num.data() + num.size() || !(value > 0) || value > 9.2e18) {
    throw std::invalid_argument(where + "budget must be a positive number, got '" + num + "'");
  }
  c.bound = static_cast<std::int64_t>(std::floor(value));
  return c;
}

}  // namespace

ConstraintSet parse_constraints(std::string_view text) {
  ConstraintSet out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    out.push_back(parse_constraint(line, lineno));
  }
  if (out.empty()) throw std::invalid_argument("constraint set is empty");
  return out;
}

ConstraintSet load_constraints(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open constraint file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_constraints(ss.str());
}

void check_feasible(const SearchSpace& space, const ConstraintSet& constraints) {
  // resources are monotone in every choice, so the smallest arch is the cheapest
  const auto cheapest = count_resources(space, smallest(space));
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    if (!satisfies(cheapest, constraints[i])) {
      throw InfeasibleError("budget " + std::to_string(i) + " (" + to_string(constraints[i]) +
                            ") is below the smallest network (flops " + std::to_string(cheapest.flops) + ", params " +
                            std::to_string(cheapest.params) + ")");
    }
  }
}

// ---- search ----------------------------------------------------------------------

bool better_candidate(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.resources.flops != b.resources.flops) return a.resources.flops < b.resources.flops;
  return encode(a.arch) < encode(b.arch);
}

namespace {

std::optional<ScoredCandidate> best_of(const SearchSpace& space, const Scorer& scorer, std::vector<ArchConfig> pool,
                                       int constraint_id) {
  std::optional<ScoredCandidate> best;
  for (auto& a : pool) {
    ScoredCandidate c;
    c.arch = canonical(space, a);
    c.resources = count_resources(space, c.arch);
    c.constraint_id = constraint_id;
    try {
      c.score = scorer(c.arch);
    } catch (const ScoringError&) {
      continue;
    }
    if (!std::isfinite(c.score)) continue;
    if (!best || better_candidate(c, *best)) best = std::move(c);
  }
  return best;
}

ScoredCandidate search_one(const SearchSpace& space, const Scorer& scorer, const Constraint& budget, int id,
                           const SearchOptions& opt, Rng& rng) {
  std::vector<ArchConfig> pool;
  if (opt.exhaustive) {
    enumerate_archs(space, [&](const ArchConfig& a) {
      if (satisfies(count_resources(space, a), budget)) pool.push_back(a);
    });
  } else {
    if (opt.samples_per_constraint < 1) throw std::invalid_argument("samples_per_constraint must be at least 1");
    for (int draws = 0; draws < opt.max_draws && static_cast<int>(pool.size()) < opt.samples_per_constraint; ++draws) {
      ArchConfig a = sample_uniform(space, rng);
      if (satisfies(count_resources(space, a), budget)) pool.push_back(std::move(a));
    }
  }
  if (pool.empty()) {
    throw InfeasibleError("no architecture satisfies budget " + std::to_string(id) + " (" + to_string(budget) + ")" +
                          (opt.exhaustive ? "" : " within " + std::to_string(opt.max_draws) + " draws"));
  }
  auto best = best_of(space, scorer, std::move(pool), id);
  if (!best) throw ScoringError("every candidate for budget " + std::to_string(id) + " had a non-finite score");
  return *best;
}

}  // namespace

std::vector<ScoredCandidate> zero_shot_search(const SearchSpace& space, const Scorer& scorer,
                                              const ConstraintSet& constraints, const SearchOptions& opt, Rng& rng) {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    out.push_back(search_one(space, scorer, constraints[i], static_cast<int>(i), opt, rng));
  }
  return out;
}

std::vector<ScoredCandidate> narrow_space(const SearchSpace& space, const Scorer& scorer,
                                          const ConstraintSet& constraints, const SearchOptions& opt, Rng& rng) {
  std::vector<ScoredCandidate> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    auto c = search_one(space, scorer, constraints[i], static_cast<int>(i), opt, rng);
    if (seen.count(encode(c.arch)) && !opt.exhaustive) c = search_one(space, scorer, constraints[i], static_cast<int>(i), opt, rng);
    seen.insert(encode(c.arch));
    out.push_back(std::move(c));
  }
  return out;
}

std::string narrowed_to_text(const std::vector<ScoredCandidate>& members, const ConstraintSet& constraints) {
  std::string out = "# narrowed space: one arch and its budget per line\n";
  for (const auto& m : members) {
    out += encode(m.arch);
    out += '\t';
    out += to_string(constraints.at(static_cast<std::size_t>(m.constraint_id)));
    out += '\n';
  }
  return out;
}

std::vector<ArchConfig> parse_narrowed(std::string_view text, const SearchSpace& space) {
  std::vector<ArchConfig> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto tab = line.find_first_of(" \t");
    out.push_back(decode(line.substr(0, tab), space));
  }
  if (out.empty()) throw std::invalid_argument("narrowed space file lists no architectures");
  return out;
}

ValidationResult validation_search(Supernet& supernet, std::span<const ArchConfig> candidates, const Dataset& data) {
  if (candidates.empty()) throw std::invalid_argument("validation_search: empty candidate list");
  std::optional<ValidationResult> best;
  for (const auto& a : candidates) {
    ValidationResult r{canonical(supernet.space(), a), evaluate(supernet, a, data),
                       count_resources(supernet.space(), a).flops};
    const bool better = !best || r.accuracy > best->accuracy ||
                        (r.accuracy == best->accuracy &&
                         (r.flops < best->flops || (r.flops == best->flops && encode(r.arch) < encode(best->arch))));
    if (better) best = std::move(r);
  }
  return *best;
}

}  // namespace enas
