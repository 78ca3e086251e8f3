#include "enas/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace enas {

using nlohmann::json;
namespace pt = boost::property_tree;

const std::vector<std::string>& method_labels() {
  static const std::vector<std::string> labels{"matchnas",          "spos",           "spos+fixmatch",
                                               "fixmatch-single",   "supervised-single", "matchnas-narrow",
                                               "matchnas-sandwich"};
  return labels;
}

MethodSpec method_spec(std::string_view label) {
  const std::string l(label);
  if (l == "matchnas") return {l, LossMode::matchnas, SamplingStrategy::spos, false};
  if (l == "spos") return {l, LossMode::supervised_nas, SamplingStrategy::spos, false};
  if (l == "spos+fixmatch") return {l, LossMode::naive_ssl_nas, SamplingStrategy::spos, false};
  if (l == "fixmatch-single") return {l, LossMode::fixmatch_single, SamplingStrategy::spos, false};
  if (l == "supervised-single") return {l, LossMode::supervised_single, SamplingStrategy::spos, false};
  if (l == "matchnas-narrow") return {l, LossMode::matchnas, SamplingStrategy::spos, true};
  if (l == "matchnas-sandwich") return {l, LossMode::matchnas, SamplingStrategy::sandwich, false};
  std::string known;
  for (const auto& m : method_labels()) known += (known.empty() ? "" : ", ") + m;
  throw ConfigError("method: unknown label '" + l + "' (known: " + known + ")");
}

// ---- config ------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& raw, const char* what) {
  const std::string v = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected " + what + ", got '" + v + "'");
  }
  return out;
}

int as_int(const std::string& key, const std::string& v) { return parse_number<int>(key, v, "an integer"); }
std::uint64_t as_u64(const std::string& key, const std::string& v) {
  return parse_number<std::uint64_t>(key, v, "a non-negative integer");
}
double as_double(const std::string& key, const std::string& v) { return parse_number<double>(key, v, "a number"); }
bool as_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto& t = c.train;
  auto& d = c.data;
  if (key == "space") c.space = v;
  else if (key == "method") c.method = method_spec(v).label;
  else if (key == "seed") c.seed = as_u64(key, v);
  else if (key == "out") c.out = v;
  else if (key == "constraints") c.constraints = v;
  else if (key == "narrow_file") c.narrow_file = v;
  else if (key == "data.path") d.path = v;
  else if (key == "data.classes") d.synthetic.classes = as_int(key, v);
  else if (key == "data.per_class") d.synthetic.per_class = as_int(key, v);
  else if (key == "data.resolution") d.synthetic.resolution = as_int(key, v);
  else if (key == "data.channels") d.synthetic.channels = as_int(key, v);
  else if (key == "data.noise_sigma") d.synthetic.noise_sigma = as_double(key, v);
  else if (key == "data.jitter") d.synthetic.jitter = as_double(key, v);
  else if (key == "data.class_offset") d.synthetic.class_offset = as_int(key, v);
  else if (key == "data.labelled_per_class") d.split.labelled_per_class = as_int(key, v);
  else if (key == "data.test_fraction") d.split.test_fraction = as_double(key, v);
  else if (key == "data.calibration_count") d.split.calibration_count = as_int(key, v);
  else if (key == "data.seed") d.seed = as_u64(key, v);
  else if (key == "train.n_subnets") t.n_subnets = as_int(key, v);
  else if (key == "train.tau") t.tau = as_double(key, v);
  else if (key == "train.mu") t.mu = as_int(key, v);
  else if (key == "train.labelled_batch") t.labelled_batch = as_int(key, v);
  else if (key == "train.epochs") t.epochs = as_int(key, v);
  else if (key == "train.lr0") t.lr0 = as_double(key, v);
  else if (key == "train.weight_decay") t.weight_decay = as_double(key, v);
  else if (key == "train.distill_view") t.distill_view = wrap(key, [&] { return parse_distill_view(v); });
  else if (key == "train.seed_model") t.seed_model = v;
  else if (key == "train.weight_labelled") t.term_weights.labelled = as_double(key, v);
  else if (key == "train.weight_unlabelled") t.term_weights.unlabelled = as_double(key, v);
  else if (key == "search.samples") c.search.samples_per_constraint = as_int(key, v);
  else if (key == "search.exhaustive") c.search.exhaustive = as_bool(key, v);
  else if (key == "search.max_draws") c.search.max_draws = as_int(key, v);
  else if (key == "zen.repeats") c.zen.repeats = as_int(key, v);
  else if (key == "zen.eps") c.zen.eps = as_double(key, v);
  else if (key == "zen.batch") c.zen.batch = as_int(key, v);
  else if (key == "zen.seed") c.zen_seed = as_u64(key, v);
  else if (key == "compare.methods") {
    c.compare_methods = split_list(v);
    for (const auto& m : c.compare_methods) wrap(key, [&] { return method_spec(m); });
    if (c.compare_methods.empty()) throw ConfigError(key + ": empty method list");
  } else if (key == "compare.seeds") {
    c.compare_seeds.clear();
    for (const auto& s : split_list(v)) c.compare_seeds.push_back(as_u64(key, s));
    if (c.compare_seeds.empty()) throw ConfigError(key + ": empty seed list");
  } else if (key == "latency.ms_per_gflop") c.latency.ms_per_gflop = as_double(key, v);
  else if (key == "latency.offset_ms") c.latency.offset_ms = as_double(key, v);
  else throw ConfigError(key + ": unknown configuration key");
}

void check_config(const ExperimentConfig& c) {
  try {
    validate_config(c.train);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (c.zen.repeats < 1) throw ConfigError("zen.repeats: must be at least 1");
  if (!(c.zen.eps > 0)) throw ConfigError("zen.eps: must be positive");
  if (c.zen.batch < 1) throw ConfigError("zen.batch: must be at least 1");
  if (c.search.samples_per_constraint < 1) throw ConfigError("search.samples: must be at least 1");
  if (c.search.max_draws < 1) throw ConfigError("search.max_draws: must be at least 1");
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax: " + std::string(e.message()) + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig c;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      apply_key(c, key, node.data());
    } else {
      for (const auto& [sub, leaf] : node) {
        if (!leaf.empty()) throw ConfigError(key + "." + sub + ": nesting deeper than one section");
        apply_key(c, key + "." + sub, leaf.data());
      }
    }
  }
  check_config(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

namespace {

// shortest text that reads back to the same double
std::string shortest(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "space = " << c.space << "\nmethod = " << c.method << "\nseed = " << c.seed << "\nout = " << c.out << "\n";
  if (!c.constraints.empty()) o << "constraints = " << c.constraints << "\n";
  if (!c.narrow_file.empty()) o << "narrow_file = " << c.narrow_file << "\n";
  const auto& d = c.data;
  o << "\n[data]\n";
  if (!d.path.empty()) o << "path = " << d.path << "\n";
  o << "classes = " << d.synthetic.classes << "\nper_class = " << d.synthetic.per_class
    << "\nresolution = " << d.synthetic.resolution << "\nchannels = " << d.synthetic.channels
    << "\nnoise_sigma = " << shortest(d.synthetic.noise_sigma) << "\njitter = " << shortest(d.synthetic.jitter)
    << "\nclass_offset = " << d.synthetic.class_offset
    << "\nlabelled_per_class = " << d.split.labelled_per_class << "\ntest_fraction = " << shortest(d.split.test_fraction)
    << "\ncalibration_count = " << d.split.calibration_count << "\n";
  if (d.seed) o << "seed = " << *d.seed << "\n";
  const auto& t = c.train;
  o << "\n[train]\nn_subnets = " << t.n_subnets << "\ntau = " << shortest(t.tau) << "\nmu = " << t.mu
    << "\nlabelled_batch = " << t.labelled_batch << "\nepochs = " << t.epochs << "\nlr0 = " << shortest(t.lr0)
    << "\nweight_decay = " << shortest(t.weight_decay) << "\ndistill_view = " << to_string(t.distill_view)
    << "\nweight_labelled = " << shortest(t.term_weights.labelled) << "\nweight_unlabelled = " << shortest(t.term_weights.unlabelled) << "\n";
  if (!t.seed_model.empty()) o << "seed_model = " << t.seed_model << "\n";
  o << "\n[search]\nsamples = " << c.search.samples_per_constraint << "\nexhaustive = "
    << (c.search.exhaustive ? "true" : "false") << "\nmax_draws = " << c.search.max_draws << "\n";
  o << "\n[zen]\nrepeats = " << c.zen.repeats << "\neps = " << shortest(c.zen.eps) << "\nbatch = " << c.zen.batch << "\n";
  if (c.zen_seed) o << "seed = " << *c.zen_seed << "\n";
  o << "\n[compare]\nmethods = ";
  for (std::size_t i = 0; i < c.compare_methods.size(); ++i) o << (i ? "," : "") << c.compare_methods[i];
  o << "\nseeds = ";
  for (std::size_t i = 0; i < c.compare_seeds.size(); ++i) o << (i ? "," : "") << c.compare_seeds[i];
  o << "\n\n[latency]\nms_per_gflop = " << shortest(c.latency.ms_per_gflop) << "\noffset_ms = " << shortest(c.latency.offset_ms) << "\n";
  return o.str();
}

SearchSpace resolve_space(const std::string& source) {
  std::error_code ec;
  if (source.find('\n') == std::string::npos && std::filesystem::is_regular_file(source, ec)) {
    std::ifstream f(source);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_space_text(ss.str());
  }
  return build_space(source);
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const MethodSpec& method, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.loss_mode = method.loss_mode;
  t.sampling = method.sampling;
  t.seed = seed;
  return t;
}

Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::uint64_t s = cfg.data.seed.value_or(seed);
  if (!cfg.data.path.empty()) return load_binary(cfg.data.path);
  return split(gen_synthetic(cfg.data.synthetic, derive_seed(s, 11)), cfg.data.split, derive_seed(s, 12));
}

LatencyModel load_latency_model(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open latency calibration " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(f, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("latency calibration: " + std::string(e.message()));
  }
  LatencyModel m;
  for (const auto& [key, node] : tree) {
    if (key == "ms_per_gflop") m.ms_per_gflop = as_double(key, node.data());
    else if (key == "offset_ms") m.offset_ms = as_double(key, node.data());
    else throw ConfigError("latency calibration: unknown key " + key);
  }
  return m;
}

// ---- metrics -------------------------------------------------------------------

json to_json(const StepRecord& r, const std::string& method, std::uint64_t seed) {
  json terms = json::object();
  json order = json::array();
  for (const auto& [name, v] : r.terms) {
    terms[name] = v;
    order.push_back(name);
  }
  return json{{"type", "step"},       {"method", method},
              {"seed", seed},         {"step", r.step},
              {"lr", r.learning_rate}, {"total", r.total_loss},
              {"pass_fraction", r.pass_fraction}, {"terms", terms},
              {"term_order", order},  {"archs", r.archs}};
}

StepRecord step_from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.learning_rate = j.at("lr").get<double>();
  r.total_loss = j.at("total").get<double>();
  r.pass_fraction = j.at("pass_fraction").get<double>();
  for (const auto& name : j.at("term_order")) {
    const auto n = name.get<std::string>();
    r.terms.emplace_back(n, j.at("terms").at(n).get<double>());
  }
  r.archs = j.at("archs").get<std::vector<std::string>>();
  return r;
}

json to_json(const ResultRow& r) {
  return json{{"type", "result"}, {"method", r.method}, {"size", r.size}, {"arch", r.arch},
              {"flops", r.flops},  {"params", r.params}, {"top1", r.top1},  {"seed", r.seed},
              {"wall_seconds", r.wall_seconds}};
}

ResultRow result_from_json(const json& j) {
  ResultRow r;
  r.method = j.at("method").get<std::string>();
  r.size = j.at("size").get<std::string>();
  r.arch = j.at("arch").get<std::string>();
  r.flops = j.at("flops").get<std::int64_t>();
  r.params = j.at("params").get<std::int64_t>();
  r.top1 = j.at("top1").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

json to_json(const SearchRow& r) {
  return json{{"type", "search"}, {"constraint_id", r.constraint_id}, {"constraint", r.constraint},
              {"arch", r.arch},   {"score", r.score},                 {"flops", r.flops},
              {"params", r.params}};
}

SearchRow search_from_json(const json& j) {
  SearchRow r;
  r.constraint_id = j.at("constraint_id").get<int>();
  r.constraint = j.at("constraint").get<std::string>();
  r.arch = j.at("arch").get<std::string>();
  r.score = j.at("score").get<double>();
  r.flops = j.at("flops").get<std::int64_t>();
  r.params = j.at("params").get<std::int64_t>();
  return r;
}

SearchRow search_row(const ScoredCandidate& c, const ConstraintSet& constraints) {
  return SearchRow{c.constraint_id, to_string(constraints.at(static_cast<std::size_t>(c.constraint_id))), encode(c.arch),
                   c.score, c.resources.flops, c.resources.params};
}

MetricsSink::MetricsSink(const std::filesystem::path& path) : path_(path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw std::ios_base::failure("cannot create " + path.parent_path().string() + ": " + ec.message());
  out_.open(path, std::ios::app);
  if (!out_) throw std::ios_base::failure("cannot open metrics log " + path.string());
}

void MetricsSink::write(const json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw std::ios_base::failure("write failed: " + path_.string());
}

std::vector<json> read_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open metrics log " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string summary_csv(std::vector<ResultRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.seed, a.flops, a.arch) < std::tie(b.method, b.seed, b.flops, b.arch);
  });
  std::string out = "method,arch,flops,params,top1,seed\n";
  for (const auto& r : rows) {
    out += r.method + "," + r.arch + "," + std::to_string(r.flops) + "," + std::to_string(r.params) + "," +
           fixed(r.top1, 6) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string tradeoff_csv(const std::vector<ResultRow>& rows, const std::vector<SearchRow>& searches,
                         const LatencyModel& latency) {
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.arch}].push_back(&r);
  std::map<std::string, double> scores;
  for (const auto& s : searches) scores.emplace(s.arch, s.score);
  std::string out = "method,arch,flops,latency_ms,mean_top1,std_top1,seeds,score\n";
  for (const auto& [key, members] : groups) {
    double mean = 0;
    for (auto* r : members) mean += r->top1;
    mean /= static_cast<double>(members.size());
    double var = 0;
    for (auto* r : members) var += (r->top1 - mean) * (r->top1 - mean);
    const double sd = members.size() > 1 ? std::sqrt(var / static_cast<double>(members.size() - 1)) : 0.0;
    const auto flops = members.front()->flops;
    const double ms = latency.ms_per_gflop * static_cast<double>(flops) * 1e-9 + latency.offset_ms;
    auto it = scores.find(key.second);
    out += key.first + "," + key.second + "," + std::to_string(flops) + "," + fixed(ms, 6) + "," + fixed(mean, 6) + "," +
           fixed(sd, 6) + "," + std::to_string(members.size()) + "," + (it == scores.end() ? "" : fixed(it->second, 6)) +
           "\n";
  }
  return out;
}

// ---- orchestration ---------------------------------------------------------------

std::vector<std::pair<std::string, ArchConfig>> protocol_archs(const SearchSpace& space) {
  return {{"smallest", smallest(space)}, {"medium", canonical(space, medium(space))}, {"largest", largest(space)}};
}

CompareOutput run_compare(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const SearchSpace space = resolve_space(cfg.space);
  std::filesystem::create_directories(out_dir);
  const auto log_path = out_dir / "metrics.ndjson";
  std::filesystem::remove(log_path);
  MetricsSink sink(log_path);
  const Dataset data = make_dataset(cfg, cfg.seed);
  const auto archs = protocol_archs(space);

  CompareOutput out;
  for (const auto& label : cfg.compare_methods) {
    const MethodSpec method = method_spec(label);
    for (std::uint64_t seed : cfg.compare_seeds) {
      TrainConfig tcfg = train_config_for(cfg, method, seed);
      auto log_step = [&](const StepRecord& r) { sink.write(to_json(r, label, seed)); };
      auto emit = [&](const std::string& size, const ArchConfig& arch, double top1, double seconds) {
        const auto res = count_resources(space, arch);
        ResultRow row{label, size, encode(arch), res.flops, res.params, top1, seed, seconds};
        sink.write(to_json(row));
        out.rows.push_back(std::move(row));
      };
      if (is_single_network(method.loss_mode)) {
        for (const auto& [size, arch] : archs) {
          const auto t0 = std::chrono::steady_clock::now();
          StandaloneNet net = train_single(space, arch, data, tcfg, nullptr, log_step);
          const double top1 = evaluate(net, data);
          emit(size, arch, top1, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        continue;
      }
      if (method.narrowed) {
        if (!cfg.narrow_file.empty()) {
          std::ifstream f(cfg.narrow_file);
          if (!f) throw std::ios_base::failure("cannot open narrowed space " + cfg.narrow_file);
          std::ostringstream ss;
          ss << f.rdbuf();
          tcfg.finite_space = parse_narrowed(ss.str(), space);
        } else {
          if (cfg.constraints.empty()) throw ConfigError("matchnas-narrow needs constraints or narrow_file");
          const auto budgets = load_constraints(cfg.constraints);
          check_feasible(space, budgets);
          ZenScorer scorer(space, cfg.zen, cfg.zen_seed.value_or(seed));
          Rng rng(derive_seed(seed, 21));
          for (const auto& m : narrow_space(space, std::ref(scorer), budgets, cfg.search, rng)) {
            sink.write(to_json(search_row(m, budgets)));
            tcfg.finite_space.push_back(m.arch);
          }
        }
      }
      const auto t0 = std::chrono::steady_clock::now();
      Supernet net(space, seed);
      train(net, data, tcfg, log_step);
      const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& [size, arch] : archs) emit(size, arch, evaluate(net, arch, data), train_seconds);
    }
  }
  out.summary = summary_csv(out.rows);
  std::ofstream f(out_dir / "summary.csv", std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot write " + (out_dir / "summary.csv").string());
  f << out.summary;
  return out;
}

}  // namespace enas
