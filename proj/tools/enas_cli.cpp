// enas: command-line front end (gen-data, train, search, narrow, eval,
// compare, report).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "enas/harness.hpp"

namespace fs = std::filesystem;
using namespace enas;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kIo = 4,
  kInfeasible = 5,
  kDivergence = 6,
  kOther = 7,
};

constexpr const char* kExitHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage error (bad flags or subcommand)\n"
    "  2  configuration error (config keys, space, arch, method)\n"
    "  3  data or file-format error\n"
    "  4  I/O error (unreadable or unwritable path)\n"
    "  5  infeasible resource budget\n"
    "  6  training diverged (non-finite loss)\n"
    "  7  any other failure\n";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string space;
  std::string constraints;
  std::string method;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.space.empty()) cfg.space = c.space;
  if (!c.constraints.empty()) cfg.constraints = c.constraints;
  if (!c.method.empty()) cfg.method = method_spec(c.method).label;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot write " + path.string());
  f << text;
  if (!f) throw std::ios_base::failure("write failed: " + path.string());
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "experiment seed (overrides config)");
  sub->add_option("--out", c.out, "output path (overrides config)");
  sub->add_option("--space", c.space, "space preset, space file or inline spec (overrides config)");
  sub->add_option("--constraints", c.constraints, "budget file: one 'flops <= N' or 'params <= N' per line");
  sub->add_option("--method", c.method, "method label (overrides config)");
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load(c);
  const Dataset d = make_dataset(cfg, cfg.seed);
  const fs::path out = c.out.empty() ? fs::path(cfg.out) / "data.ends" : fs::path(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_binary(d, out);
  std::cout << "wrote " << out.string() << ": " << d.size() << " images, "
            << d.indices(SplitTag::labelled).size() << " labelled, " << d.unlabelled_stream().size()
            << " in the unlabelled stream, " << d.indices(SplitTag::test).size() << " test, "
            << d.indices(SplitTag::calibration).size() << " calibration\n";
  return kOk;
}

Dataset data_for(const ExperimentConfig& cfg, const std::string& data_path) {
  if (!data_path.empty()) return load_binary(data_path);
  return make_dataset(cfg, cfg.seed);
}

int cmd_train(const Common& c, const std::string& data_path, const std::string& arch_text) {
  const auto cfg = load(c);
  const SearchSpace space = resolve_space(cfg.space);
  const MethodSpec method = method_spec(cfg.method);
  const Dataset data = data_for(cfg, data_path);
  TrainConfig tcfg = train_config_for(cfg, method, cfg.seed);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  MetricsSink sink(dir / "metrics.ndjson");
  auto log_step = [&](const StepRecord& r) { sink.write(to_json(r, method.label, cfg.seed)); };

  if (method.narrowed) {
    if (cfg.narrow_file.empty()) throw ConfigError("narrow_file: required for method " + method.label);
    std::ifstream f(cfg.narrow_file);
    if (!f) throw std::ios_base::failure("cannot open narrowed space " + cfg.narrow_file);
    std::ostringstream ss;
    ss << f.rdbuf();
    tcfg.finite_space = parse_narrowed(ss.str(), space);
  }
  if (is_single_network(method.loss_mode)) {
    const ArchConfig arch = arch_text.empty() ? largest(space) : decode(arch_text, space);
    StandaloneNet net = train_single(space, arch, data, tcfg, nullptr, log_step);
    save_model(net, dir / "model.enas");
  } else {
    Supernet net(space, cfg.seed);
    train(net, data, tcfg, log_step);
    save_model(net.extract_standalone(largest(space)), dir / "model.enas");
  }
  std::cout << "wrote " << (dir / "model.enas").string() << " and " << (dir / "metrics.ndjson").string() << "\n";
  return kOk;
}

int cmd_search(const Common& c, bool narrow) {
  const auto cfg = load(c);
  if (cfg.constraints.empty()) throw ConfigError("constraints: a budget file is required");
  const SearchSpace space = resolve_space(cfg.space);
  const ConstraintSet budgets = load_constraints(cfg.constraints);
  check_feasible(space, budgets);
  ZenScorer scorer(space, cfg.zen, cfg.zen_seed.value_or(cfg.seed));
  Rng rng(derive_seed(cfg.seed, 21));
  const auto found = narrow ? narrow_space(space, std::ref(scorer), budgets, cfg.search, rng)
                            : zero_shot_search(space, std::ref(scorer), budgets, cfg.search, rng);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  const auto report = dir / "search.ndjson";
  fs::remove(report);
  MetricsSink sink(report);
  for (const auto& cand : found) {
    const SearchRow row = search_row(cand, budgets);
    sink.write(to_json(row));
    std::cout << row.constraint << "\t" << row.arch << "\tscore " << row.score << "\tflops " << row.flops
              << "\tparams " << row.params << "\n";
  }
  if (narrow) {
    write_file(dir / "narrowed.txt", narrowed_to_text(found, budgets));
    std::cout << "wrote " << (dir / "narrowed.txt").string() << "\n";
  }
  return kOk;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& data_path,
             const std::vector<std::string>& arch_texts) {
  const auto cfg = load(c);
  if (model_path.empty()) throw ConfigError("--model: a model file is required");
  StandaloneNet model = load_model(model_path);
  const SearchSpace& space = model.space();
  const Dataset data = data_for(cfg, data_path);
  const bool is_supernet = model.arch() == largest(space);
  std::optional<Supernet> net;
  if (is_supernet) {
    net.emplace(space, cfg.seed);
    net->load_slices(model);
  }

  std::vector<std::pair<std::string, ArchConfig>> targets;
  if (arch_texts.empty()) {
    targets = is_supernet ? protocol_archs(space) : std::vector<std::pair<std::string, ArchConfig>>{{"custom", model.arch()}};
  } else {
    for (const auto& t : arch_texts) targets.emplace_back("custom", decode(t, space));
  }
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  MetricsSink sink(dir / "metrics.ndjson");
  for (const auto& [size, arch] : targets) {
    const auto t0 = std::chrono::steady_clock::now();
    double top1 = 0;
    if (net) {
      top1 = evaluate(*net, arch, data);
    } else {
      if (canonical(space, arch) != canonical(space, model.arch())) {
        throw ConfigError("arch " + encode(arch) + " is not the architecture stored in " + model_path);
      }
      top1 = evaluate(model, data);
    }
    const auto res = count_resources(space, arch);
    const ResultRow row{cfg.method, size, encode(canonical(space, arch)), res.flops, res.params, top1, cfg.seed,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    sink.write(to_json(row));
    std::cout << row.method << "," << row.arch << "," << row.flops << "," << row.params << "," << row.top1 << ","
              << row.seed << "\n";
  }
  return kOk;
}

int cmd_compare(const Common& c) {
  const auto cfg = load(c);
  const auto out = run_compare(cfg, cfg.out);
  std::cout << out.summary;
  return kOk;
}

int cmd_report(const Common& c, const std::vector<std::string>& logs, const std::string& latency_path) {
  const auto cfg = load(c);
  const fs::path dir(cfg.out);
  std::vector<fs::path> paths(logs.begin(), logs.end());
  if (paths.empty()) {
    for (const char* name : {"metrics.ndjson", "search.ndjson"})
      if (fs::exists(dir / name)) paths.push_back(dir / name);
  }
  if (paths.empty()) throw std::ios_base::failure("no metrics logs found in " + dir.string());
  std::vector<ResultRow> rows;
  std::vector<SearchRow> searches;
  for (const auto& p : paths) {
    for (const auto& rec : read_log(p)) {
      const auto type = rec.value("type", std::string());
      if (type == "result") rows.push_back(result_from_json(rec));
      else if (type == "search") searches.push_back(search_from_json(rec));
    }
  }
  const LatencyModel latency = latency_path.empty() ? cfg.latency : load_latency_model(latency_path);
  write_file(dir / "summary.csv", summary_csv(rows));
  write_file(dir / "tradeoff.csv", tradeoff_csv(rows, searches, latency));
  std::cout << "wrote " << (dir / "summary.csv").string() << " (" << rows.size() << " rows) and "
            << (dir / "tradeoff.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised one-shot architecture search at desk scale"};
  app.footer(kExitHelp);
  app.require_subcommand(1);

  Common common;
  std::string data_path, model_path, arch_text, latency_path;
  std::vector<std::string> arch_texts, logs;

  auto* gen = app.add_subcommand("gen-data", "generate and split a synthetic dataset");
  add_common(gen, common);
  auto* train_cmd = app.add_subcommand("train", "train a supernet (or a single network) and write model + metrics");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", data_path, "dataset file (default: synthetic from config)");
  train_cmd->add_option("--arch", arch_text, "architecture for single-network methods");
  auto* search = app.add_subcommand("search", "zero-shot search, one architecture per budget");
  add_common(search, common);
  auto* narrow = app.add_subcommand("narrow", "build a narrowed space file from the budgets");
  add_common(narrow, common);
  auto* eval = app.add_subcommand("eval", "evaluate architectures of a trained model and append result rows");
  add_common(eval, common);
  eval->add_option("--model", model_path, "model file written by train")->required();
  eval->add_option("--data", data_path, "dataset file (default: synthetic from config)");
  eval->add_option("--arch", arch_texts, "architecture encoding (repeatable; default smallest/medium/largest)");
  auto* compare = app.add_subcommand("compare", "run the multi-method, multi-seed comparison protocol");
  add_common(compare, common);
  auto* report = app.add_subcommand("report", "rebuild summary.csv and tradeoff.csv from metrics logs");
  add_common(report, common);
  report->add_option("--log", logs, "metrics log to read (repeatable; default <out>/*.ndjson)");
  report->add_option("--latency", latency_path, "linear latency calibration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train_cmd) return cmd_train(common, data_path, arch_text);
    if (*search) return cmd_search(common, false);
    if (*narrow) return cmd_search(common, true);
    if (*eval) return cmd_eval(common, model_path, data_path, arch_texts);
    if (*compare) return cmd_compare(common);
    if (*report) return cmd_report(common, logs, latency_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SpaceError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ArchError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kData;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kUsage;
}
