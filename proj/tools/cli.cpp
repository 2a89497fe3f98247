#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ksoftmax/checkpoint.hpp"
#include "ksoftmax/error.hpp"
#include "ksoftmax/eval.hpp"
#include "ksoftmax/experiment.hpp"
#include "ksoftmax/gradcheck.hpp"
#include "ksoftmax/training.hpp"

namespace fs = std::filesystem;

namespace ksoftmax::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitDiverged = 2;

// Flag twins of the config keys, e.g. --train.lr.
struct Overrides {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app, std::string_view prefix = {}) {
    for (const auto& key : ExperimentConfig::keys()) {
      if (!prefix.empty() && key.rfind(prefix, 0) != 0) continue;
      options[key] = app.add_option("--" + key, values[key], "Override " + key)->group("Config");
    }
  }

  void apply(ExperimentConfig& config) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) config.set(key, values.at(key));
    }
  }
};

std::uint64_t fallback_seed() {
  const char* env = std::getenv("KSOFTMAX_SEED");
  if (!env || !*env) return 1;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-') {
    throw Error(Errc::InvalidConfig, std::string("KSOFTMAX_SEED='") + env + "' is not a seed");
  }
  return v;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(Errc::Io, "failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string metrics_row(const EpochMetrics& m, int K) {
  const std::string csv = metrics_csv({m}, K);
  return csv.substr(csv.find('\n') + 1);
}

std::string epoch_line(const EpochMetrics& m) {
  std::ostringstream s;
  s << "epoch " << m.epoch << " train_loss " << format_double(m.train_loss) << " dev_ppl "
    << format_double(m.dev_ppl) << " pi_mean";
  for (double p : m.pi_mean) s << ' ' << format_double(p);
  s << " reg " << format_double(m.reg_term);
  return s.str();
}

ExperimentConfig base_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
}

void pin_seed(ExperimentConfig& config) {
  if (!config.seed) config.seed = fallback_seed();
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  ExperimentConfig config;
  Vocabulary vocab;
};

LoadedCheckpoint open_checkpoint(const fs::path& path, const std::string& vocab_path) {
  LoadedCheckpoint lc{load_checkpoint(path), {}, {}};
  lc.config = ExperimentConfig::parse(lc.checkpoint.config_text, path.string() + " (config)");
  const fs::path vp = vocab_path.empty() ? path.parent_path() / "vocab.txt" : fs::path(vocab_path);
  lc.vocab = Vocabulary::load(vp, lc.config.corpus.lowercase);
  return lc;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  Overrides overrides;
};

int cmd_train(TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> resumed;
  ExperimentConfig config;
  std::optional<Vocabulary> vocab;
  if (!a.resume.empty()) {
    LoadedCheckpoint lc = open_checkpoint(a.resume, {});
    resumed = std::move(lc.checkpoint);
    config = std::move(lc.config);
    vocab = std::move(lc.vocab);
  } else {
    config = base_config(a.config);
  }
  a.overrides.apply(config);
  pin_seed(config);

  const PreparedCorpus corpus = prepare_corpus(config.corpus, vocab ? &*vocab : nullptr);
  const TrainConfig tc = config.resolve(corpus.vocab.size(), *config.seed);
  const int K = tc.mixture.K();

  const fs::path dir(a.out);
  make_dir(dir);
  const std::string config_text = config.to_text();
  write_file(dir / "config.ini", config_text);
  corpus.vocab.save(dir / "vocab.txt");

  std::ofstream log(dir / "train.log", resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw Error(Errc::Io, "cannot write " + (dir / "train.log").string());
  log << "# ksoftmax train " << (resumed ? "resumed " : "started ") << utc_timestamp() << '\n';
  log << "vocab " << corpus.vocab.size() << " train_tokens " << corpus.split.train.num_tokens()
      << " dev_tokens " << corpus.split.dev.num_tokens() << " test_tokens "
      << corpus.split.test.num_tokens() << '\n';
  log << "kernels " << config.kernels << " seed " << tc.seed << '\n' << std::flush;

  const fs::path metrics_path = dir / "metrics.csv";
  if (!resumed || !fs::exists(metrics_path)) write_file(metrics_path, metrics_csv({}, K));
  std::ofstream metrics(metrics_path, std::ios::app | std::ios::binary);

  TrainOptions options;
  if (resumed) options.resume = &resumed->state;
  options.on_epoch = [&](const EpochMetrics& m) {
    metrics << metrics_row(m, K) << std::flush;
    const std::string line = epoch_line(m);
    log << line << '\n' << std::flush;
    out << line << '\n' << std::flush;
  };
  const TrainResult result = train(tc, corpus.split, options);

  save_checkpoint(dir / "best", result.best, config_text);
  save_checkpoint(dir / "last", result.last, config_text);
  log << "best epoch " << result.best.best_epoch << " dev_ppl "
      << format_double(result.best.best_dev_ppl) << '\n';
  if (result.diverged) {
    log << "diverged at step " << result.divergence_step << ": " << result.divergence << '\n';
    err << "error: training diverged: " << result.divergence << '\n';
    return kExitDiverged;
  }
  out << "best epoch " << result.best.best_epoch << " dev_ppl "
      << format_double(result.best.best_dev_ppl) << '\n';
  return kExitOk;
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";
  std::string vocab;
  Overrides overrides;
};

int cmd_eval(EvalArgs& a, std::ostream& out) {
  LoadedCheckpoint lc = open_checkpoint(a.checkpoint, a.vocab);
  a.overrides.apply(lc.config);
  const PreparedCorpus corpus = prepare_corpus(lc.config.corpus, &lc.vocab);
  const TrainConfig tc = lc.config.resolve(lc.vocab.size(), lc.config.seed.value_or(1));
  const Corpus& split = a.split == "train" ? corpus.split.train
                        : a.split == "dev" ? corpus.split.dev
                                           : corpus.split.test;
  const SplitStats stats = evaluate_split(tc, lc.checkpoint.state.model, split);
  out << a.split << " perplexity " << format_double(stats.perplexity) << '\n';
  return kExitOk;
}

// grid -----------------------------------------------------------------------

struct GridArgs {
  std::string config;
  std::string out;
  std::vector<std::string> axes;
  int jobs = 1;
  Overrides overrides;
};

GridAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(Errc::InvalidConfig, "--grid expects key=v1,v2,... but got '" + text + "'");
  }
  GridAxis axis{text.substr(0, eq), {}};
  std::string rest = text.substr(eq + 1);
  std::stringstream s(rest);
  std::string v;
  while (std::getline(s, v, ',')) {
    if (!v.empty()) axis.values.push_back(v);
  }
  return axis;
}

int cmd_grid(GridArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig config = base_config(a.config);
  a.overrides.apply(config);
  pin_seed(config);
  std::vector<GridAxis> grid;
  for (const auto& text : a.axes) {
    GridAxis axis = parse_axis(text);
    ExperimentConfig probe = config;
    for (const auto& v : axis.values) probe.set(axis.key, v);  // reject bad values up front
    grid.push_back(std::move(axis));
  }

  const PreparedCorpus corpus = prepare_corpus(config.corpus);
  const fs::path dir(a.out);
  make_dir(dir);
  write_file(dir / "config.ini", config.to_text());
  corpus.vocab.save(dir / "vocab.txt");

  const auto rows = grid_search(config, grid, corpus.split, corpus.vocab.size(), *config.seed, a.jobs);
  const std::string table = grid_csv(rows);
  write_file(dir / "grid.csv", table);
  bool all_diverged = true;
  for (const auto& row : rows) {
    const fs::path point = dir / ("point_" + std::to_string(row.rank));
    make_dir(point);
    ExperimentConfig pc = config;
    for (const auto& [k, v] : row.assignment) pc.set(k, v);
    write_file(point / "config.ini", pc.to_text());
    write_file(point / "metrics.csv",
               metrics_csv(row.result.metrics, pc.resolve(corpus.vocab.size()).mixture.K()));
    save_checkpoint(point / "best", row.result.best, pc.to_text());
    if (row.diverged) err << "point " << row.rank << " diverged: " << row.note << '\n';
    all_diverged = all_diverged && row.diverged;
  }
  out << table;
  return all_diverged ? kExitDiverged : kExitOk;
}

// gradcheck ------------------------------------------------------------------

struct GradcheckArgs {
  std::string kernels = "all";
  std::vector<int> dims{2, 8, 32};
  int trials = 100;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool pipeline = false;
};

std::vector<KernelKind> kernel_selection(const std::string& text) {
  if (text == "all") return {kAllKernels.begin(), kAllKernels.end()};
  std::vector<KernelKind> kinds;
  std::stringstream s(text);
  std::string name;
  while (std::getline(s, name, ',')) {
    if (!name.empty()) kinds.push_back(parse_kernel_kind(name));
  }
  if (kinds.empty()) throw Error(Errc::InvalidConfig, "no kernels selected");
  return kinds;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const std::uint64_t seed = a.seed_set ? a.seed : fallback_seed();
  bool ok = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (KernelKind kind : kernel_selection(a.kernels)) {
    for (int d : a.dims) {
      if (d < 1) throw Error(Errc::InvalidConfig, "dimensions must be positive");
      const AuditReport r = audit_kernel(kind, d, a.trials, seed);
      out << (r.passed() ? "ok   " : "FAIL ") << format_report(r) << '\n';
      ok = ok && r.passed();
    }
  }
  if (a.pipeline) {
    for (const auto& r : audit_pipeline(a.trials, seed)) {
      out << (r.passed() ? "ok   " : "FAIL ") << format_report(r) << '\n';
      ok = ok && r.passed();
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << (ok ? "all checks passed" : "some checks failed") << " in " << std::fixed
      << std::setprecision(2) << secs << " s\n";
  return ok ? kExitOk : kExitInvalid;
}

// curves ---------------------------------------------------------------------

struct CurvesArgs {
  std::string kernels = "rbf,wav,log,pow";
  double x_min = 0.0;
  double x_max = 10.0;
  int steps = 200;
  int d = 1;
  std::string out = "curves";
};

int cmd_curves(const CurvesArgs& a, std::ostream& out) {
  const auto specs = parse_kernel_list(a.kernels, KernelHyper{}, a.d);
  std::vector<KernelCurve> curves;
  for (const auto& spec : specs) curves.push_back(kernel_curve(spec, a.x_min, a.x_max, a.steps));
  const fs::path dir(a.out);
  make_dir(dir);
  std::map<std::string, int> seen;
  for (const auto& curve : curves) {
    std::string name(to_string(curve.spec.kind));
    if (const int n = seen[name]++; n > 0) name += "_" + std::to_string(n + 1);
    const fs::path path = dir / (name + ".csv");
    write_file(path, curve_csv(curve));
    out << path.string() << '\n';
  }
  return kExitOk;
}

// probe ----------------------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint;
  std::string vocab;
  std::vector<std::string> queries;
  std::vector<std::string> contexts;
  int top = 10;
  int predictions = 5;
  std::string format = "text";
  std::string out;
};

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
  const LoadedCheckpoint lc = open_checkpoint(a.checkpoint, a.vocab);
  const TrainConfig tc = lc.config.resolve(lc.vocab.size(), lc.config.seed.value_or(1));
  const ProbeReport report = disambiguation_probe(tc, lc.checkpoint.state.model, lc.vocab,
                                                  a.queries, a.contexts, a.top, a.predictions);
  const std::string text = a.format == "tsv" ? probe_tsv(report) : probe_text(report);
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return kExitOk;
}

// synth ----------------------------------------------------------------------

struct SynthArgs {
  ZipfCorpusOptions options;
  bool seed_set = false;
  std::string out;
};

int cmd_synth(SynthArgs& a, std::ostream& out) {
  if (!a.seed_set) a.options.seed = fallback_seed();
  std::string text;
  for (const auto& line : generate_zipf_corpus(a.options)) text += line + '\n';
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kernelized softmax language models", "ksoftmax"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints and metrics");
  train->add_option("--config", train_args.config, "Config file")->check(CLI::ExistingFile);
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--resume", train_args.resume, "Continue from a checkpoint")
      ->check(CLI::ExistingFile)
      ->excludes("--config");
  train_args.overrides.attach(*train);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Perplexity of a checkpoint on one split");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--split", eval_args.split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--vocab", eval_args.vocab, "Vocabulary file (default: next to the checkpoint)");
  eval_args.overrides.attach(*eval, "corpus.");

  GridArgs grid_args;
  auto* grid = app.add_subcommand("grid", "Grid search over config keys");
  grid->add_option("--config", grid_args.config, "Config file")->check(CLI::ExistingFile);
  grid->add_option("--out", grid_args.out, "Output directory")->required();
  grid->add_option("--grid", grid_args.axes, "key=v1,v2,... (repeatable)")->required();
  grid->add_option("--jobs", grid_args.jobs, "Concurrent training runs")
      ->check(CLI::PositiveNumber);
  grid_args.overrides.attach(*grid);

  GradcheckArgs gc_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck->add_option("--kernel", gc_args.kernels, "Kernel name, comma list or 'all'");
  gradcheck->add_option("--dims", gc_args.dims, "Dimensions")->delimiter(',');
  gradcheck->add_option("--trials", gc_args.trials, "Random draws per kernel and dimension")
      ->check(CLI::PositiveNumber);
  auto* gc_seed = gradcheck->add_option("--seed", gc_args.seed, "Seed");
  gradcheck->add_flag("--pipeline", gc_args.pipeline, "Also audit the full output-layer loss");

  CurvesArgs curve_args;
  auto* curves = app.add_subcommand("curves", "Tabulate kernel profiles and slopes");
  curves->add_option("--kernels", curve_args.kernels, "Comma list, inline overrides allowed");
  curves->add_option("--xmin", curve_args.x_min, "Smallest x");
  curves->add_option("--xmax", curve_args.x_max, "Largest x");
  curves->add_option("--steps", curve_args.steps, "Samples per curve");
  curves->add_option("--d", curve_args.d, "Dimension used for the default hyperparameters")
      ->check(CLI::PositiveNumber);
  curves->add_option("--out", curve_args.out, "Output directory");

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "Neighbors and per-component scores for query words");
  probe->add_option("--checkpoint", probe_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  probe->add_option("--vocab", probe_args.vocab, "Vocabulary file (default: next to the checkpoint)");
  probe->add_option("--query", probe_args.queries, "Query word (repeatable, or comma list)")
      ->required()
      ->delimiter(',');
  probe->add_option("--context", probe_args.contexts, "Context text (repeatable)");
  probe->add_option("--top", probe_args.top, "Neighbors per query")->check(CLI::PositiveNumber);
  probe->add_option("--predictions", probe_args.predictions, "Top predictions per context");
  probe->add_option("--format", probe_args.format, "text or tsv")
      ->check(CLI::IsMember({"text", "tsv"}));
  probe->add_option("--out", probe_args.out, "Write the report here instead of stdout");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic Zipf corpus");
  synth->add_option("--zipf-s", synth_args.options.zipf_s, "Zipf exponent");
  synth->add_option("--vocab", synth_args.options.vocab, "Vocabulary size including <s> and <unk>");
  synth->add_option("--tokens", synth_args.options.tokens, "Total tokens");
  auto* synth_seed = synth->add_option("--seed", synth_args.options.seed, "Seed");
  synth->add_option("--context-weight", synth_args.options.context_weight,
                    "Probability that a token depends on its predecessor");
  synth->add_option("--out", synth_args.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*train) return cmd_train(train_args, out, err);
    if (*eval) return cmd_eval(eval_args, out);
    if (*grid) return cmd_grid(grid_args, out, err);
    if (*gradcheck) {
      gc_args.seed_set = gc_seed->count() > 0;
      return cmd_gradcheck(gc_args, out);
    }
    if (*curves) return cmd_curves(curve_args, out);
    if (*probe) return cmd_probe(probe_args, out);
    if (*synth) {
      synth_args.seed_set = synth_seed->count() > 0;
      return cmd_synth(synth_args, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == Errc::DivergenceDetected ? kExitDiverged : kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"ksoftmax"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ksoftmax::cli
