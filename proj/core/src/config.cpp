#include "ksoftmax/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw Error(Errc::InvalidConfig, std::string(key) + ": expected " + std::string(want) +
                                       ", got '" + std::string(value) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::string_view want) {
  value = trim(value);
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, want);
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  const double v = parse_number<double>(key, value, "a number");
  if (!std::isfinite(v)) bad_value(key, value, "a finite number");
  return v;
}

int parse_int(std::string_view key, std::string_view value) {
  return parse_number<int>(key, value, "an integer");
}

bool parse_bool(std::string_view key, std::string_view value) {
  value = trim(value);
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Entry {
  const char* key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define KS_REAL(name, field)                                                                     \
  Entry {                                                                                        \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_real(name, v); },        \
        [](const ExperimentConfig& c) { return format_double(c.field); }                         \
  }
#define KS_INT(name, field)                                                                      \
  Entry {                                                                                        \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_int(name, v); },         \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                        \
  }
#define KS_BOOL(name, field)                                                                     \
  Entry {                                                                                        \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_bool(name, v); },        \
        [](const ExperimentConfig& c) { return fmt_bool(c.field); }                              \
  }
#define KS_AUTO_REAL(name, field)                                                                \
  Entry {                                                                                        \
    name,                                                                                        \
        [](ExperimentConfig& c, std::string_view v) {                                            \
          if (trim(v) == "auto") {                                                               \
            c.field.reset();                                                                     \
          } else {                                                                               \
            c.field = parse_real(name, v);                                                       \
          }                                                                                      \
        },                                                                                       \
        [](const ExperimentConfig& c) {                                                          \
          return c.field ? format_double(*c.field) : std::string("auto");                        \
        }                                                                                        \
  }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      Entry{"corpus.path", [](ExperimentConfig& c, std::string_view v) { c.corpus.path = trim(v); },
            [](const ExperimentConfig& c) { return c.corpus.path; }},
      KS_BOOL("corpus.synthetic", corpus.synthetic),
      KS_REAL("corpus.zipf_s", corpus.zipf_s),
      KS_INT("corpus.synth_vocab", corpus.synth_vocab),
      Entry{"corpus.synth_tokens",
            [](ExperimentConfig& c, std::string_view v) {
              c.corpus.synth_tokens =
                  parse_number<std::size_t>("corpus.synth_tokens", v, "a token count");
            },
            [](const ExperimentConfig& c) { return std::to_string(c.corpus.synth_tokens); }},
      Entry{"corpus.synth_seed",
            [](ExperimentConfig& c, std::string_view v) {
              c.corpus.synth_seed = parse_number<std::uint64_t>("corpus.synth_seed", v, "a seed");
            },
            [](const ExperimentConfig& c) { return std::to_string(c.corpus.synth_seed); }},
      KS_REAL("corpus.context_weight", corpus.context_weight),
      KS_INT("corpus.max_vocab", corpus.max_vocab),
      KS_INT("corpus.min_count", corpus.min_count),
      KS_BOOL("corpus.lowercase", corpus.lowercase),
      Entry{"corpus.split_seed",
            [](ExperimentConfig& c, std::string_view v) {
              c.corpus.split_seed = parse_number<std::uint64_t>("corpus.split_seed", v, "a seed");
            },
            [](const ExperimentConfig& c) { return std::to_string(c.corpus.split_seed); }},
      KS_REAL("corpus.train_frac", corpus.train_frac),
      KS_REAL("corpus.dev_frac", corpus.dev_frac),
      Entry{"model.kernels",
            [](ExperimentConfig& c, std::string_view v) { c.kernels = trim(v); },
            [](const ExperimentConfig& c) { return c.kernels; }},
      KS_INT("model.n", n),
      KS_INT("model.d", d),
      Entry{"model.d_e",
            [](ExperimentConfig& c, std::string_view v) {
              c.d_e = trim(v) == "auto" ? 0 : parse_int("model.d_e", v);
            },
            [](const ExperimentConfig& c) {
              return c.d_e == 0 ? std::string("auto") : std::to_string(c.d_e);
            }},
      KS_REAL("model.p", hyper.p),
      KS_AUTO_REAL("model.alpha", hyper.alpha),
      KS_REAL("model.c", hyper.c),
      KS_AUTO_REAL("model.gamma", hyper.gamma),
      KS_REAL("model.a", hyper.a),
      KS_REAL("model.b", hyper.b),
      KS_INT("model.num_gauss", hyper.num_gauss),
      KS_BOOL("model.learn_variances", hyper.learn_variances),
      KS_BOOL("model.mog_log_of_sum", hyper.mog_log_of_sum),
      Entry{"model.variance_mode",
            [](ExperimentConfig& c, std::string_view v) {
              v = trim(v);
              if (v == "per_datum") {
                c.variance_mode = VarianceMode::per_datum;
              } else if (v == "per_component") {
                c.variance_mode = VarianceMode::per_component;
              } else {
                bad_value("model.variance_mode", v, "per_datum or per_component");
              }
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.variance_mode)); }},
      KS_INT("train.batch_size", batch_size),
      KS_REAL("train.lr", learning_rate),
      Entry{"train.optimizer",
            [](ExperimentConfig& c, std::string_view v) {
              v = trim(v);
              if (v == "adam") {
                c.optimizer = OptimizerKind::adam;
              } else if (v == "sgd") {
                c.optimizer = OptimizerKind::sgd;
              } else {
                bad_value("train.optimizer", v, "adam or sgd");
              }
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.optimizer)); }},
      KS_REAL("train.clip_norm", clip_norm),
      KS_INT("train.max_epochs", max_epochs),
      KS_INT("train.patience", patience),
      KS_REAL("train.rho", rho),
      Entry{"train.seed",
            [](ExperimentConfig& c, std::string_view v) {
              if (trim(v) == "auto") {
                c.seed.reset();
              } else {
                c.seed = parse_number<std::uint64_t>("train.seed", v, "a seed");
              }
            },
            [](const ExperimentConfig& c) {
              return c.seed ? std::to_string(*c.seed) : std::string("auto");
            }},
  };
  return entries;
}

#undef KS_REAL
#undef KS_INT
#undef KS_BOOL
#undef KS_AUTO_REAL

const Entry& find_entry(std::string_view key) {
  for (const auto& e : registry()) {
    if (key == e.key) return e;
  }
  throw Error(Errc::InvalidConfig, "unknown key '" + std::string(key) + "'");
}

void apply_override(KernelSpec& spec, std::string_view key, std::string_view value) {
  const std::string k(trim(key));
  if (k == "p") {
    spec.p = parse_real("p", value);
  } else if (k == "alpha") {
    spec.alpha = parse_real("alpha", value);
  } else if (k == "c") {
    spec.c = parse_real("c", value);
  } else if (k == "gamma") {
    spec.gamma = parse_real("gamma", value);
  } else if (k == "a") {
    spec.a = parse_real("a", value);
  } else if (k == "b") {
    spec.b = parse_real("b", value);
  } else if (k == "num_gauss") {
    spec.num_gauss = parse_int("num_gauss", value);
  } else if (k == "learn_variances") {
    spec.learn_variances = parse_bool("learn_variances", value);
  } else if (k == "mog_log_of_sum") {
    spec.mog_log_of_sum = parse_bool("mog_log_of_sum", value);
  } else {
    throw Error(Errc::InvalidConfig, "unknown kernel option '" + k + "'");
  }
}

}  // namespace

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

std::string_view to_string(VarianceMode mode) {
  return mode == VarianceMode::per_datum ? "per_datum" : "per_component";
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void TrainConfig::validate() const {
  mixture.validate();
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (n < 1) fail("model.n must be at least 1");
  if (d_e < 1) fail("model.d_e must be positive");
  if (batch_size < 1) fail("train.batch_size must be positive");
  if (!(learning_rate >= 0.0)) fail("train.lr must be nonnegative");
  if (!(clip_norm > 0.0)) fail("train.clip_norm must be positive");
  if (max_epochs < 0) fail("train.max_epochs must be nonnegative");
  if (patience < 1) fail("train.patience must be at least 1");
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  find_entry(trim(key)).set(*this, value);
}

std::string ExperimentConfig::get(std::string_view key) const {
  return find_entry(trim(key)).get(*this);
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.emplace_back(e.key);
    return out;
  }();
  return names;
}

ExperimentConfig ExperimentConfig::parse(std::string_view text, std::string_view source) {
  ExperimentConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;

    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    auto where = [&] { return std::string(source) + ":" + std::to_string(line_no) + ": "; };
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(Errc::InvalidConfig, where() + "unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::InvalidConfig, where() + "expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    try {
      cfg.set(full, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(Errc::InvalidConfig, where() + e.detail());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& e : registry()) {
    const std::string_view key = e.key;
    const auto dot = key.find('.');
    const std::string sec(key.substr(0, dot));
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << e.get(*this) << '\n';
  }
  return out.str();
}

std::vector<KernelSpec> parse_kernel_list(std::string_view text, const KernelHyper& hyper, int d) {
  std::vector<KernelSpec> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    std::string_view item =
        trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    pos = comma == std::string_view::npos ? text.size() + 1 : comma + 1;
    if (item.empty()) throw Error(Errc::InvalidConfig, "model.kernels: empty kernel entry");

    int count = 1;
    if (const auto star = item.find('*'); star != std::string_view::npos) {
      count = parse_int("model.kernels", item.substr(0, star));
      if (count < 1) throw Error(Errc::InvalidConfig, "model.kernels: repeat count must be >= 1");
      item = trim(item.substr(star + 1));
    }
    const auto colon = item.find(':');
    KernelSpec spec = KernelSpec::with_defaults(parse_kernel_kind(trim(item.substr(0, colon))), d);
    spec.p = hyper.p;
    spec.c = hyper.c;
    spec.a = hyper.a;
    spec.b = hyper.b;
    if (hyper.alpha) spec.alpha = *hyper.alpha;
    if (hyper.gamma) spec.gamma = *hyper.gamma;
    spec.num_gauss = hyper.num_gauss;
    spec.learn_variances = hyper.learn_variances;
    spec.mog_log_of_sum = hyper.mog_log_of_sum;

    std::string_view rest = colon == std::string_view::npos ? std::string_view{} : item.substr(colon + 1);
    while (!rest.empty()) {
      const auto next = rest.find(':');
      const std::string_view opt = rest.substr(0, next);
      const auto eq = opt.find('=');
      if (eq == std::string_view::npos) {
        throw Error(Errc::InvalidConfig, "model.kernels: option '" + std::string(opt) +
                                             "' must be name=value");
      }
      apply_override(spec, opt.substr(0, eq), opt.substr(eq + 1));
      rest = next == std::string_view::npos ? std::string_view{} : rest.substr(next + 1);
    }
    spec.validate();
    for (int i = 0; i < count; ++i) out.push_back(spec);
  }
  return out;
}

TrainConfig ExperimentConfig::resolve(int V, std::uint64_t fallback_seed) const {
  TrainConfig t;
  t.mixture.components = parse_kernel_list(kernels, hyper, d);
  t.mixture.d = d;
  t.mixture.V = V;
  t.mixture.rho = rho;
  t.mixture.variance_mode = variance_mode;
  t.n = n;
  t.d_e = d_e == 0 ? d : d_e;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.optimizer = optimizer;
  t.clip_norm = clip_norm;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.seed = seed.value_or(fallback_seed);
  t.validate();
  return t;
}

}  // namespace ksoftmax
