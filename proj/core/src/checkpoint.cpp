#include "ksoftmax/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw Error(Errc::Io, "malformed number '" + s + "' in checkpoint");
  return v;
}

void write_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw Error(Errc::Io, "checkpoint payload is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

// Allocates the tensor named `name` inside `m` with the given shape.
void allocate(Model& m, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (name == "encoder.E") {
    m.encoder.E.resize(rows, cols);
  } else if (name == "encoder.F") {
    m.encoder.F.resize(rows, cols);
  } else if (name == "encoder.bias") {
    m.encoder.bias.resize(rows);
  } else if (name == "output.W") {
    m.output.W.resize(rows, cols);
  } else if (name == "output.word_log_vars") {
    m.output.word_log_vars.resize(rows);
  } else if (name == "output.M") {
    m.output.M.resize(rows, cols);
  } else if (name == "output.component_log_vars") {
    m.output.component_log_vars.resize(rows);
  } else if (name.rfind("output.C", 0) == 0) {
    const auto k = static_cast<std::size_t>(std::stoul(name.substr(8)));
    if (k < 1 || k > 4096) throw Error(Errc::Io, "bad tensor name " + name);
    if (m.output.C.size() < k) m.output.C.resize(k);
    m.output.C[k - 1].resize(rows, cols);
  } else {
    throw Error(Errc::Io, "unknown tensor " + name + " in checkpoint");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const std::string& config_text) {
  std::ostringstream header;
  header << "ksoftmax-checkpoint " << kCheckpointVersion << '\n';
  header << "step " << state.step << '\n';
  header << "epoch " << state.epoch << '\n';
  header << "best_epoch " << state.best_epoch << '\n';
  header << "epochs_since_best " << state.epochs_since_best << '\n';
  header << "best_dev_ppl " << hex_double(state.best_dev_ppl) << '\n';
  header << "encoder " << state.model.encoder.n << ' ' << state.model.encoder.d_e << '\n';
  header << "rng " << state.rng_state << '\n';

  std::size_t config_lines = 0;
  for (char ch : config_text) config_lines += ch == '\n';
  if (!config_text.empty() && config_text.back() != '\n') ++config_lines;
  header << "config " << config_lines << '\n' << config_text;
  if (!config_text.empty() && config_text.back() != '\n') header << '\n';

  const std::pair<const char*, const Model*> groups[] = {
      {"", &state.model}, {"adam_m.", &state.adam_m}, {"adam_v.", &state.adam_v}};
  for (const auto& [prefix, model] : groups) {
    for (const auto& t : tensors(*model)) {
      header << "tensor " << prefix << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    }
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write checkpoint " + path.string());
  out << header.str();
  for (const auto& [prefix, model] : groups) {
    for (const auto& t : tensors(*model)) {
      // Row-major on disk; Eigen storage is column-major.
      for (Eigen::Index r = 0; r < t.rows; ++r) {
        for (Eigen::Index c = 0; c < t.cols; ++c) write_le(out, t.data[c * t.rows + r]);
      }
    }
  }
  if (!out) throw Error(Errc::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open checkpoint " + path.string());

  auto next_line = [&]() {
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::Io, "checkpoint header is truncated");
    return line;
  };
  auto expect = [&](const std::string& key) {
    std::istringstream ls(next_line());
    std::string got;
    ls >> got;
    if (got != key) throw Error(Errc::Io, "expected '" + key + "' in checkpoint, got '" + got + "'");
    std::string rest;
    std::getline(ls >> std::ws, rest);
    return rest;
  };

  {
    std::istringstream ls(next_line());
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != "ksoftmax-checkpoint") throw Error(Errc::Io, path.string() + " is not a checkpoint");
    if (version != kCheckpointVersion) {
      throw Error(Errc::Io, "unsupported checkpoint version " + std::to_string(version));
    }
  }

  Checkpoint ck;
  TrainState& s = ck.state;
  s.step = std::stoll(expect("step"));
  s.epoch = std::stoi(expect("epoch"));
  s.best_epoch = std::stoi(expect("best_epoch"));
  s.epochs_since_best = std::stoi(expect("epochs_since_best"));
  s.best_dev_ppl = parse_hex_double(expect("best_dev_ppl"));
  {
    std::istringstream ls(expect("encoder"));
    ls >> s.model.encoder.n >> s.model.encoder.d_e;
    if (!ls) throw Error(Errc::Io, "malformed encoder line in checkpoint");
  }
  s.rng_state = expect("rng");
  const auto config_lines = std::stoul(expect("config"));
  for (std::size_t i = 0; i < config_lines; ++i) ck.config_text += next_line() + '\n';

  struct Entry {
    Model* model;
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
  };
  std::vector<Entry> entries;
  while (true) {
    const std::string line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key, name;
    Eigen::Index rows = 0, cols = 0;
    ls >> key >> name >> rows >> cols;
    if (key != "tensor" || !ls || rows < 0 || cols < 0) {
      throw Error(Errc::Io, "malformed tensor line '" + line + "'");
    }
    Model* target = &s.model;
    if (name.rfind("adam_m.", 0) == 0) {
      target = &s.adam_m;
      name = name.substr(7);
    } else if (name.rfind("adam_v.", 0) == 0) {
      target = &s.adam_v;
      name = name.substr(7);
    }
    allocate(*target, name, rows, cols);
    entries.push_back({target, name, rows, cols});
  }
  for (Model* m : {&s.adam_m, &s.adam_v}) {
    m->encoder.n = s.model.encoder.n;
    m->encoder.d_e = s.model.encoder.d_e;
  }

  for (const auto& e : entries) {
    double* data = nullptr;
    for (auto& t : tensors(*e.model)) {
      if (t.name == e.name) data = t.data;
    }
    if (!data) throw Error(Errc::Io, "tensor " + e.name + " could not be placed");
    for (Eigen::Index r = 0; r < e.rows; ++r) {
      for (Eigen::Index c = 0; c < e.cols; ++c) data[c * e.rows + r] = read_le(in);
    }
  }
  return ck;
}

}  // namespace ksoftmax
