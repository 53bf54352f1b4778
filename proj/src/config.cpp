#include "normlab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "normlab/error.hpp"

namespace normlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ParseError("trailing characters in number '" + v + "'", line);
    return d;
  } catch (const std::invalid_argument&) {
    throw ParseError("bad number '" + v + "'", line);
  }
}

std::size_t parse_size(const std::string& v, std::size_t line) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size() || d < 0) throw ParseError("bad count '" + v + "'", line);
    return static_cast<std::size_t>(d);
  } catch (const std::invalid_argument&) {
    throw ParseError("bad count '" + v + "'", line);
  }
}

std::uint64_t parse_u64(const std::string& v, std::size_t line) {
  try {
    std::size_t pos = 0;
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw ParseError("bad seed '" + v + "'", line);
    return d;
  } catch (const std::invalid_argument&) {
    throw ParseError("bad seed '" + v + "'", line);
  }
}

bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("bad boolean '" + v + "'", line);
}

std::vector<std::size_t> parse_size_list(const std::string& v, std::size_t line) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(item, line));
  }
  if (out.empty()) throw ParseError("empty list", line);
  return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream stream(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;

  while (std::getline(stream, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", lineno);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "dataset" && section != "model" && section != "optimizer" &&
          section != "run") {
        throw ParseError("unknown section [" + section + "]", lineno);
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    if (section.empty()) throw ParseError("key outside any section", lineno);

    if (section == "dataset") {
      if (key == "source") cfg.source = value;
      else if (key == "path") cfg.path = value;
      else if (key == "labels_path") cfg.labels_path = value;
      else if (key == "split") cfg.split = parse_double(value, lineno);
      else if (key == "samples") cfg.samples = parse_size(value, lineno);
      else if (key == "features") cfg.features = parse_size(value, lineno);
      else if (key == "input_scale") cfg.input_scale = parse_double(value, lineno);
      else throw ParseError("unknown key '" + key + "' in [dataset]", lineno);
    } else if (section == "model") {
      if (key == "arch") cfg.arch = value;
      else if (key == "hidden") cfg.hidden = parse_size_list(value, lineno);
      else if (key == "conv_channels") cfg.conv_channels = parse_size_list(value, lineno);
      else if (key == "image_h") cfg.image_h = parse_size(value, lineno);
      else if (key == "image_w") cfg.image_w = parse_size(value, lineno);
      else if (key == "image_c") cfg.image_c = parse_size(value, lineno);
      else if (key == "kernel") cfg.kernel = parse_size(value, lineno);
      else if (key == "norm") cfg.norm = value;
      else if (key == "topk_k") cfg.topk_k = parse_size(value, lineno);
      else if (key == "norm_axis") cfg.norm_axis = value;
      else if (key == "epsilon") cfg.epsilon = parse_double(value, lineno);
      else if (key == "momentum") cfg.momentum = parse_double(value, lineno);
      else if (key == "weight_mode") cfg.weight_mode = value;
      else if (key == "weight_p") cfg.weight_p = value;
      else if (key == "activation") cfg.activation = value;
      else throw ParseError("unknown key '" + key + "' in [model]", lineno);
    } else if (section == "optimizer") {
      if (key == "lr") cfg.lr = parse_double(value, lineno);
      else if (key == "weight_decay") cfg.weight_decay = parse_double(value, lineno);
      else if (key == "lr_decay_every") cfg.lr_decay_every = parse_size(value, lineno);
      else if (key == "lr_decay_factor") cfg.lr_decay_factor = parse_double(value, lineno);
      else if (key == "mode") cfg.opt_mode = value;
      else if (key == "trajectory") cfg.trajectory = value;
      else if (key == "wd_last_layer_only") cfg.wd_last_layer_only = parse_bool(value, lineno);
      else throw ParseError("unknown key '" + key + "' in [optimizer]", lineno);
    } else {  // run
      if (key == "epochs") cfg.epochs = parse_size(value, lineno);
      else if (key == "batch") cfg.batch = parse_size(value, lineno);
      else if (key == "precision") cfg.precision = value;
      else if (key == "seed") cfg.seed = parse_u64(value, lineno);
      else throw ParseError("unknown key '" + key + "' in [run]", lineno);
    }
  }

  if (cfg.batch < 2) throw ParseError("batch size must be at least 2", 0);
  apply_env_overrides(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* env = std::getenv("NORMLAB_SEED")) {
    cfg.seed = parse_u64(env, 0);
  }
}

}  // namespace normlab
