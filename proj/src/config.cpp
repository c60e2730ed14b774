#include "tabrec/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tabrec/array.hpp"

namespace tabrec {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

ConfigFile ConfigFile::parse_text(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("config line " + std::to_string(lineno) +
                    ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw IoError("config line " + std::to_string(lineno) +
                                   ": empty key");
    cf.kv_[key] = value;
  }
  return cf;
}

std::string ConfigFile::get_str(const std::string& key,
                                const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

int64_t ConfigFile::get_int(const std::string& key, int64_t dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  return std::stoll(it->second);
}

double ConfigFile::get_double(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  return std::stod(it->second);
}

bool ConfigFile::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw IoError("config key " + key + ": expected a boolean, got " + v);
}

void ConfigFile::get_range(const std::string& key, int& lo, int& hi) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return;
  const std::string& v = it->second;
  const size_t dots = v.find("..");
  if (dots == std::string::npos) {
    lo = hi = std::stoi(v);
    return;
  }
  lo = std::stoi(v.substr(0, dots));
  hi = std::stoi(v.substr(dots + 2));
}

void ConfigFile::check_known(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : kv_) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw IoError("unknown config key: " + key);
  }
}

void ConfigFile::apply(SynthConfig& cfg) const {
  cfg.seed = static_cast<uint64_t>(get_int("seed", cfg.seed));
  get_range("rows_range", cfg.rows_min, cfg.rows_max);
  get_range("cols_range", cfg.cols_min, cfg.cols_max);
  cfg.merge_probability =
      get_double("merge_probability", cfg.merge_probability);
  cfg.wireless_probability =
      get_double("wireless_probability", cfg.wireless_probability);
  cfg.descriptive_probability =
      get_double("descriptive_probability", cfg.descriptive_probability);
  cfg.empty_probability =
      get_double("empty_probability", cfg.empty_probability);
  cfg.image_size = static_cast<int>(get_int("image_size", cfg.image_size));
  cfg.feature_stride =
      static_cast<int>(get_int("feature_stride", cfg.feature_stride));
  cfg.charset = get_str("charset", cfg.charset);
}

void ConfigFile::apply(ModelConfig& cfg) const {
  cfg.d_model = static_cast<int>(get_int("d_model", cfg.d_model));
  cfg.n_enc_layers =
      static_cast<int>(get_int("n_enc_layers", cfg.n_enc_layers));
  cfg.n_dec_layers =
      static_cast<int>(get_int("n_dec_layers", cfg.n_dec_layers));
  cfg.n_heads = static_cast<int>(get_int("n_heads", cfg.n_heads));
  cfg.patch_size = static_cast<int>(get_int("patch_size", cfg.patch_size));
  cfg.d_ff = static_cast<int>(get_int("d_ff", cfg.d_ff));
  cfg.max_decode_len =
      static_cast<int>(get_int("max_decode_len", cfg.max_decode_len));
  cfg.use_ul = get_bool("use_ul", cfg.use_ul);
  cfg.use_vg = get_bool("use_vg", cfg.use_vg);
  cfg.use_lg = get_bool("use_lg", cfg.use_lg);
  cfg.focal_gamma = get_double("focal_gamma", cfg.focal_gamma);
  cfg.focal_alpha = get_double("focal_alpha", cfg.focal_alpha);
  cfg.lang_stop_grad = get_bool("lang_stop_grad", cfg.lang_stop_grad);
  cfg.charset = get_str("charset", cfg.charset);
}

void ConfigFile::apply(TrainConfig& cfg) const {
  cfg.batch_size = static_cast<int>(get_int("batch_size", cfg.batch_size));
  cfg.total_steps = get_int("total_steps", cfg.total_steps);
  cfg.peak_lr = get_double("peak_lr", cfg.peak_lr);
  cfg.warmup_frac = get_double("warmup_frac", cfg.warmup_frac);
  cfg.seed = static_cast<uint64_t>(get_int("seed", cfg.seed));
  cfg.checkpoint_interval =
      get_int("checkpoint_interval", cfg.checkpoint_interval);
  cfg.sigma_lr_mult = get_double("sigma_lr_mult", cfg.sigma_lr_mult);
  cfg.threads = static_cast<int>(get_int("threads", cfg.threads));
  apply(cfg.model);
}

}  // namespace tabrec
