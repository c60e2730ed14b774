#pragma once

#include <map>
#include <string>

#include "tabrec/model.hpp"
#include "tabrec/synth.hpp"
#include "tabrec/train.hpp"

namespace tabrec {

// `key = value` lines with # comments. Ranges use "lo..hi".
class ConfigFile {
 public:
  ConfigFile() = default;
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  void get_range(const std::string& key, int& lo, int& hi) const;

  // Unknown keys are configuration bugs; callers pass the set they consume.
  void check_known(const std::vector<std::string>& known) const;

  void apply(SynthConfig& cfg) const;
  void apply(ModelConfig& cfg) const;
  void apply(TrainConfig& cfg) const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace tabrec
