#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "brainssl/train.hpp"

namespace brainssl {

/// Sectioned key=value run configuration with sections data, augment,
/// model, train, eval and output. Unknown sections or keys are rejected;
/// absent keys take documented defaults except the required ones.
class RunConfig {
 public:
  /// `base_dir` anchors relative paths. Throws ConfigError.
  static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  /// All keys (defaults included) as a sorted document; independent of the
  /// order in which keys were written.
  std::string canonical() const;
  /// SHA-256 of canonical().
  std::string hash() const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError naming the first absent key.
  void require(std::span<const std::string> keys) const;

  TrainConfig train_config(Objective objective) const;
  EvalConfig eval_config() const;
  DownstreamTask task() const;
  std::vector<std::uint64_t> seeds() const;
  /// Must name an existing file.
  std::filesystem::path manifest_path() const;
  /// Relative directories resolve against $BRAINSSL_OUTPUT_ROOT when set,
  /// otherwise against the configuration's directory.
  std::filesystem::path output_dir() const;

  static const std::vector<std::string>& pretrain_required();

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

/// The model.* entries describing the architecture of `cfg`; stored in
/// checkpoint metadata so evaluation can rebuild the network.
std::map<std::string, std::string> model_entries(const TrainConfig& cfg);
/// Inverse of model_entries; other keys are ignored. Throws ConfigError.
void apply_model_entries(const std::map<std::string, std::string>& entries, TrainConfig& cfg);

Shape3 parse_shape(const std::string& key, const std::string& value);

}  // namespace brainssl
