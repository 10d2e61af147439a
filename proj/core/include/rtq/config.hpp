#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rtq/model.hpp"
#include "rtq/synthetic.hpp"

namespace rtq {

enum class Task { retrieval, caption, open_qa, mc_qa };
const char* task_name(Task task);
Task parse_task(const std::string& name);

/// Everything a run needs. Defaults are the toy geometry with the reference
/// optimisation constants; see config_keys() for the documented key list.
struct RunConfig {
  Task task = Task::retrieval;
  // Geometry.
  std::size_t frames = 4;
  std::size_t segments = 2;
  std::size_t layers = 4;
  std::size_t cluster_after = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t patches_out = 16;
  std::size_t mlp_ratio = 4;
  std::size_t max_len = 32;
  std::size_t proj_dim = 64;
  bool message_tokens = true;
  std::string cluster_metric = "euclidean";
  // Optimisation.
  double lr = 1e-3;
  double min_lr = 0.0;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::size_t warmup_steps = 1000;
  double anneal_start = 0.1;
  double weight_decay = 0.04;
  // Objectives.
  std::size_t recall_depth = 128;  // Q
  std::size_t bank_size = 256;     // M
  double momentum = 0.995;
  double tau_init = 0.07;
  double distill_weight = 0.4;
  double label_smoothing = 0.1;
  // Decoding.
  std::size_t beam = 3;
  bool length_normalize = false;
  // Data.
  std::size_t samples = 64;
  std::string kinds = "descriptive,temporal,causal";
  std::string train_split = "train";
  std::string eval_split = "train";
  /// 0 keeps every sample of the split.
  std::size_t train_limit = 0;
  std::uint64_t seed = 0;

  /// Re-validates every structural constraint; throws ValidationError.
  void validate() const;
  ModelConfig model_config(std::size_t vocab_size) const;
  SyntheticOptions synthetic_options() const;
  std::vector<SampleKind> kind_list() const;

  /// key=value lines, '#' starts a comment. Unknown keys are errors.
  /// A leading `preset=<name>` line loads that preset first.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Applies one assignment; throws ValidationError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Canonical text form, one key per line in config_keys() order.
  std::string to_string() const;
  /// Keys whose values fix parameter shapes (checked on checkpoint load).
  static const std::vector<std::string>& structural_keys();
};

struct ConfigKey {
  std::string name;
  std::string doc;
};
/// Every accepted key with its documentation, in canonical order.
const std::vector<ConfigKey>& config_keys();

/// Named full-scale task settings plus the toy default.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace rtq
