#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtq/checkpoint.hpp"
#include "rtq/config.hpp"
#include "rtq/model.hpp"
#include "rtq/optim.hpp"
#include "rtq/synthetic.hpp"

namespace rtq {

/// A corpus sample rendered and tokenized for one run.
struct PreparedSample {
  std::int64_t id = 0;
  Tensor pixels;
  std::vector<int> caption;
  std::vector<int> question;
  std::vector<std::vector<int>> choices;
  int answer = 0;
  std::vector<int> open_question;
  std::vector<int> open_answer;
  SampleKind kind = SampleKind::descriptive;
};

std::vector<PreparedSample> prepare_samples(const SyntheticCorpus& corpus, const std::vector<std::size_t>& indices,
                                            const Vocabulary& vocab, const RunConfig& config);
/// Training or evaluation subset per config (split, kinds, train_limit).
std::vector<PreparedSample> select_samples(const SyntheticCorpus& corpus, const Vocabulary& vocab,
                                           const RunConfig& config, const std::string& split,
                                           std::size_t limit);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> parts;
};

using Metrics = std::map<std::string, double>;

class Trainer {
 public:
  Trainer(RunConfig config, Vocabulary vocab, std::vector<PreparedSample> train_set);

  std::size_t total_steps() const { return total_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t step() const { return optimizer_->step_count(); }
  /// Runs optimisation steps until `until` (default: the end of training).
  /// Throws NumericError naming the step when the loss is not finite.
  void train(std::optional<std::size_t> until = std::nullopt,
             const std::function<void(const StepLog&)>& on_step = {});
  /// One step; returns its log entry.
  StepLog train_step();

  const RtqModel& model() const { return model_; }
  RtqModel& model() { return model_; }
  const RunConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<StepLog>& log() const { return log_; }
  const MemoryBank* bank() const { return bank_.get(); }

  std::vector<CheckpointEntry> checkpoint() const;
  /// Restores parameters, optimizer moments, momentum encoder, bank and
  /// step counter. Throws VersionError when the checkpoint's structural
  /// configuration or vocabulary differs from this trainer's.
  void restore(const std::vector<CheckpointEntry>& entries);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  Tensor batch_loss(const std::vector<std::size_t>& batch, std::size_t step, std::map<std::string, double>& parts);
  Tensor retrieval_loss(const std::vector<std::size_t>& batch, std::size_t step, std::map<std::string, double>& parts);
  std::vector<std::size_t> batch_for(std::size_t step) const;

  RunConfig config_;
  Vocabulary vocab_;
  std::vector<PreparedSample> train_;
  RtqModel model_;
  std::optional<RtqModel> momentum_model_;
  std::unique_ptr<MemoryBank> bank_;
  ParamList params_;
  std::unique_ptr<AdamW> optimizer_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;
  std::vector<StepLog> log_;
};

/// Model rebuilt from a checkpoint (config entries, vocabulary, parameters).
struct LoadedModel {
  RunConfig config;
  Vocabulary vocab;
  RtqModel model;
};
LoadedModel load_model(const std::vector<CheckpointEntry>& entries);
/// Throws VersionError if the checkpoint's structural keys differ from `expected`.
void check_compatible(const std::vector<CheckpointEntry>& entries, const RunConfig& expected);

/// Task metrics over `samples`: R@1/R@5/R@10/MdR for retrieval, bleu4 and
/// accuracy (exact match) for captioning, accuracy for both QA tasks.
Metrics evaluate(const RtqModel& model, const RunConfig& config, const Vocabulary& vocab,
                 const std::vector<PreparedSample>& samples);
std::string metrics_json(const Metrics& metrics);

struct SweepRow {
  std::string param;
  std::size_t value = 0;
  Metrics metrics;
};
/// Retrains from the same seed for every value of `param` (K or S) and
/// evaluates each run.
std::vector<SweepRow> sweep(const RunConfig& base, const SyntheticCorpus& corpus, const std::string& param,
                            const std::vector<std::size_t>& values);
std::string sweep_json(const std::vector<SweepRow>& rows);

}  // namespace rtq
