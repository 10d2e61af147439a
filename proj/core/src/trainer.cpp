#include "rtq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "rtq/error.hpp"
#include "rtq/objectives.hpp"
#include "rtq/tasks.hpp"

namespace rtq {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::vector<int> encode_checked(const Vocabulary& vocab, const std::string& text, std::size_t budget,
                                const char* what) {
  std::vector<int> ids = vocab.encode(text);
  if (ids.size() > budget) {
    throw ValidationError(std::string(what) + " '" + text + "' exceeds the text length limit");
  }
  return ids;
}

}  // namespace

std::vector<PreparedSample> prepare_samples(const SyntheticCorpus& corpus, const std::vector<std::size_t>& indices,
                                            const Vocabulary& vocab, const RunConfig& config) {
  // One slot is reserved for the leading special token and one for [EOS].
  const std::size_t budget = config.max_len - 1;
  std::vector<PreparedSample> out;
  for (auto i : indices) {
    const auto& s = corpus.samples.at(i);
    PreparedSample p;
    p.id = s.id;
    p.kind = s.kind;
    p.pixels = render(s, config.frames, config.image_size);
    p.caption = encode_checked(vocab, s.caption, budget, "caption");
    p.question = encode_checked(vocab, s.question, budget, "question");
    for (const auto& c : s.choices) {
      p.choices.push_back(vocab.encode(c));
      if (p.question.size() + p.choices.back().size() > budget) {
        throw ValidationError("question plus answer exceeds the text length limit");
      }
    }
    p.answer = s.answer;
    p.open_question = encode_checked(vocab, s.open_question, budget, "question");
    p.open_answer = encode_checked(vocab, s.open_answer, budget, "answer");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PreparedSample> select_samples(const SyntheticCorpus& corpus, const Vocabulary& vocab,
                                           const RunConfig& config, const std::string& split, std::size_t limit) {
  if (corpus.options.frames != config.frames || corpus.options.image_size != config.image_size) {
    throw ValidationError("corpus geometry (" + std::to_string(corpus.options.frames) + " frames, " +
                          std::to_string(corpus.options.image_size) + " px) does not match the config");
  }
  const auto kinds = config.kind_list();
  std::vector<std::size_t> idx;
  for (auto i : corpus.split_indices(split)) {
    if (std::find(kinds.begin(), kinds.end(), corpus.samples[i].kind) == kinds.end()) continue;
    idx.push_back(i);
    if (limit > 0 && idx.size() == limit) break;
  }
  if (idx.empty()) throw ValidationError("no samples in split '" + split + "' match the configured kinds");
  return prepare_samples(corpus, idx, vocab, config);
}

Trainer::Trainer(RunConfig config, Vocabulary vocab, std::vector<PreparedSample> train_set)
    : config_(std::move(config)), vocab_(std::move(vocab)), train_(std::move(train_set)) {
  config_.validate();
  if (train_.empty()) throw ValidationError("training set is empty");
  std::mt19937_64 rng(config_.seed);
  model_ = RtqModel::init(config_.model_config(vocab_.size()), rng);
  params_ = model_.parameters();
  steps_per_epoch_ = (train_.size() + config_.batch_size - 1) / config_.batch_size;
  total_steps_ = steps_per_epoch_ * config_.epochs;
  LrSchedule schedule;
  schedule.base_lr = config_.lr;
  schedule.min_lr = config_.min_lr;
  schedule.warmup_steps = config_.warmup_steps;
  schedule.total_steps = total_steps_;
  schedule.anneal_start_fraction = config_.anneal_start;
  AdamWOptions opts;
  opts.weight_decay = config_.weight_decay;
  optimizer_ = std::make_unique<AdamW>(params_, opts, schedule);
  if (config_.task == Task::retrieval) {
    momentum_model_ = model_.deep_copy();
    bank_ = std::make_unique<MemoryBank>(config_.bank_size, config_.proj_dim);
  }
}

std::vector<std::size_t> Trainer::batch_for(std::size_t step) const {
  const std::size_t epoch = step / steps_per_epoch_, b = step % steps_per_epoch_;
  std::vector<std::size_t> order(train_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(config_.seed ^ ((epoch + 1) * kGolden));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t lo = b * config_.batch_size, hi = std::min(order.size(), lo + config_.batch_size);
  return {order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi)};
}

namespace {

// -[log p(z+) + sum log(1 - p(z-))] with clamped probabilities.
Tensor binary_matching_loss(const Tensor& positive_logit, const std::vector<Tensor>& negative_logits) {
  const double lo = kScoreClamp, hi = 1.0 - kScoreClamp;
  Tensor total = log(clamp(sigmoid(positive_logit), lo, hi));
  for (const auto& z : negative_logits) {
    total = add(total, log(add_scalar(scale(clamp(sigmoid(z), lo, hi), -1.0), 1.0)));
  }
  return scale(sum(total), -1.0);
}

}  // namespace

Tensor Trainer::retrieval_loss(const std::vector<std::size_t>& batch, std::size_t step,
                               std::map<std::string, double>& parts) {
  const std::size_t B = batch.size();
  std::vector<Tensor> memories, videos, texts, mvideos, mtexts;
  std::vector<std::int64_t> ids;
  for (auto i : batch) {
    const auto& s = train_[i];
    const SegmentedVideoEmbedding v = encode_video(model_, s.pixels);
    memories.push_back(flatten_video(v));
    videos.push_back(video_vector(model_, v));
    texts.push_back(text_vector(model_, s.caption));
    ids.push_back(s.id);
    NoGradGuard guard;
    mvideos.push_back(video_vector(*momentum_model_, encode_video(*momentum_model_, s.pixels)));
    mtexts.push_back(text_vector(*momentum_model_, s.caption));
  }
  VtcInputs in;
  in.video = concat(videos, 0);
  in.text = concat(texts, 0);
  in.ids = ids;
  in.video_momentum = concat(mvideos, 0);
  in.text_momentum = concat(mtexts, 0);
  bank_->push_batch(in.video_momentum, in.text_momentum, ids);
  const Tensor temperature = model_.contrastive.temperature();
  const VtcLoss vtc = vtc_loss(in, *bank_, temperature, config_.distill_weight);
  parts["vtc"] = vtc.total.item();

  // Matching: one hard negative video per text and one hard negative text per video.
  std::mt19937_64 rng(config_.seed + (step + 1) * kGolden);
  const double tau = temperature.item();
  const auto Vd = in.video.data(), Td = in.text.data();
  const std::size_t D = in.video.dim(1);
  auto dot = [&](std::span<const double> a, std::size_t i, std::span<const double> b, std::size_t j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < D; ++k) acc += a[i * D + k] * b[j * D + k];
    return acc;
  };
  std::vector<Tensor> pos, neg_v, neg_t;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<bool> valid(B);
    bool any = false;
    for (std::size_t j = 0; j < B; ++j) {
      valid[j] = ids[j] != ids[i];
      any = any || valid[j];
    }
    if (!any) continue;
    std::vector<double> t2v(B), v2t(B);
    for (std::size_t j = 0; j < B; ++j) {
      t2v[j] = dot(Td, i, Vd, j);
      v2t[j] = dot(Vd, i, Td, j);
    }
    const std::size_t neg_video = sample_hard_negative(t2v, valid, tau, rng);
    const std::size_t neg_text = sample_hard_negative(v2t, valid, tau, rng);
    const auto& caption = train_[batch[i]].caption;
    pos.push_back(sigmoid(match_logit(model_, caption, memories[i])));
    neg_v.push_back(sigmoid(match_logit(model_, caption, memories[neg_video])));
    neg_t.push_back(sigmoid(match_logit(model_, train_[batch[neg_text]].caption, memories[i])));
  }
  Tensor loss = vtc.total;
  if (!pos.empty()) {
    const Tensor vtm = vtm_loss(concat(pos, 0), concat(neg_v, 0), concat(neg_t, 0));
    parts["vtm"] = vtm.item();
    loss = add(loss, vtm);
  }
  return loss;
}

Tensor Trainer::batch_loss(const std::vector<std::size_t>& batch, std::size_t step,
                           std::map<std::string, double>& parts) {
  if (config_.task == Task::retrieval) return retrieval_loss(batch, step, parts);
  Tensor total;
  for (auto i : batch) {
    const auto& s = train_[i];
    const Tensor video = flatten_video(encode_video(model_, s.pixels));
    Tensor term;
    if (config_.task == Task::caption || config_.task == Task::open_qa) {
      const bool qa = config_.task == Task::open_qa;
      const auto& target_words = qa ? s.open_answer : s.caption;
      const Tensor memory = qa ? question_memory(model_, s.open_question, video) : video;
      const std::vector<int> input = with_prefix(Vocabulary::kDecode, target_words);
      std::vector<int> targets(target_words.begin(), target_words.end());
      targets.push_back(Vocabulary::kEos);
      term = lm_loss(video_grounded_decode(model_.text, input, memory), targets, config_.label_smoothing);
    } else {
      std::vector<Tensor> negatives;
      Tensor positive;
      for (std::size_t c = 0; c < s.choices.size(); ++c) {
        const Tensor z = choice_logit(model_, s.question, s.choices[c], video);
        if (static_cast<int>(c) == s.answer) {
          positive = z;
        } else {
          negatives.push_back(z);
        }
      }
      term = binary_matching_loss(positive, negatives);
    }
    total = total.defined() ? add(total, term) : term;
  }
  total = scale(total, 1.0 / static_cast<double>(batch.size()));
  parts[config_.task == Task::mc_qa ? "matching" : "lm"] = total.item();
  return total;
}

StepLog Trainer::train_step() {
  const std::size_t step = optimizer_->step_count();
  if (step >= total_steps_) throw ContractError("training already finished");
  StepLog entry;
  entry.step = step;
  entry.lr = optimizer_->current_lr();
  const auto batch = batch_for(step);
  optimizer_->zero_grad();
  Tensor loss;
  try {
    loss = batch_loss(batch, step, entry.parts);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
  }
  entry.loss = loss.item();
  if (!std::isfinite(entry.loss)) {
    throw NumericError("non-finite loss " + std::to_string(entry.loss) + " at step " + std::to_string(step));
  }
  backward(loss);
  optimizer_->step();
  if (momentum_model_) {
    ParamList shadow = momentum_model_->parameters();
    momentum_update(params_, shadow, config_.momentum);
  }
  log_.push_back(entry);
  return entry;
}

void Trainer::train(std::optional<std::size_t> until, const std::function<void(const StepLog&)>& on_step) {
  const std::size_t end = std::min(until.value_or(total_steps_), total_steps_);
  while (optimizer_->step_count() < end) {
    const StepLog entry = train_step();
    if (on_step) on_step(entry);
  }
}

namespace {

const std::string kConfigPrefix = "config/";
const std::string kVocabPrefix = "vocab/";
const std::string kParamPrefix = "param/";

CheckpointEntry entry_of(const std::string& name, const Shape& shape, std::span<const double> data) {
  return {name, shape, {data.begin(), data.end()}};
}

std::map<std::string, std::string> config_entries(const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, std::string> out;
  for (const auto& e : entries) {
    if (e.name.rfind(kConfigPrefix, 0) != 0) continue;
    const auto body = e.name.substr(kConfigPrefix.size());
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw VersionError("malformed config record '" + e.name + "'");
    out[body.substr(0, eq)] = body.substr(eq + 1);
  }
  return out;
}

Vocabulary vocab_entries(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::pair<int, std::string>> tokens;
  for (const auto& e : entries) {
    if (e.name.rfind(kVocabPrefix, 0) != 0) continue;
    if (e.data.size() != 1) throw VersionError("malformed vocabulary record '" + e.name + "'");
    tokens.emplace_back(static_cast<int>(e.data[0]), e.name.substr(kVocabPrefix.size()));
  }
  std::sort(tokens.begin(), tokens.end());
  std::vector<std::string> ordered;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].first != static_cast<int>(i)) throw VersionError("vocabulary ids are not contiguous");
    ordered.push_back(tokens[i].second);
  }
  try {
    return Vocabulary::from_tokens(std::move(ordered));
  } catch (const TokenizationError& e) {
    throw VersionError(std::string("checkpoint vocabulary invalid: ") + e.what());
  }
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw VersionError("checkpoint lacks record '" + name + "'");
}

void copy_into(const CheckpointEntry& e, Tensor& t) {
  if (e.shape != t.shape()) {
    throw VersionError("record '" + e.name + "' has shape " + shape_string(e.shape) + ", expected " +
                       shape_string(t.shape()));
  }
  auto dst = t.mutable_data();
  std::copy(e.data.begin(), e.data.end(), dst.begin());
}

void restore_params(const std::vector<CheckpointEntry>& entries, const std::string& prefix, ParamList& params) {
  for (auto& p : params) copy_into(find_entry(entries, prefix + p.name), p.tensor);
}

}  // namespace

void check_compatible(const std::vector<CheckpointEntry>& entries, const RunConfig& expected) {
  const auto stored = config_entries(entries);
  std::vector<std::string> keys = RunConfig::structural_keys();
  keys.push_back("task");
  for (const auto& key : keys) {
    auto it = stored.find(key);
    if (it == stored.end()) throw VersionError("checkpoint lacks config key '" + key + "'");
    if (it->second != expected.get(key)) {
      throw VersionError("checkpoint " + key + "=" + it->second + " does not match config " + key + "=" +
                         expected.get(key));
    }
  }
}

std::vector<CheckpointEntry> Trainer::checkpoint() const {
  std::vector<CheckpointEntry> out;
  const std::string text = config_.to_string();
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    out.push_back({kConfigPrefix + text.substr(start, end - start), {1}, {0.0}});
    start = end + 1;
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    out.push_back({kVocabPrefix + vocab_.tokens()[i], {1}, {static_cast<double>(i)}});
  }
  for (const auto& p : params_) out.push_back(entry_of(kParamPrefix + p.name, p.tensor.shape(), p.tensor.data()));
  auto& m = const_cast<AdamW&>(*optimizer_).first_moments();
  auto& v = const_cast<AdamW&>(*optimizer_).second_moments();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam_m/" + params_[i].name, params_[i].tensor.shape(), m[i]});
    out.push_back({"adam_v/" + params_[i].name, params_[i].tensor.shape(), v[i]});
  }
  if (momentum_model_) {
    for (const auto& p : momentum_model_->parameters()) {
      out.push_back(entry_of("momentum/" + p.name, p.tensor.shape(), p.tensor.data()));
    }
  }
  if (bank_ && !bank_->empty()) {
    const Tensor bv = bank_->videos(), bt = bank_->texts();
    out.push_back(entry_of("bank/video", bv.shape(), bv.data()));
    out.push_back(entry_of("bank/text", bt.shape(), bt.data()));
    std::vector<double> ids;
    for (auto id : bank_->ids()) ids.push_back(static_cast<double>(id));
    out.push_back({"bank/ids", {ids.size()}, ids});
  }
  out.push_back({"state/step", {1}, {static_cast<double>(optimizer_->step_count())}});
  return out;
}

void Trainer::restore(const std::vector<CheckpointEntry>& entries) {
  check_compatible(entries, config_);
  if (vocab_entries(entries).tokens() != vocab_.tokens()) throw VersionError("checkpoint vocabulary differs");
  restore_params(entries, kParamPrefix, params_);
  auto& m = optimizer_->first_moments();
  auto& v = optimizer_->second_moments();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& em = find_entry(entries, "adam_m/" + params_[i].name);
    const auto& ev = find_entry(entries, "adam_v/" + params_[i].name);
    if (em.data.size() != m[i].size() || ev.data.size() != v[i].size()) {
      throw VersionError("optimizer state size mismatch for " + params_[i].name);
    }
    m[i] = em.data;
    v[i] = ev.data;
  }
  if (momentum_model_) {
    ParamList shadow = momentum_model_->parameters();
    restore_params(entries, "momentum/", shadow);
    bank_->clear();
    const bool has_bank = std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.name == "bank/ids"; });
    if (has_bank) {
      const auto& bv = find_entry(entries, "bank/video");
      const auto& bt = find_entry(entries, "bank/text");
      const auto& bi = find_entry(entries, "bank/ids");
      const std::size_t d = bank_->dim();
      if (bv.data.size() != bi.data.size() * d || bt.data.size() != bv.data.size()) {
        throw VersionError("memory bank record sizes disagree");
      }
      for (std::size_t r = 0; r < bi.data.size(); ++r) {
        bank_->push(std::span<const double>(bv.data).subspan(r * d, d),
                    std::span<const double>(bt.data).subspan(r * d, d), static_cast<std::int64_t>(bi.data[r]));
      }
    }
  }
  const auto& st = find_entry(entries, "state/step");
  if (st.data.size() != 1 || st.data[0] < 0) throw VersionError("malformed step record");
  optimizer_->set_step_count(static_cast<std::size_t>(st.data[0]));
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, checkpoint()); }
void Trainer::load(const std::filesystem::path& path) { restore(load_checkpoint(path)); }

LoadedModel load_model(const std::vector<CheckpointEntry>& entries) {
  LoadedModel out;
  const auto stored = config_entries(entries);
  if (stored.empty()) throw VersionError("checkpoint carries no configuration");
  try {
    for (const auto& [k, v] : stored) out.config.set(k, v);
    out.config.validate();
  } catch (const ValidationError& e) {
    throw VersionError(std::string("checkpoint configuration rejected: ") + e.what());
  }
  out.vocab = vocab_entries(entries);
  std::mt19937_64 rng(out.config.seed);
  out.model = RtqModel::init(out.config.model_config(out.vocab.size()), rng);
  ParamList params = out.model.parameters();
  restore_params(entries, kParamPrefix, params);
  return out;
}

Metrics evaluate(const RtqModel& model, const RunConfig& config, const Vocabulary& vocab,
                 const std::vector<PreparedSample>& samples) {
  if (samples.empty()) throw ValidationError("evaluation set is empty");
  NoGradGuard guard;
  Metrics m;
  const std::size_t N = samples.size();
  if (config.task == Task::retrieval) {
    std::vector<Tensor> videos;
    std::vector<std::int64_t> ids;
    for (const auto& s : samples) {
      videos.push_back(s.pixels);
      ids.push_back(s.id);
    }
    const RetrievalIndex index = build_retrieval_index(model, videos, ids, std::min(config.recall_depth, N));
    std::vector<std::size_t> ranks;
    for (const auto& s : samples) {
      const auto ranked = retrieve(model, s.caption, index);
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (ranked[r].id == s.id) {
          ranks.push_back(r + 1);
          break;
        }
      }
    }
    for (std::size_t k : {1, 5, 10}) {
      if (k <= N) m["R@" + std::to_string(k)] = recall_at_k(ranks, k, N);
    }
    m["MdR"] = median_rank(ranks);
  } else if (config.task == Task::caption || config.task == Task::open_qa) {
    BeamOptions opts;
    opts.beam = config.beam;
    opts.max_len = config.max_len;
    opts.length_normalize = config.length_normalize;
    std::vector<std::vector<std::string>> cands, refs;
    std::vector<int> hits, ones;
    for (const auto& s : samples) {
      const auto& ref = config.task == Task::caption ? s.caption : s.open_answer;
      const DecodeResult r = config.task == Task::caption ? caption(model, s.pixels, opts)
                                                          : answer_open(model, s.pixels, s.open_question, opts);
      std::vector<int> words;
      for (int t : r.best.tokens) {
        if (t != Vocabulary::kEos) words.push_back(t);
      }
      auto strings = [&](const std::vector<int>& ids) {
        std::vector<std::string> w;
        for (int t : ids) w.push_back(vocab.token(t));
        return w;
      };
      cands.push_back(strings(words));
      refs.push_back(strings(ref));
      hits.push_back(words == ref && !r.truncated ? 1 : 0);
      ones.push_back(1);
    }
    m["accuracy"] = accuracy(hits, ones);
    if (config.task == Task::caption) m["bleu4"] = bleu4(cands, refs);
  } else {
    std::vector<int> preds, targets;
    for (const auto& s : samples) {
      const auto p = score_choices(model, s.pixels, s.question, s.choices);
      preds.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
      targets.push_back(s.answer);
    }
    m["accuracy"] = accuracy(preds, targets);
  }
  return m;
}

std::string metrics_json(const Metrics& metrics) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const char* key : {"R@1", "R@5", "R@10", "MdR", "accuracy", "bleu4"}) {
    auto it = metrics.find(key);
    if (it != metrics.end()) j[key] = it->second;
  }
  return j.dump() + "\n";
}

std::vector<SweepRow> sweep(const RunConfig& base, const SyntheticCorpus& corpus, const std::string& param,
                            const std::vector<std::size_t>& values) {
  if (param != "K" && param != "S") throw ValidationError("sweep parameter must be K or S, got '" + param + "'");
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  const Vocabulary vocab = grammar_vocabulary();
  std::vector<SweepRow> rows;
  for (auto value : values) {
    RunConfig c = base;
    c.set(param == "K" ? "cluster_after" : "segments", std::to_string(value));
    c.validate();
    Trainer trainer(c, vocab, select_samples(corpus, vocab, c, c.train_split, c.train_limit));
    trainer.train();
    const auto eval = select_samples(corpus, vocab, c, c.eval_split, c.eval_split == c.train_split ? c.train_limit : 0);
    rows.push_back({param, value, evaluate(trainer.model(), c, vocab, eval)});
  }
  return rows;
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["param"] = r.param;
    row["value"] = r.value;
    nlohmann::ordered_json m = nlohmann::ordered_json::parse(metrics_json(r.metrics));
    row["metrics"] = m;
    j.push_back(row);
  }
  return j.dump(1) + "\n";
}

}  // namespace rtq
