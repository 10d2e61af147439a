#include "rtq/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "rtq/error.hpp"

namespace rtq {

const char* task_name(Task task) {
  switch (task) {
    case Task::retrieval: return "retrieval";
    case Task::caption: return "caption";
    case Task::open_qa: return "open_qa";
    case Task::mc_qa: return "mc_qa";
  }
  return "retrieval";
}

Task parse_task(const std::string& name) {
  if (name == "retrieval") return Task::retrieval;
  if (name == "caption") return Task::caption;
  if (name == "open_qa") return Task::open_qa;
  if (name == "mc_qa") return Task::mc_qa;
  throw ValidationError("unknown task '" + name + "' (expected retrieval, caption, open_qa or mc_qa)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ValidationError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct KeyHandler {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RTQ_SIZE_KEY(name, doc)                                                                     \
  KeyHandler {                                                                                      \
    {#name, doc}, [](RunConfig& c, const std::string& v) { c.name = to_size(#name, v); },           \
        [](const RunConfig& c) { return std::to_string(c.name); }                                   \
  }
#define RTQ_DOUBLE_KEY(name, doc)                                                                   \
  KeyHandler {                                                                                      \
    {#name, doc}, [](RunConfig& c, const std::string& v) { c.name = to_double(#name, v); },         \
        [](const RunConfig& c) { return fmt_double(c.name); }                                       \
  }
#define RTQ_BOOL_KEY(name, doc)                                                                     \
  KeyHandler {                                                                                      \
    {#name, doc}, [](RunConfig& c, const std::string& v) { c.name = to_bool(#name, v); },           \
        [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }                   \
  }
#define RTQ_STRING_KEY(name, doc)                                                                   \
  KeyHandler {                                                                                      \
    {#name, doc}, [](RunConfig& c, const std::string& v) { c.name = v; },                           \
        [](const RunConfig& c) { return c.name; }                                                   \
  }

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = {
      KeyHandler{{"task", "retrieval | caption | open_qa | mc_qa (default retrieval)"},
                 [](RunConfig& c, const std::string& v) { c.task = parse_task(v); },
                 [](const RunConfig& c) { return std::string(task_name(c.task)); }},
      RTQ_SIZE_KEY(frames, "frames per video F (default 4)"),
      RTQ_SIZE_KEY(segments, "segments S; frames must divide evenly (default 2)"),
      RTQ_SIZE_KEY(layers, "encoder depth L, also the MoED depth (default 4)"),
      RTQ_SIZE_KEY(cluster_after, "plain layers K before clustering, 1 <= K < L (default 2)"),
      RTQ_SIZE_KEY(hidden, "hidden size d (default 64)"),
      RTQ_SIZE_KEY(heads, "attention heads; must divide d (default 4)"),
      RTQ_SIZE_KEY(image_size, "frame side in pixels (default 32)"),
      RTQ_SIZE_KEY(patch_size, "patch side in pixels; P_in = (image_size / patch_size)^2 (default 8)"),
      RTQ_SIZE_KEY(patches_out, "kept patches per segment P_out (default 16)"),
      RTQ_SIZE_KEY(mlp_ratio, "feed-forward width multiplier (default 4)"),
      RTQ_SIZE_KEY(max_len, "text length limit including the leading special token (default 32)"),
      RTQ_SIZE_KEY(proj_dim, "contrastive projection size (default 64)"),
      RTQ_BOOL_KEY(message_tokens, "enable the cross-segment message-token attention (default true)"),
      RTQ_STRING_KEY(cluster_metric, "euclidean | cosine (default euclidean)"),
      RTQ_DOUBLE_KEY(lr, "peak learning rate (default 1e-3)"),
      RTQ_DOUBLE_KEY(min_lr, "learning-rate floor at the end of annealing (default 0)"),
      RTQ_SIZE_KEY(batch_size, "samples per optimisation step (default 8)"),
      RTQ_SIZE_KEY(epochs, "passes over the training split (default 10)"),
      RTQ_SIZE_KEY(warmup_steps, "linear warm-up steps (default 1000)"),
      RTQ_DOUBLE_KEY(anneal_start, "fraction of total steps where cosine annealing starts (default 0.1)"),
      RTQ_DOUBLE_KEY(weight_decay, "decoupled AdamW weight decay (default 0.04)"),
      RTQ_SIZE_KEY(recall_depth, "retrieval shortlist size Q, clipped to the corpus (default 128)"),
      RTQ_SIZE_KEY(bank_size, "memory bank capacity M (default 256)"),
      RTQ_DOUBLE_KEY(momentum, "momentum-encoder coefficient mu (default 0.995)"),
      RTQ_DOUBLE_KEY(tau_init, "initial contrastive temperature (default 0.07)"),
      RTQ_DOUBLE_KEY(distill_weight, "momentum distillation weight in VTC (default 0.4)"),
      RTQ_DOUBLE_KEY(label_smoothing, "LM label smoothing (default 0.1)"),
      RTQ_SIZE_KEY(beam, "beam width for generation (default 3)"),
      RTQ_BOOL_KEY(length_normalize, "rank finished beams by log-prob per token (default false)"),
      RTQ_SIZE_KEY(samples, "synthetic corpus size (default 64)"),
      RTQ_STRING_KEY(kinds, "comma-separated sample kinds (default descriptive,temporal,causal)"),
      RTQ_STRING_KEY(train_split, "split used for training: train | val | test | all (default train)"),
      RTQ_STRING_KEY(eval_split, "split used by evaluate (default train)"),
      RTQ_SIZE_KEY(train_limit, "use only the first N training samples; 0 = all (default 0)"),
      KeyHandler{{"seed", "master seed (default 0)"},
                 [](RunConfig& c, const std::string& v) { c.seed = to_size("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef RTQ_SIZE_KEY
#undef RTQ_DOUBLE_KEY
#undef RTQ_BOOL_KEY
#undef RTQ_STRING_KEY

const KeyHandler& handler(const std::string& key) {
  for (const auto& h : handlers()) {
    if (h.key.name == key) return h;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& h : handlers()) k.push_back(h.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) { handler(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return handler(key).get(*this); }

std::string RunConfig::to_string() const {
  std::string out;
  for (const auto& h : handlers()) out += h.key.name + "=" + h.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::structural_keys() {
  static const std::vector<std::string> keys = {"frames",     "segments",    "layers",   "cluster_after",
                                                "hidden",     "heads",       "image_size", "patch_size",
                                                "patches_out", "mlp_ratio",  "max_len",  "proj_dim"};
  return keys;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool first_assignment = true;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        if (!first_assignment) throw ValidationError("preset must be the first assignment");
        c = preset(value);
      } else {
        c.set(key, value);
      }
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(number) + ": " + e.what());
    }
    first_assignment = false;
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<SampleKind> RunConfig::kind_list() const {
  std::vector<SampleKind> out;
  std::stringstream ss(kinds);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_kind(item));
  }
  if (out.empty()) throw ValidationError("kinds must name at least one sample kind");
  return out;
}

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.encoder.layers = layers;
  m.encoder.cluster_after = cluster_after;
  m.encoder.hidden = hidden;
  m.encoder.heads = heads;
  m.encoder.frames = frames;
  m.encoder.segments = segments;
  m.encoder.patches_out = patches_out;
  m.encoder.image_size = image_size;
  m.encoder.patch_size = patch_size;
  m.encoder.mlp_ratio = mlp_ratio;
  m.encoder.message_tokens = message_tokens;
  m.encoder.clustering.metric = cluster_metric == "cosine" ? DistanceMetric::cosine : DistanceMetric::euclidean;
  m.encoder.cluster_seed = seed;
  m.vocab_size = vocab_size;
  m.max_len = max_len;
  m.proj_dim = proj_dim;
  m.tau_init = tau_init;
  return m;
}

SyntheticOptions RunConfig::synthetic_options() const {
  SyntheticOptions o;
  o.samples = samples;
  o.frames = frames;
  o.image_size = image_size;
  o.kinds = kind_list();
  o.seed = seed;
  return o;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError(m); };
  try {
    model_config(grammar_vocabulary().size()).validate();
  } catch (const ParameterError& e) {
    fail(e.what());
  }
  if (cluster_metric != "euclidean" && cluster_metric != "cosine") fail("cluster_metric must be euclidean or cosine");
  if (!(lr >= 0.0) || !(min_lr >= 0.0) || min_lr > lr) fail("learning rates must satisfy 0 <= min_lr <= lr");
  if (batch_size == 0) fail("batch_size must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (anneal_start < 0.0 || anneal_start > 1.0) fail("anneal_start must lie in [0, 1]");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (recall_depth == 0) fail("recall_depth must be positive");
  if (bank_size == 0) fail("bank_size must be positive");
  if (momentum < 0.0 || momentum > 1.0) fail("momentum must lie in [0, 1]");
  if (distill_weight < 0.0 || distill_weight > 1.0) fail("distill_weight must lie in [0, 1]");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must lie in [0, 1)");
  if (beam == 0) fail("beam must be positive");
  if (samples == 0) fail("samples must be positive");
  for (const auto* split : {&train_split, &eval_split}) {
    if (*split != "train" && *split != "val" && *split != "test" && *split != "all") {
      fail("split must be train, val, test or all, got '" + *split + "'");
    }
  }
  const auto k = kind_list();
  for (auto kind : k) {
    if (kind == SampleKind::causal && frames < 3) fail("causal samples need at least 3 frames");
  }
  if (image_size < 24) fail("synthetic frames need image_size >= 24");
}

namespace {

RunConfig full_scale(Task task, std::size_t F, std::size_t S, double lr, std::size_t bs, std::size_t epochs,
                      std::size_t Q) {
  RunConfig c;
  c.task = task;
  c.frames = F;
  c.segments = S;
  c.layers = 12;
  c.cluster_after = 8;
  c.hidden = 768;
  c.heads = 12;
  c.image_size = 224;
  c.patch_size = 16;
  c.patches_out = 196;
  c.proj_dim = 256;
  c.lr = lr;
  c.batch_size = bs;
  c.epochs = epochs;
  c.recall_depth = Q;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"toy",          "retrieval-msrvtt", "retrieval-didemo", "retrieval-activitynet",
          "caption-msrvtt", "caption-msvd",   "qa-msrvtt",        "qa-nextqa"};
}

RunConfig preset(const std::string& name) {
  if (name == "toy") return RunConfig{};
  if (name == "retrieval-msrvtt") return full_scale(Task::retrieval, 12, 6, 2e-6, 64, 6, 128);
  if (name == "retrieval-didemo") return full_scale(Task::retrieval, 12, 6, 2e-5, 128, 10, 128);
  if (name == "retrieval-activitynet") return full_scale(Task::retrieval, 32, 16, 2e-5, 64, 10, 512);
  if (name == "caption-msrvtt") return full_scale(Task::caption, 12, 6, 5e-6, 128, 10, 128);
  if (name == "caption-msvd") return full_scale(Task::caption, 12, 6, 2e-6, 64, 10, 128);
  if (name == "qa-msrvtt") return full_scale(Task::open_qa, 12, 6, 2e-5, 128, 6, 128);
  if (name == "qa-nextqa") return full_scale(Task::mc_qa, 16, 4, 1e-5, 64, 6, 128);
  throw ValidationError("unknown preset '" + name + "'");
}

}  // namespace rtq
