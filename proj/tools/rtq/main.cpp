#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rtq/analysis.hpp"
#include "rtq/config.hpp"
#include "rtq/error.hpp"
#include "rtq/synthetic.hpp"
#include "rtq/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

rtq::RunConfig resolve_config(const CommonOptions& opts) {
  rtq::RunConfig config = opts.config_path.empty() ? rtq::RunConfig{} : rtq::RunConfig::load(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw rtq::ValidationError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) config.seed = *opts.seed;
  config.validate();
  return config;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw rtq::IoError("cannot write " + path);
  out << text;
  if (!out) throw rtq::IoError("failed writing " + path);
}

rtq::SyntheticCorpus corpus_for(const std::string& path, const rtq::RunConfig& config) {
  return path.empty() ? rtq::generate_corpus(config.synthetic_options()) : rtq::load_corpus(path);
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_seed, const std::string& out_help) {
  cmd->add_option("--config", opts.config_path, "key=value config file (first line may be preset=<name>)");
  cmd->add_option("--set", opts.overrides, "override one config key, key=value (repeatable)");
  if (with_seed) cmd->add_option("--seed", opts.seed, "overrides the config seed");
  cmd->add_option("--out", opts.out, out_help);
}

int run_generate(const CommonOptions& opts) {
  const rtq::RunConfig config = resolve_config(opts);
  const rtq::SyntheticCorpus corpus = rtq::generate_corpus(config.synthetic_options());
  const auto failures = rtq::self_check(corpus);
  if (!failures.empty()) {
    for (const auto& f : failures) std::cerr << "self-check: " << f << "\n";
    throw rtq::ValidationError("generated corpus failed its self-check");
  }
  if (opts.out.empty()) throw rtq::ValidationError("generate-data needs --out");
  rtq::save_corpus(corpus, opts.out);
  std::cerr << "wrote " << corpus.samples.size() << " samples to " << opts.out << "\n";
  return kExitOk;
}

int run_train(const CommonOptions& opts, const std::string& corpus_path, const std::string& resume,
              const std::string& log_path, std::optional<std::size_t> until, bool quiet) {
  const rtq::RunConfig config = resolve_config(opts);
  if (opts.out.empty()) throw rtq::ValidationError("train needs --out");
  const rtq::Vocabulary vocab = rtq::grammar_vocabulary();
  const auto corpus = corpus_for(corpus_path, config);
  rtq::Trainer trainer(config, vocab, rtq::select_samples(corpus, vocab, config, config.train_split, config.train_limit));
  if (!resume.empty()) trainer.load(resume);

  std::ofstream log;
  const std::string log_file = log_path.empty() ? opts.out + ".log.jsonl" : log_path;
  log.open(log_file, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw rtq::IoError("cannot write " + log_file);
  const std::size_t every = std::max<std::size_t>(1, trainer.total_steps() / 20);
  trainer.train(until, [&](const rtq::StepLog& e) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["lr"] = e.lr;
    j["loss"] = e.loss;
    for (const auto& [k, v] : e.parts) j[k] = v;
    log << j.dump() << "\n";
    if (!quiet && (e.step % every == 0 || e.step + 1 == trainer.total_steps())) {
      std::cerr << "step " << e.step + 1 << "/" << trainer.total_steps() << " loss " << e.loss << "\n";
    }
  });
  trainer.save(opts.out);
  std::cerr << "saved checkpoint at step " << trainer.step() << " to " << opts.out << "\n";
  return kExitOk;
}

int run_evaluate(const CommonOptions& opts, const std::string& corpus_path, const std::string& checkpoint,
                 bool config_given) {
  const auto entries = rtq::load_checkpoint(checkpoint);
  rtq::LoadedModel loaded = rtq::load_model(entries);
  rtq::RunConfig config = loaded.config;
  if (config_given) {
    config = resolve_config(opts);
    rtq::check_compatible(entries, config);
  }
  const auto corpus = corpus_for(corpus_path, config);
  const std::size_t limit = config.eval_split == config.train_split ? config.train_limit : 0;
  const auto samples = rtq::select_samples(corpus, loaded.vocab, config, config.eval_split, limit);
  write_text(opts.out, rtq::metrics_json(rtq::evaluate(loaded.model, config, loaded.vocab, samples)));
  return kExitOk;
}

std::vector<std::size_t> parse_values(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw rtq::ValidationError("sweep value '" + item + "' is not a non-negative integer");
    }
  }
  return out;
}

int run_sweep(const CommonOptions& opts, const std::string& corpus_path, const std::string& param,
              const std::string& values) {
  const rtq::RunConfig config = resolve_config(opts);
  const auto corpus = corpus_for(corpus_path, config);
  write_text(opts.out, rtq::sweep_json(rtq::sweep(config, corpus, param, parse_values(values))));
  return kExitOk;
}

int run_analyze(const std::string& predictions, const std::string& out) {
  const auto vectors = rtq::load_predictions(predictions);
  const rtq::Dendrogram dendrogram = rtq::cluster_methods(vectors);
  for (const auto& d : dendrogram.diagnostics) std::cerr << "warning: " << d << "\n";
  write_text(out, rtq::heatmap_json(vectors, dendrogram));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video-language toolkit: synthetic data, training, evaluation, sweeps and method analysis"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, sweep_opts;
  auto* gen = app.add_subcommand("generate-data", "write a deterministic synthetic corpus");
  add_common(gen, gen_opts, true, "corpus JSON path");

  std::string train_corpus, resume, log_path;
  std::optional<std::size_t> until;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model and save a checkpoint");
  add_common(train, train_opts, true, "checkpoint path");
  train->add_option("--corpus", train_corpus, "corpus JSON (default: generate from the config)");
  train->add_option("--resume", resume, "continue from this checkpoint");
  train->add_option("--log", log_path, "per-step loss log (default: <out>.log.jsonl)");
  train->add_option("--until-step", until, "stop after this many total steps");
  train->add_flag("--quiet", quiet, "suppress progress lines");

  std::string eval_corpus, checkpoint;
  auto* eval = app.add_subcommand("evaluate", "compute task metrics for a checkpoint");
  add_common(eval, eval_opts, true, "metrics JSON path (default: stdout)");
  eval->add_option("--corpus", eval_corpus, "corpus JSON (default: generate from the config)");
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();

  std::string sweep_corpus, param, values;
  auto* sweep = app.add_subcommand("sweep", "retrain and evaluate for each value of K or S");
  add_common(sweep, sweep_opts, true, "sweep JSON path (default: stdout)");
  sweep->add_option("--corpus", sweep_corpus, "corpus JSON (default: generate from the config)");
  sweep->add_option("--param", param, "K or S")->required()->check(CLI::IsMember({"K", "S"}));
  sweep->add_option("--values", values, "comma-separated values")->required();

  std::string predictions, analysis_out;
  auto* analyze = app.add_subcommand("analyze", "cluster methods by per-sample correctness");
  analyze->add_option("predictions", predictions, "CSV of method,sample_id,correct")->required();
  analyze->add_option("--out", analysis_out, "analysis JSON path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) return run_generate(gen_opts);
    if (*train) return run_train(train_opts, train_corpus, resume, log_path, until, quiet);
    if (*eval) {
      const bool config_given = !eval_opts.config_path.empty() || !eval_opts.overrides.empty();
      return run_evaluate(eval_opts, eval_corpus, checkpoint, config_given);
    }
    if (*sweep) return run_sweep(sweep_opts, sweep_corpus, param, values);
    if (*analyze) return run_analyze(predictions, analysis_out);
  } catch (const rtq::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const rtq::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const rtq::ParameterError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const rtq::TokenizationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const rtq::VersionError& e) {
    std::cerr << "version error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
