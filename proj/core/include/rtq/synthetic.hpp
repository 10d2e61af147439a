#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtq/tensor.hpp"
#include "rtq/vocabulary.hpp"

namespace rtq {

enum class SampleKind { descriptive, temporal, causal };
const char* kind_name(SampleKind kind);
SampleKind parse_kind(const std::string& name);

/// A shape with a piecewise-linear track: still at (x, y) before
/// move_start, moving (dx, dy) per frame until move_end, then still.
/// Drawn only for visible_from <= frame < visible_to.
struct SceneObject {
  int color = 0;
  int shape = 0;
  int x = 0, y = 0;
  int dx = 0, dy = 0;
  int move_start = 0, move_end = 0;
  int visible_from = 0, visible_to = 0;

  int x_at(int frame) const;
  int y_at(int frame) const;
  bool visible_at(int frame) const { return frame >= visible_from && frame < visible_to; }
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SyntheticSample {
  std::int64_t id = 0;
  std::string split;  // train / val / test
  SampleKind kind = SampleKind::descriptive;
  std::vector<SceneObject> objects;
  std::string caption;
  std::string question;  // multiple choice
  std::vector<std::string> choices;
  int answer = 0;
  std::string open_question;
  std::string open_answer;
};

struct SyntheticOptions {
  std::size_t samples = 64;
  std::size_t frames = 4;
  std::size_t image_size = 32;
  std::vector<SampleKind> kinds = {SampleKind::descriptive, SampleKind::temporal, SampleKind::causal};
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  SyntheticOptions options;
  std::vector<SyntheticSample> samples;

  /// Indices of samples in `split`; "all" selects everything.
  std::vector<std::size_t> split_indices(const std::string& split) const;
};

/// Every word the grammar can emit.
const std::vector<std::string>& grammar_words();
Vocabulary grammar_vocabulary();

/// 80/10/10 split by FNV-1a hash of the sample id.
std::string split_for_id(std::int64_t id);

SyntheticCorpus generate_corpus(const SyntheticOptions& options);

/// [F, 3, H, W] pixels in [0, 1] on a black background.
Tensor render(const SyntheticSample& sample, std::size_t frames, std::size_t image_size);

/// Annotations recomputed from the object tracks alone.
struct Annotation {
  std::string caption;
  std::string question;
  std::vector<std::string> choices;
  int answer = 0;
  std::string open_question;
  std::string open_answer;
};
Annotation annotate(SampleKind kind, const std::vector<SceneObject>& objects, std::size_t frames,
                    const std::vector<std::string>& choice_order);

/// Same scene played backwards: frame f shows what frame F - 1 - f showed.
std::vector<SceneObject> reverse_objects(const std::vector<SceneObject>& objects, std::size_t frames);

/// Checks that every annotation is derivable from its tracks and that
/// reversal changes the answer of every sample. Returns failures (empty on success).
std::vector<std::string> self_check(const SyntheticCorpus& corpus);

std::string corpus_to_json(const SyntheticCorpus& corpus);
SyntheticCorpus corpus_from_json(const std::string& text);
void save_corpus(const SyntheticCorpus& corpus, const std::string& path);
SyntheticCorpus load_corpus(const std::string& path);

}  // namespace rtq
