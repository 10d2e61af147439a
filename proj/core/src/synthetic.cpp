#include "rtq/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rtq/error.hpp"

namespace rtq {

namespace {

const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "purple", "cyan", "white"};
const double kRgb[7][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
const std::vector<std::string> kShapes = {"square", "circle", "triangle"};
const std::vector<std::string> kDirections = {"left", "right", "up", "down"};
const int kDirDx[4] = {-1, 1, 0, 0};
const int kDirDy[4] = {0, 0, -1, 1};
constexpr int kSize = 8;

int direction_of(int dx, int dy) {
  if (dx < 0) return 0;
  if (dx > 0) return 1;
  if (dy < 0) return 2;
  return 3;
}

std::string describe(const SceneObject& o) { return "a " + kColors[o.color] + " " + kShapes[o.shape]; }

bool moves(const SceneObject& o) { return (o.dx != 0 || o.dy != 0) && o.move_end > o.move_start; }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  // Inclusive range; hi < lo collapses to lo.
  if (hi <= lo) return lo;
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool overlaps(int ax, int ay, int bx, int by) {
  return ax < bx + kSize && bx < ax + kSize && ay < by + kSize && by < ay + kSize;
}

std::vector<SceneObject> make_descriptive(std::mt19937_64& rng, int F, int W) {
  SceneObject o;
  o.color = uniform_int(rng, 0, 6);
  o.shape = uniform_int(rng, 0, 2);
  const int dir = uniform_int(rng, 0, 3);
  const int step = std::max(1, std::min(4, (W - kSize - 2) / std::max(1, F - 1)));
  const int travel = step * (F - 1);
  o.dx = kDirDx[dir] * step;
  o.dy = kDirDy[dir] * step;
  // Keep the whole track inside the frame.
  const int lo_x = o.dx < 0 ? travel : 0, hi_x = W - kSize - (o.dx > 0 ? travel : 0);
  const int lo_y = o.dy < 0 ? travel : 0, hi_y = W - kSize - (o.dy > 0 ? travel : 0);
  o.x = uniform_int(rng, lo_x, hi_x);
  o.y = uniform_int(rng, lo_y, hi_y);
  o.move_start = 0;
  o.move_end = F - 1;
  o.visible_from = 0;
  o.visible_to = F;
  return {o};
}

std::vector<SceneObject> make_temporal(std::mt19937_64& rng, int F, int W) {
  SceneObject a, b;
  a.color = uniform_int(rng, 0, 6);
  b.color = (a.color + uniform_int(rng, 1, 6)) % 7;
  a.shape = uniform_int(rng, 0, 2);
  b.shape = uniform_int(rng, 0, 2);
  do {
    a.x = uniform_int(rng, 0, W - kSize);
    a.y = uniform_int(rng, 0, W - kSize);
    b.x = uniform_int(rng, 0, W - kSize);
    b.y = uniform_int(rng, 0, W - kSize);
  } while (overlaps(a.x, a.y, b.x, b.y));
  const int half = F / 2;
  a.visible_from = 0;
  a.visible_to = half;
  b.visible_from = half;
  b.visible_to = F;
  return {a, b};
}

std::vector<SceneObject> make_causal(std::mt19937_64& rng, int F, int W) {
  SceneObject a, b;
  a.color = uniform_int(rng, 0, 6);
  b.color = (a.color + uniform_int(rng, 1, 6)) % 7;
  a.shape = uniform_int(rng, 0, 2);
  b.shape = uniform_int(rng, 0, 2);
  const int dir = uniform_int(rng, 0, 3);
  const int step = std::max(1, std::min(3, (W - 2 * kSize - 2) / std::max(1, F - 1)));
  const int half = F / 2;
  a.dx = kDirDx[dir] * step;
  a.dy = kDirDy[dir] * step;
  b.dx = a.dx;
  b.dy = a.dy;
  a.move_start = 0;
  a.move_end = half;
  b.move_start = half;
  b.move_end = F - 1;
  a.visible_from = b.visible_from = 0;
  a.visible_to = b.visible_to = F;
  // Along the motion axis: a, then b touching a's final position.
  const int span = 2 * kSize + step * (F - 1);
  const int lead = uniform_int(rng, 0, W - span);
  const int cross = uniform_int(rng, 0, W - kSize);
  const int a_along = lead, b_along = lead + kSize + step * half;
  auto place = [&](SceneObject& o, int along) {
    // Positive direction along the axis; mirror for negative directions.
    const int coord = (kDirDx[dir] + kDirDy[dir]) > 0 ? along : W - kSize - along;
    if (kDirDx[dir] != 0) {
      o.x = coord;
      o.y = cross;
    } else {
      o.x = cross;
      o.y = coord;
    }
  };
  place(a, a_along);
  place(b, b_along);
  return {a, b};
}

}  // namespace

const char* kind_name(SampleKind kind) {
  switch (kind) {
    case SampleKind::descriptive: return "descriptive";
    case SampleKind::temporal: return "temporal";
    case SampleKind::causal: return "causal";
  }
  return "descriptive";
}

SampleKind parse_kind(const std::string& name) {
  if (name == "descriptive") return SampleKind::descriptive;
  if (name == "temporal") return SampleKind::temporal;
  if (name == "causal") return SampleKind::causal;
  throw ValidationError("unknown sample kind '" + name + "'");
}

int SceneObject::x_at(int frame) const { return x + dx * std::clamp(frame - move_start, 0, move_end - move_start); }
int SceneObject::y_at(int frame) const { return y + dy * std::clamp(frame - move_start, 0, move_end - move_start); }

std::vector<std::size_t> SyntheticCorpus::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (split == "all" || samples[i].split == split) out.push_back(i);
  }
  return out;
}

const std::vector<std::string>& grammar_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {"a",   "moves", "appears", "before", "pushes", "which", "way",
                                  "does", "the",  "move",    "what",   "first",  "object", "?"};
    for (const auto* list : {&kColors, &kShapes, &kDirections}) w.insert(w.end(), list->begin(), list->end());
    return w;
  }();
  return words;
}

Vocabulary grammar_vocabulary() { return Vocabulary::from_words(grammar_words()); }

std::string split_for_id(std::int64_t id) {
  const std::uint64_t bucket = fnv1a("sample-" + std::to_string(id)) % 10;
  if (bucket < 8) return "train";
  return bucket == 8 ? "val" : "test";
}

Annotation annotate(SampleKind kind, const std::vector<SceneObject>& objects, std::size_t frames,
                    const std::vector<std::string>& choice_order) {
  Annotation a;
  std::string correct;
  std::vector<std::string> canonical;
  if (kind == SampleKind::descriptive) {
    if (objects.size() != 1) throw ValidationError("descriptive scenes hold one object");
    const auto& o = objects[0];
    const int F = static_cast<int>(frames);
    const int dir = direction_of(o.x_at(F - 1) - o.x_at(0), o.y_at(F - 1) - o.y_at(0));
    const std::string name = kColors[o.color] + " " + kShapes[o.shape];
    a.caption = "a " + name + " moves " + kDirections[dir];
    a.question = "which way does the " + name + " move ?";
    correct = kDirections[dir];
    canonical = {kDirections[dir], kDirections[dir ^ 1]};
    a.open_question = a.question;
    a.open_answer = correct;
  } else {
    if (objects.size() != 2) throw ValidationError("two-object scenes hold two objects");
    // First object: earliest to appear (temporal) or earliest to move (causal).
    const bool a_first = kind == SampleKind::temporal ? objects[0].visible_from < objects[1].visible_from
                                                      : objects[0].move_start < objects[1].move_start;
    const SceneObject& first = a_first ? objects[0] : objects[1];
    const SceneObject& second = a_first ? objects[1] : objects[0];
    if (kind == SampleKind::temporal) {
      a.caption = describe(first) + " appears before " + describe(second);
      a.question = "what appears first ?";
    } else {
      if (!moves(first)) throw ValidationError("causal scene without motion");
      a.caption = describe(first) + " pushes " + describe(second) + " " + kDirections[direction_of(first.dx, first.dy)];
      a.question = "which object moves first ?";
    }
    correct = describe(first);
    canonical = {describe(objects[0]), describe(objects[1])};
    a.open_question = a.question;
    a.open_answer = correct;
  }
  a.choices = choice_order.empty() ? canonical : choice_order;
  auto it = std::find(a.choices.begin(), a.choices.end(), correct);
  if (it == a.choices.end()) throw ValidationError("correct answer missing from choices");
  a.answer = static_cast<int>(it - a.choices.begin());
  return a;
}

std::vector<SceneObject> reverse_objects(const std::vector<SceneObject>& objects, std::size_t frames) {
  const int F = static_cast<int>(frames);
  std::vector<SceneObject> out;
  for (const auto& o : objects) {
    SceneObject r = o;
    r.x = o.x_at(F - 1);
    r.y = o.y_at(F - 1);
    r.dx = -o.dx;
    r.dy = -o.dy;
    r.move_start = F - 1 - o.move_end;
    r.move_end = F - 1 - o.move_start;
    r.visible_from = F - o.visible_to;
    r.visible_to = F - o.visible_from;
    out.push_back(r);
  }
  return out;
}

SyntheticCorpus generate_corpus(const SyntheticOptions& options) {
  const int F = static_cast<int>(options.frames);
  const int W = static_cast<int>(options.image_size);
  if (F < 2) throw ParameterError("synthetic videos need at least 2 frames");
  if (W < 3 * kSize) throw ParameterError("synthetic frames must be at least 24 pixels wide");
  if (options.kinds.empty()) throw ParameterError("no sample kinds selected");
  for (auto k : options.kinds) {
    if (k == SampleKind::causal && F < 3) throw ParameterError("causal scenes need at least 3 frames");
  }
  SyntheticCorpus corpus;
  corpus.options = options;
  std::mt19937_64 rng(options.seed);
  std::set<std::string> captions;
  for (std::size_t i = 0; i < options.samples; ++i) {
    SyntheticSample s;
    s.id = static_cast<std::int64_t>(i);
    s.split = split_for_id(s.id);
    Annotation ann;
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      s.kind = options.kinds[rng() % options.kinds.size()];
      switch (s.kind) {
        case SampleKind::descriptive: s.objects = make_descriptive(rng, F, W); break;
        case SampleKind::temporal: s.objects = make_temporal(rng, F, W); break;
        case SampleKind::causal: s.objects = make_causal(rng, F, W); break;
      }
      ann = annotate(s.kind, s.objects, options.frames, {});
      if (rng() % 2 == 1) std::swap(ann.choices[0], ann.choices[1]);
      placed = captions.insert(ann.caption).second;
    }
    if (!placed) throw ParameterError("caption space exhausted; request fewer samples or more kinds");
    ann = annotate(s.kind, s.objects, options.frames, ann.choices);
    s.caption = ann.caption;
    s.question = ann.question;
    s.choices = ann.choices;
    s.answer = ann.answer;
    s.open_question = ann.open_question;
    s.open_answer = ann.open_answer;
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

Tensor render(const SyntheticSample& sample, std::size_t frames, std::size_t image_size) {
  const std::size_t F = frames, W = image_size;
  std::vector<double> px(F * 3 * W * W, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (const auto& o : sample.objects) {
      if (!o.visible_at(static_cast<int>(f))) continue;
      const int ox = o.x_at(static_cast<int>(f)), oy = o.y_at(static_cast<int>(f));
      for (int yy = 0; yy < kSize; ++yy) {
        for (int xx = 0; xx < kSize; ++xx) {
          bool on = true;
          if (o.shape == 1) {
            const double cx = xx - 3.5, cy = yy - 3.5;
            on = cx * cx + cy * cy <= 16.0;
          } else if (o.shape == 2) {
            // Upward triangle: row yy spans yy + 1 pixels around the centre.
            on = std::abs(2 * xx - 7) <= yy + 1;
          }
          const int X = ox + xx, Y = oy + yy;
          if (!on || X < 0 || Y < 0 || X >= static_cast<int>(W) || Y >= static_cast<int>(W)) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            px[((f * 3 + c) * W + static_cast<std::size_t>(Y)) * W + static_cast<std::size_t>(X)] = kRgb[o.color][c];
          }
        }
      }
    }
  }
  return Tensor::from({F, 3, W, W}, std::move(px));
}

std::vector<std::string> self_check(const SyntheticCorpus& corpus) {
  std::vector<std::string> failures;
  const auto vocab = grammar_vocabulary();
  for (const auto& s : corpus.samples) {
    const std::string tag = "sample " + std::to_string(s.id) + ": ";
    try {
      const Annotation a = annotate(s.kind, s.objects, corpus.options.frames, s.choices);
      if (a.caption != s.caption || a.question != s.question || a.answer != s.answer ||
          a.open_answer != s.open_answer) {
        failures.push_back(tag + "annotation not derivable from the scene");
      }
      const Annotation r = annotate(s.kind, reverse_objects(s.objects, corpus.options.frames),
                                    corpus.options.frames, s.choices);
      if (r.answer == a.answer || r.caption == a.caption) failures.push_back(tag + "reversal does not flip the answer");
      for (const auto* text : {&s.caption, &s.question, &s.open_answer}) vocab.encode(*text);
      for (const auto& c : s.choices) vocab.encode(c);
    } catch (const Error& e) {
      failures.push_back(tag + e.what());
    }
  }
  return failures;
}

namespace {

nlohmann::json object_json(const SceneObject& o) {
  return {{"color", kColors[o.color]}, {"shape", kShapes[o.shape]}, {"x", o.x},
          {"y", o.y},                  {"dx", o.dx},                 {"dy", o.dy},
          {"move_start", o.move_start}, {"move_end", o.move_end},   {"visible_from", o.visible_from},
          {"visible_to", o.visible_to}};
}

int index_of(const std::vector<std::string>& list, const std::string& v, const char* what) {
  auto it = std::find(list.begin(), list.end(), v);
  if (it == list.end()) throw ValidationError(std::string("unknown ") + what + " '" + v + "'");
  return static_cast<int>(it - list.begin());
}

}  // namespace

std::string corpus_to_json(const SyntheticCorpus& corpus) {
  nlohmann::json j;
  j["format"] = "rtq-synthetic";
  j["version"] = 1;
  j["seed"] = corpus.options.seed;
  j["frames"] = corpus.options.frames;
  j["image_size"] = corpus.options.image_size;
  std::vector<std::string> kinds;
  for (auto k : corpus.options.kinds) kinds.emplace_back(kind_name(k));
  j["kinds"] = kinds;
  j["vocabulary"] = grammar_vocabulary().tokens();
  j["samples"] = nlohmann::json::array();
  for (const auto& s : corpus.samples) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects) objs.push_back(object_json(o));
    j["samples"].push_back({{"id", s.id},
                            {"split", s.split},
                            {"kind", kind_name(s.kind)},
                            {"objects", objs},
                            {"caption", s.caption},
                            {"question", s.question},
                            {"choices", s.choices},
                            {"answer", s.answer},
                            {"open_question", s.open_question},
                            {"open_answer", s.open_answer}});
  }
  return j.dump(1) + "\n";
}

SyntheticCorpus corpus_from_json(const std::string& text) {
  SyntheticCorpus c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "rtq-synthetic") throw ValidationError("not a synthetic corpus file");
    if (j.at("version") != 1) throw VersionError("unsupported corpus version");
    c.options.seed = j.at("seed").get<std::uint64_t>();
    c.options.frames = j.at("frames").get<std::size_t>();
    c.options.image_size = j.at("image_size").get<std::size_t>();
    c.options.kinds.clear();
    for (const auto& k : j.at("kinds")) c.options.kinds.push_back(parse_kind(k.get<std::string>()));
    for (const auto& js : j.at("samples")) {
      SyntheticSample s;
      s.id = js.at("id").get<std::int64_t>();
      s.split = js.at("split").get<std::string>();
      s.kind = parse_kind(js.at("kind").get<std::string>());
      for (const auto& jo : js.at("objects")) {
        SceneObject o;
        o.color = index_of(kColors, jo.at("color").get<std::string>(), "color");
        o.shape = index_of(kShapes, jo.at("shape").get<std::string>(), "shape");
        o.x = jo.at("x");
        o.y = jo.at("y");
        o.dx = jo.at("dx");
        o.dy = jo.at("dy");
        o.move_start = jo.at("move_start");
        o.move_end = jo.at("move_end");
        o.visible_from = jo.at("visible_from");
        o.visible_to = jo.at("visible_to");
        s.objects.push_back(o);
      }
      s.caption = js.at("caption");
      s.question = js.at("question");
      s.choices = js.at("choices").get<std::vector<std::string>>();
      s.answer = js.at("answer");
      s.open_question = js.at("open_question");
      s.open_answer = js.at("open_answer");
      c.samples.push_back(std::move(s));
    }
    c.options.samples = c.samples.size();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed corpus: ") + e.what());
  }
  return c;
}

void save_corpus(const SyntheticCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus to " + path);
  out << corpus_to_json(corpus);
  if (!out) throw IoError("failed writing corpus to " + path);
}

SyntheticCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus from " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return corpus_from_json(ss.str());
}

}  // namespace rtq
