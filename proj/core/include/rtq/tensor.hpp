#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace rtq {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;

/// Hands a backward rule the gradient buffer of each of its inputs.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual std::span<double> grad_of(Node& input) = 0;
};

using BackwardFn = std::function<void(const Node& self, GradSink& sink)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return inputs.empty(); }
};

}  // namespace detail

/// Dense row-major float64 tensor with an optional gradient.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once an op has produced them; only leaves (parameters) expose
/// mutable storage, for optimizers and checkpoint loading.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Leaf storage for in-place parameter updates. Throws on non-leaf tensors.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph, fresh storage.
  Tensor detach() const;
  /// Deep copy as a new leaf with the same requires_grad flag.
  Tensor clone() const;

  const char* op_name() const;
  const void* identity() const { return node_.get(); }

  // Internal: used by ops and the tape.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch: while any guard is alive, ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result. Records inputs and the backward rule only when grad
/// mode is on and some input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, detail::BackwardFn backward);

/// Recorded operations reachable from a root, in topological order
/// (every node appears after all of its inputs).
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<detail::Node*>& nodes() const { return nodes_; }

  /// Runs every backward rule in reverse order, seeding the root with
  /// `seed` (must match the root's element count).
  void run_backward(std::span<const double> seed, detail::GradSink& leaf_sink) const;

 private:
  std::vector<detail::Node*> nodes_;
  std::shared_ptr<detail::Node> root_;
};

/// Leaf gradients collected without touching the leaves' own buffers.
class Gradients {
 public:
  const std::vector<double>* find(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }
  /// Adds every collected gradient into the leaves' grad buffers.
  void accumulate_into_leaves() const;

 private:
  friend Gradients collect_gradients(const Tensor&, std::span<const double>);
  std::unordered_map<const detail::Node*, std::pair<std::shared_ptr<detail::Node>, std::vector<double>>> grads_;
};

/// Reverse-mode pass from a scalar loss; gradients accumulate into leaves.
void backward(const Tensor& loss);
/// Reverse-mode pass from an arbitrary root with an explicit seed gradient.
void backward(const Tensor& root, std::span<const double> seed);
Gradients collect_gradients(const Tensor& root, std::span<const double> seed);

}  // namespace rtq
