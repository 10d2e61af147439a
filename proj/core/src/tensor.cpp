#include "rtq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rtq/error.hpp"

namespace rtq {

namespace {

thread_local bool g_grad_enabled = true;

class LeafBufferSink : public detail::GradSink {
 public:
  std::span<double> grad_of(detail::Node& input) override {
    if (input.grad.size() != input.value.size()) input.grad.assign(input.value.size(), 0.0);
    return input.grad;
  }
};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (rtq::numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("tensor data must be finite");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = rtq::numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = rtq::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(rtq::numel(shape));
  for (auto& v : data) v = dist(rng);
  return from(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return rtq::numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  if (!node_->is_leaf()) throw ContractError("only leaf tensors may be mutated in place");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw IndexError("index rank mismatch for " + shape_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw IndexError("index out of range for " + shape_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, node_->requires_grad); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node();
  if (!root.requires_grad() || root.node()->is_leaf()) return tape;
  // Iterative post-order DFS; recorded ops only (leaves receive gradients
  // through the sink and are not part of the tape).
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next].get();
      ++next;
      if (child->requires_grad && !child->is_leaf() && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

namespace {

class TapeSink : public detail::GradSink {
 public:
  explicit TapeSink(detail::GradSink& leaves) : leaves_(leaves) {}
  std::span<double> grad_of(detail::Node& input) override {
    if (input.is_leaf()) return leaves_.grad_of(input);
    if (input.grad.size() != input.value.size()) input.grad.assign(input.value.size(), 0.0);
    return input.grad;
  }

 private:
  detail::GradSink& leaves_;
};

}  // namespace

void Tape::run_backward(std::span<const double> seed, detail::GradSink& leaf_sink) const {
  if (!root_) throw ContractError("backward on undefined tensor");
  if (seed.size() != root_->value.size()) {
    throw ShapeError("seed gradient has " + std::to_string(seed.size()) + " elements, root has " +
                     std::to_string(root_->value.size()));
  }
  if (!root_->requires_grad) return;
  if (root_->is_leaf()) {
    auto g = leaf_sink.grad_of(*root_);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    return;
  }
  for (auto* node : nodes_) node->grad.assign(node->value.size(), 0.0);
  std::copy(seed.begin(), seed.end(), root_->grad.begin());
  TapeSink sink(leaf_sink);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node* node = *it;
    node->backward(*node, sink);
    std::vector<double>().swap(node->grad);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void backward(const Tensor& root, std::span<const double> seed) {
  LeafBufferSink sink;
  Tape::record(root).run_backward(seed, sink);
}

namespace {

class MapSink : public detail::GradSink {
 public:
  using Map = std::unordered_map<const detail::Node*,
                                 std::pair<std::shared_ptr<detail::Node>, std::vector<double>>>;
  explicit MapSink(Map& map, const std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>>& owners)
      : map_(map), owners_(owners) {}
  std::span<double> grad_of(detail::Node& input) override {
    auto it = map_.find(&input);
    if (it == map_.end()) {
      auto owner = owners_.at(&input);
      it = map_.emplace(&input, std::make_pair(owner, std::vector<double>(input.value.size(), 0.0))).first;
    }
    return it->second.second;
  }

 private:
  Map& map_;
  const std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>>& owners_;
};

}  // namespace

Gradients collect_gradients(const Tensor& root, std::span<const double> seed) {
  Gradients out;
  Tape tape = Tape::record(root);
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> owners;
  if (root.node()->is_leaf()) owners[root.node().get()] = root.node();
  for (auto* node : tape.nodes()) {
    for (const auto& in : node->inputs) {
      if (in->is_leaf()) owners[in.get()] = in;
    }
  }
  MapSink sink(out.grads_, owners);
  tape.run_backward(seed, sink);
  return out;
}

const std::vector<double>* Gradients::find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node().get());
  return it == grads_.end() ? nullptr : &it->second.second;
}

void Gradients::accumulate_into_leaves() const {
  for (const auto& [key, entry] : grads_) {
    auto& node = *entry.first;
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) node.grad[i] += entry.second[i];
  }
}

}  // namespace rtq
