#include "moel/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace moel {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Var Var::constant(Shape shape, std::vector<double> value) {
  if (shape_size(shape) != value.size())
    throw ShapeError("constant: value count " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::zeros(Shape shape) {
  auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var Var::parameter(Shape shape, std::vector<double> value) {
  Var v = constant(std::move(shape), std::move(value));
  v.node_->requires_grad = true;
  v.node_->ensure_grad();
  return v;
}

double Var::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; recursion depth would track graph depth.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Interior grads are scratch; free them so a retained graph stays small.
  for (Node* n : order) {
    if (n->backward_fn) std::vector<double>().swap(n->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace moel
