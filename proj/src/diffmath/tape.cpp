#include <cmath>
#include <sstream>

#include "dgf/diffmath.hpp"
#include "dgf/errors.hpp"

namespace dgf::diffmath {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

static void check_shape(const Shape& s) {
  if (s.empty()) throw ContractViolation("tensor shape must have rank >= 1");
  for (int d : s)
    if (d <= 0)
      throw ContractViolation("tensor shape " + shape_str(s) +
                              " has a non-positive dim");
}

Tensor Tensor::zeros(Shape s, bool rg) {
  check_shape(s);
  Tensor t;
  t.data.assign(shape_numel(s), 0.0);
  t.shape = std::move(s);
  t.requires_grad = rg;
  return t;
}

Tensor Tensor::full(Shape s, double v, bool rg) {
  Tensor t = zeros(std::move(s), rg);
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> d, bool rg) {
  check_shape(s);
  if (d.size() != shape_numel(s))
    throw ContractViolation("tensor data length " + std::to_string(d.size()) +
                            " does not match shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(d);
  t.requires_grad = rg;
  return t;
}

const Tensor& Var::t() const { return tape->tensor(id); }
const Shape& Var::shape() const { return t().shape; }
const std::vector<double>& Var::data() const { return t().data; }
std::size_t Var::numel() const { return t().numel(); }

double Var::item() const {
  const Tensor& v = t();
  if (v.numel() != 1)
    throw ContractViolation("item() on tensor of shape " + shape_str(v.shape));
  return v.data[0];
}

Var Tape::leaf(Tensor t) {
  check_shape(t.shape);
  if (t.data.size() != shape_numel(t.shape))
    throw ContractViolation("leaf data length does not match shape " +
                            shape_str(t.shape));
  nodes_.push_back(std::move(t));
  is_leaf_.push_back(true);
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  return leaf(Tensor::from(std::move(shape), std::move(data), requires_grad));
}

Var Tape::scalar(double v, bool requires_grad) {
  return leaf(Tensor::from({1}, {v}, requires_grad));
}

const Tensor& Tape::tensor(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw ContractViolation("tensor id " + std::to_string(id) +
                            " is not on this tape");
  return nodes_[static_cast<std::size_t>(id)];
}

Var Tape::emit(const char* name, const std::vector<int>& inputs, Tensor out,
               BackwardFn bwd) {
  bool rg = false;
  for (int in : inputs) rg = rg || tensor(in).requires_grad;
  out.requires_grad = rg;
  for (double v : out.data)
    if (!std::isfinite(v))
      throw DomainError(std::string("op '") + name +
                        "' produced a non-finite value");
  nodes_.push_back(std::move(out));
  is_leaf_.push_back(false);
  const int out_id = static_cast<int>(nodes_.size()) - 1;
  if (rg) ops_.push_back(OpRec{name, out_id, std::move(bwd)});
  return Var{this, out_id};
}

double* Tape::grad_buf(int id) {
  Tensor& t = nodes_.at(static_cast<std::size_t>(id));
  if (!t.requires_grad) return nullptr;
  if (!t.grad) t.grad.emplace(t.data.size(), 0.0);
  return t.grad->data();
}

bool Tape::has_grad(int id) const {
  const Tensor& t = tensor(id);
  return t.grad.has_value();
}

const std::vector<double>& Tape::grad(int id) const {
  const Tensor& t = tensor(id);
  if (!t.grad)
    throw ContractViolation("no gradient recorded for node " +
                            std::to_string(id));
  return *t.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ContractViolation("backward root is not on this tape");
  const Tensor& r = tensor(root.id);
  if (r.numel() != 1)
    throw ContractViolation("backward requires a scalar root, got shape " +
                            shape_str(r.shape));
  if (!r.requires_grad)
    throw ContractViolation("backward root does not depend on any leaf with requires_grad");

  // Adjoint buffers are per-pass scratch; only leaf gradients persist, so a
  // second backward adds exactly one more unit of d(root)/d(leaf).
  std::vector<std::pair<std::size_t, std::vector<double>>> kept;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].grad) continue;
    if (is_leaf_[i]) kept.emplace_back(i, std::move(*nodes_[i].grad));
    nodes_[i].grad.reset();
  }

  grad_buf(root.id)[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    // nodes touched by no downstream gradient contribute nothing
    if (!nodes_[static_cast<std::size_t>(it->out)].grad) continue;
    it->bwd(*this, it->out);
  }

  for (auto& [i, old] : kept) {
    Tensor& t = nodes_[i];
    if (!t.grad) {
      t.grad = std::move(old);
    } else {
      std::vector<double>& g = *t.grad;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += old[j];
    }
  }
}

}  // namespace dgf::diffmath
