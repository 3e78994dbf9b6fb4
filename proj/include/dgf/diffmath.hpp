#pragma once
// Reverse-mode autodiff on dense double tensors.
//
// A Tape owns every node created during one forward pass. Ops append a
// record; backward() replays records in reverse creation order, which is a
// valid reverse topological order because ops only consume existing nodes.
// Accumulation order is fixed by construction, so a rerun with the same
// inputs is bit-identical. Every op validates shapes up front
// (ContractViolation) and checks its output is finite (DomainError); NaN/Inf
// never propagates silently.
//
// Calling backward() twice adds gradients on top of what is already stored.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dgf::diffmath {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  std::size_t numel() const { return data.size(); }
  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> d, bool requires_grad = false);
};

class Tape;

// Lightweight handle onto a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& t() const;
  const Shape& shape() const;
  const std::vector<double>& data() const;
  std::size_t numel() const;
  double item() const;  // numel()==1 only
};

class Tape {
 public:
  Var leaf(Tensor t);
  Var leaf(Shape shape, std::vector<double> data, bool requires_grad = false);
  Var scalar(double v, bool requires_grad = false);

  const Tensor& tensor(int id) const;
  // Seeds d(root)/d(root)=1 and accumulates into every reachable grad.
  void backward(Var root);
  const std::vector<double>& grad(int id) const;
  const std::vector<double>& grad(Var v) const { return grad(v.id); }
  bool has_grad(int id) const;

  std::size_t nodes() const { return nodes_.size(); }
  std::size_t ops() const { return ops_.size(); }

  // op-implementation interface; the closure receives the output node id
  using BackwardFn = std::function<void(Tape&, int)>;
  Var emit(const char* name, const std::vector<int>& inputs, Tensor out,
           BackwardFn bwd);
  // Grad buffer of a node, or nullptr when the node does not require grad.
  double* grad_buf(int id);

 private:
  struct OpRec {
    const char* name;
    int out;
    BackwardFn bwd;
  };
  // deque: emit() must not invalidate references handed out earlier
  std::deque<Tensor> nodes_;
  std::vector<bool> is_leaf_;
  std::vector<OpRec> ops_;
};

// ---- ops ----
// Same-shape elementwise; scalar variants broadcast one double.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);  // DomainError on any zero divisor
Var adds(Var a, double s);
Var muls(Var a, double s);
Var rsubs(Var a, double s);  // s - a
Var rdivs(Var a, double s);  // s / a, DomainError on any zero element

Var vexp(Var a);
Var vlog(Var a);   // DomainError unless all elements > 0
Var vsqrt(Var a);  // DomainError unless all elements > 0
Var vabs(Var a);
Var relu(Var a);
Var clamp(Var a, double lo, double hi);
Var neg(Var a);

// rank-2 linear algebra
Var matmul(Var a, Var b);  // [M,K]x[K,N]
Var transpose2d(Var a);

// x [Ci,H,W], w [Co,Ci,k,k]; 'valid' output (H-k)/stride+1, must divide
// exactly. Padding is a separate op so gradients flow through it.
Var conv2d_valid(Var x, Var w, int stride);
Var zero_pad2d(Var x, int pad);

enum class PadMode { zero, reflect };
// convenience: pad (zero or reflect) then valid conv
Var conv2d(Var x, Var w, int stride, PadMode mode, int pad);

// out[i] = x.data[idx[i]]; backward scatter-adds in increasing i
Var gather(Var x, std::shared_ptr<const std::vector<std::int64_t>> idx,
           Shape out_shape);
Var concat(const std::vector<Var>& xs, int axis);
Var reshape(Var x, Shape s);
Var detach(Var x);

Var softmax(Var x, int axis);
// reductions: whole tensor -> shape {1}; rank-2 along axis -> rank-1
Var reduce_sum(Var x);
Var reduce_sum(Var x, int axis);
Var reduce_mean(Var x);
Var reduce_mean(Var x, int axis);
// max reductions break ties toward the lowest flat index
Var reduce_max(Var x);
Var reduce_max(Var x, int axis);

enum class BcastKind { add, sub, mul, div };
// v has length x.shape[axis]; applied elementwise along that axis
Var bcast(BcastKind kind, Var x, Var v, int axis);

Var upsample2x_bilinear(Var x);  // [C,H,W] -> [C,2H,2W]

// x [C,H,W] -> [4C,H/2,W/2]; H,W must be even
Var space_to_depth2(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

}  // namespace dgf::diffmath
