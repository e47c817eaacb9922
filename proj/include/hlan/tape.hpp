#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hlan/tensor.hpp"

namespace hlan::ad {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Define-by-run tape. Nodes are appended in evaluation order, so the node
// list is topologically sorted by construction. A tape belongs to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf that reads `value` in place. The tensor must outlive the tape.
  Var parameter(const Tensor& value);
  // Like parameter(), but no gradient flows to it.
  Var reference(const Tensor& value);

  // Used by op implementations. `inputs` must already be on this tape.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(int id) const;
  // Gradient of node `id`; zeros if backward never reached it.
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer to accumulate into, or nullptr when `id` needs no gradient.
  Tensor* grad_sink(int id);

  void backward(Var loss);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  // Nodes whose backward function ran during the last backward().
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    mutable Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Node& push(bool requires_grad);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace hlan::ad
