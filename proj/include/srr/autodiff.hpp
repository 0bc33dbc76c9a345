#pragma once

#include "srr/linalg.hpp"

#include <functional>
#include <memory>
#include <vector>

/// Minimal reverse-mode differentiation over dense matrices. Each
/// operation allocates a node holding its value and a closure that pushes the
/// node's gradient into its parents; backward() walks the graph in reverse
/// topological order.
namespace srr::ad {

struct Node
{
  MatrixXd                           value;
  MatrixXd                           grad; ///< allocated on first accumulation
  bool                               requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)>        backward;

  void accumulate(MatrixXd const &g);
  template <typename Expr> void accumulate_expr(Expr const &g)
  {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var
{
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node)
    : node_{std::move(node)}
  {}

  MatrixXd const &value() const { return node_->value; }
  /// Gradient after backward(); zero-filled if nothing reached this node.
  MatrixXd grad() const;
  Index    rows() const { return node_->value.rows(); }
  Index    cols() const { return node_->value.cols(); }
  bool     requires_grad() const { return node_->requires_grad; }
  double   scalar() const { return node_->value(0, 0); }

  std::shared_ptr<Node> const &node() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

/// Leaf that receives gradients.
Var variable(MatrixXd value);
/// Leaf that never receives gradients.
Var constant(MatrixXd value);

Var matmul(Var const &a, Var const &b);
Var add(Var const &a, Var const &b);
Var sub(Var const &a, Var const &b);
Var scale(Var const &a, double s);
Var add_scalar(Var const &a, double s);
Var transpose(Var const &a);
/// a ⊙ mask with a constant mask.
Var mask_mul(Var const &a, MatrixXd const &mask);
/// a + v·1ᵀ for a column vector v.
Var add_column(Var const &a, Var const &v);
Var middle_cols(Var const &a, Index start, Index n);
Var middle_rows(Var const &a, Index start, Index n);
Var hcat(std::vector<Var> const &parts);
Var vcat(std::vector<Var> const &parts);
Var softmax_columns(Var const &a);
Var relu(Var const &a);
/// Column-wise LayerNorm with variance floor; gain and bias are d×1.
Var layer_norm(Var const &a, Var const &gain, Var const &bias, double variance_floor = 1e-6);
/// log det of a symmetric positive-definite matrix (1×1 result).
Var logdet_spd(Var const &a);
/// Sum of all entries (1×1).
Var sum(Var const &a);
/// Mean softmax cross-entropy of logits (classes × batch) against labels (1×1).
Var cross_entropy(Var const &logits, std::vector<int> const &labels);
/// Copy of the value with no route back to the graph.
Var detach(Var const &a);

/// ½ logdet(I + scale·AᵀA) built from the primitives above, on the smaller
/// Gram side.
Var coding_rate(Var const &a, double scale);

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
void backward(Var const &loss);

} // namespace srr::ad
