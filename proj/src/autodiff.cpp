#include "srr/autodiff.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <unordered_set>

namespace srr::ad {

void Node::accumulate(MatrixXd const &g)
{
  accumulate_expr(g);
}

MatrixXd Var::grad() const
{
  if (node_->grad.size() == 0) { return MatrixXd::Zero(rows(), cols()); }
  return node_->grad;
}

namespace {

Var make(MatrixXd value, std::vector<std::shared_ptr<Node>> parents, std::function<void(Node &)> bw)
{
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (auto const &p : parents) {
    n->requires_grad = n->requires_grad || p->requires_grad;
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var{std::move(n)};
}

void require_same_shape(Var const &a, Var const &b, char const *what)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
}

} // namespace

Var variable(MatrixXd value)
{
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var{std::move(n)};
}

Var constant(MatrixXd value)
{
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var{std::move(n)};
}

Var matmul(Var const &a, Var const &b)
{
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  }
  return make(a.value() * b.value(), {a.node(), b.node()}, [](Node &n) {
    auto &pa = *n.parents[0];
    auto &pb = *n.parents[1];
    if (pa.requires_grad) { pa.accumulate_expr(n.grad * pb.value.transpose()); }
    if (pb.requires_grad) { pb.accumulate_expr(pa.value.transpose() * n.grad); }
  });
}

Var add(Var const &a, Var const &b)
{
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node &n) {
    for (auto &p : n.parents) {
      if (p->requires_grad) { p->accumulate(n.grad); }
    }
  });
}

Var sub(Var const &a, Var const &b)
{
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node &n) {
    if (n.parents[0]->requires_grad) { n.parents[0]->accumulate(n.grad); }
    if (n.parents[1]->requires_grad) { n.parents[1]->accumulate_expr(-n.grad); }
  });
}

Var scale(Var const &a, double s)
{
  return make(s * a.value(), {a.node()}, [s](Node &n) { n.parents[0]->accumulate_expr(s * n.grad); });
}

Var add_scalar(Var const &a, double s)
{
  return make((a.value().array() + s).matrix(), {a.node()}, [](Node &n) { n.parents[0]->accumulate(n.grad); });
}

Var transpose(Var const &a)
{
  return make(a.value().transpose(), {a.node()}, [](Node &n) { n.parents[0]->accumulate_expr(n.grad.transpose()); });
}

Var mask_mul(Var const &a, MatrixXd const &mask)
{
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) { throw DimensionError("mask_mul: mask shape mismatch"); }
  return make(a.value().cwiseProduct(mask), {a.node()},
              [mask](Node &n) { n.parents[0]->accumulate_expr(n.grad.cwiseProduct(mask)); });
}

Var add_column(Var const &a, Var const &v)
{
  if (v.cols() != 1 || v.rows() != a.rows()) { throw DimensionError("add_column: vector length mismatch"); }
  MatrixXd out = a.value();
  out.colwise() += v.value().col(0);
  return make(std::move(out), {a.node(), v.node()}, [](Node &n) {
    if (n.parents[0]->requires_grad) { n.parents[0]->accumulate(n.grad); }
    if (n.parents[1]->requires_grad) { n.parents[1]->accumulate_expr(n.grad.rowwise().sum()); }
  });
}

Var middle_cols(Var const &a, Index start, Index count)
{
  if (start < 0 || start + count > a.cols()) { throw DimensionError("middle_cols: out of range"); }
  return make(a.value().middleCols(start, count), {a.node()}, [start, count](Node &n) {
    auto &p = *n.parents[0];
    if (p.grad.size() == 0) { p.grad = MatrixXd::Zero(p.value.rows(), p.value.cols()); }
    p.grad.middleCols(start, count) += n.grad;
  });
}

Var middle_rows(Var const &a, Index start, Index count)
{
  if (start < 0 || start + count > a.rows()) { throw DimensionError("middle_rows: out of range"); }
  return make(a.value().middleRows(start, count), {a.node()}, [start, count](Node &n) {
    auto &p = *n.parents[0];
    if (p.grad.size() == 0) { p.grad = MatrixXd::Zero(p.value.rows(), p.value.cols()); }
    p.grad.middleRows(start, count) += n.grad;
  });
}

Var hcat(std::vector<Var> const &parts)
{
  if (parts.empty()) { throw DimensionError("hcat: no inputs"); }
  Index cols = 0;
  for (auto const &p : parts) {
    if (p.rows() != parts.front().rows()) { throw DimensionError("hcat: row mismatch"); }
    cols += p.cols();
  }
  MatrixXd                           out(parts.front().rows(), cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Index                              at = 0;
  for (auto const &p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    nodes.push_back(p.node());
  }
  return make(std::move(out), std::move(nodes), [](Node &n) {
    Index at = 0;
    for (auto &p : n.parents) {
      Index const c = p->value.cols();
      if (p->requires_grad) { p->accumulate_expr(n.grad.middleCols(at, c)); }
      at += c;
    }
  });
}

Var vcat(std::vector<Var> const &parts)
{
  if (parts.empty()) { throw DimensionError("vcat: no inputs"); }
  Index rows = 0;
  for (auto const &p : parts) {
    if (p.cols() != parts.front().cols()) { throw DimensionError("vcat: column mismatch"); }
    rows += p.rows();
  }
  MatrixXd                           out(rows, parts.front().cols());
  std::vector<std::shared_ptr<Node>> nodes;
  Index                              at = 0;
  for (auto const &p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    nodes.push_back(p.node());
  }
  return make(std::move(out), std::move(nodes), [](Node &n) {
    Index at = 0;
    for (auto &p : n.parents) {
      Index const r = p->value.rows();
      if (p->requires_grad) { p->accumulate_expr(n.grad.middleRows(at, r)); }
      at += r;
    }
  });
}

Var softmax_columns(Var const &a)
{
  return make(srr::softmax_columns(a.value()), {a.node()}, [](Node &n) {
    MatrixXd const &y = n.value;
    MatrixXd const  yg = y.cwiseProduct(n.grad);
    MatrixXd        g = yg;
    g -= y * yg.colwise().sum().asDiagonal();
    n.parents[0]->accumulate(g);
  });
}

Var relu(Var const &a)
{
  return make(a.value().cwiseMax(0.0), {a.node()}, [](Node &n) {
    // Subgradient 0 at 0.
    n.parents[0]->accumulate_expr((n.parents[0]->value.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad));
  });
}

Var layer_norm(Var const &a, Var const &gain, Var const &bias, double floor)
{
  Index const d = a.rows();
  if (gain.rows() != d || bias.rows() != d || gain.cols() != 1 || bias.cols() != 1) {
    throw DimensionError("layer_norm: gain/bias length != d");
  }
  MatrixXd xhat(d, a.cols());
  VectorXd inv_std(a.cols());
  std::vector<bool> floored(static_cast<std::size_t>(a.cols()));
  for (Index j = 0; j < a.cols(); ++j) {
    double const mean = a.value().col(j).mean();
    double const var = (a.value().col(j).array() - mean).square().mean();
    floored[static_cast<std::size_t>(j)] = var < floor;
    inv_std(j) = 1.0 / std::sqrt(std::max(var, floor));
    xhat.col(j) = (a.value().col(j).array() - mean) * inv_std(j);
  }
  MatrixXd out = (xhat.array().colwise() * gain.value().col(0).array()).matrix();
  out.colwise() += bias.value().col(0);
  return make(std::move(out), {a.node(), gain.node(), bias.node()}, [xhat, inv_std, floored](Node &n) {
    auto &pa = *n.parents[0];
    auto &pg = *n.parents[1];
    auto &pb = *n.parents[2];
    if (pg.requires_grad) { pg.accumulate_expr(n.grad.cwiseProduct(xhat).rowwise().sum()); }
    if (pb.requires_grad) { pb.accumulate_expr(n.grad.rowwise().sum()); }
    if (pa.requires_grad) {
      MatrixXd const g = (n.grad.array().colwise() * pg.value.col(0).array()).matrix();
      MatrixXd       dx(g.rows(), g.cols());
      for (Index j = 0; j < g.cols(); ++j) {
        double const gm = g.col(j).mean();
        if (floored[static_cast<std::size_t>(j)]) {
          dx.col(j) = (g.col(j).array() - gm) * inv_std(j);
        } else {
          double const gx = g.col(j).cwiseProduct(xhat.col(j)).mean();
          dx.col(j) = (g.col(j).array() - gm - xhat.col(j).array() * gx) * inv_std(j);
        }
      }
      pa.accumulate(dx);
    }
  });
}

Var logdet_spd(Var const &a)
{
  if (a.rows() != a.cols()) { throw DimensionError("logdet_spd: matrix is " + shape_str(a.rows(), a.cols())); }
  Eigen::LLT<MatrixXd> llt(a.value());
  if (llt.info() != Eigen::Success) { throw DefinitenessError("logdet_spd: Cholesky factorization failed"); }
  double const ld = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  MatrixXd     v(1, 1);
  v(0, 0) = ld;
  return make(std::move(v), {a.node()}, [llt](Node &n) {
    MatrixXd const inv = llt.solve(MatrixXd::Identity(n.parents[0]->value.rows(), n.parents[0]->value.cols()));
    n.parents[0]->accumulate_expr(n.grad(0, 0) * inv);
  });
}

Var sum(Var const &a)
{
  MatrixXd v(1, 1);
  v(0, 0) = a.value().sum();
  return make(std::move(v), {a.node()}, [](Node &n) {
    auto &p = *n.parents[0];
    p.accumulate_expr(MatrixXd::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

Var cross_entropy(Var const &logits, std::vector<int> const &labels)
{
  Index const batch = logits.cols();
  if (Index(labels.size()) != batch || batch == 0) { throw DimensionError("cross_entropy: label count mismatch"); }
  MatrixXd const probs = srr::softmax_columns(logits.value());
  double         loss = 0;
  for (Index j = 0; j < batch; ++j) {
    int const y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) { throw DimensionError("cross_entropy: label out of range"); }
    // log-sum-exp form keeps tiny probabilities finite.
    double const mx = logits.value().col(j).maxCoeff();
    double const lse = mx + std::log((logits.value().col(j).array() - mx).exp().sum());
    loss += lse - logits.value()(y, j);
  }
  MatrixXd v(1, 1);
  v(0, 0) = loss / double(batch);
  return make(std::move(v), {logits.node()}, [probs, labels, batch](Node &n) {
    MatrixXd g = probs;
    for (Index j = 0; j < batch; ++j) {
      g(labels[static_cast<std::size_t>(j)], j) -= 1.0;
    }
    n.parents[0]->accumulate_expr(g * (n.grad(0, 0) / double(batch)));
  });
}

Var detach(Var const &a)
{
  return constant(a.value());
}

Var coding_rate(Var const &a, double s)
{
  Var const gram = a.rows() < a.cols() ? matmul(a, transpose(a)) : matmul(transpose(a), a);
  Var const m = add(constant(MatrixXd::Identity(gram.rows(), gram.cols())), scale(gram, s));
  return scale(logdet_spd(m), 0.5);
}

void backward(Var const &loss)
{
  if (loss.rows() != 1 || loss.cols() != 1) { throw DimensionError("backward: loss must be 1x1"); }
  if (!loss.requires_grad()) { return; }

  // Reverse topological order via iterative post-order DFS.
  std::vector<Node *>                              order;
  std::unordered_set<Node *>                       seen;
  std::vector<std::pair<Node *, std::size_t>>      stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node *p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) { stack.emplace_back(p, 0); }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad = MatrixXd::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node &n = **it;
    if (n.backward && n.grad.size() != 0) { n.backward(n); }
  }
}

} // namespace srr::ad
