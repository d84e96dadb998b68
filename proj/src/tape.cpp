#include "rigfit/tape.hpp"

#include <cmath>

namespace rigfit::ad {

Var Tape::push(Node&& n) {
  adjoints_valid_ = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::at(Var v) {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw Error("Tape: var does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::at(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw Error("Tape: var does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::input(const Mat& value) {
  Node n;
  n.op = Op::Input;
  n.val = value;
  return push(std::move(n));
}

Var Tape::constant(const Mat& value) {
  Node n;
  n.op = Op::Const;
  n.val = value;
  return push(std::move(n));
}

Var Tape::scalar(double value) {
  return constant(Mat::Constant(1, 1, value));
}

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string("Tape::") + op + ": shape mismatch (" +
                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()) + ")");
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_shape(at(a).val, at(b).val, "add");
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.val = at(a).val + at(b).val;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(at(a).val, at(b).val, "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = at(a).val - at(b).val;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(at(a).val, at(b).val, "mul");
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = at(a).val.cwiseProduct(at(b).val);
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
  check_same_shape(at(a).val, at(b).val, "div");
  Node n;
  n.op = Op::Div;
  n.a = a.id;
  n.b = b.id;
  n.val = at(a).val.cwiseQuotient(at(b).val);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  if (at(a).val.cols() != at(b).val.rows())
    throw Error("Tape::matmul: inner dimension mismatch");
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.val = at(a).val * at(b).val;
  return push(std::move(n));
}

Var Tape::sparse_matmul(std::shared_ptr<const Eigen::SparseMatrix<double>> lhs,
                        Var rhs) {
  if (!lhs) throw Error("Tape::sparse_matmul: null matrix");
  if (lhs->cols() != at(rhs).val.rows())
    throw Error("Tape::sparse_matmul: inner dimension mismatch");
  Node n;
  n.op = Op::SparseMatMul;
  n.a = rhs.id;
  n.sparse = lhs;
  n.val = *lhs * at(rhs).val;
  return push(std::move(n));
}

Var Tape::scale(Var a, Var s) {
  if (at(s).val.size() != 1) throw Error("Tape::scale: scalar must be 1x1");
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.b = s.id;
  n.val = at(a).val * at(s).val(0, 0);
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) { return scale(a, scalar(c)); }

Var Tape::mul_col_broadcast(Var a, Var col) {
  if (at(col).val.cols() != 1 || at(col).val.rows() != at(a).val.rows())
    throw Error("Tape::mul_col_broadcast: column shape mismatch");
  Node n;
  n.op = Op::MulColBroadcast;
  n.a = a.id;
  n.b = col.id;
  n.val = at(a).val.array().colwise() * at(col).val.col(0).array();
  return push(std::move(n));
}

Var Tape::div_col_broadcast(Var a, Var col) {
  if (at(col).val.cols() != 1 || at(col).val.rows() != at(a).val.rows())
    throw Error("Tape::div_col_broadcast: column shape mismatch");
  Node n;
  n.op = Op::DivColBroadcast;
  n.a = a.id;
  n.b = col.id;
  n.val = at(a).val.array().colwise() / at(col).val.col(0).array();
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.val = at(a).val.unaryExpr(
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return push(std::move(n));
}

Var Tape::sin(Var a) {
  Node n;
  n.op = Op::Sin;
  n.a = a.id;
  n.val = at(a).val.array().sin();
  return push(std::move(n));
}

Var Tape::cos(Var a) {
  Node n;
  n.op = Op::Cos;
  n.a = a.id;
  n.val = at(a).val.array().cos();
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  Node n;
  n.op = Op::Sqrt;
  n.a = a.id;
  n.val = at(a).val.array().sqrt();
  return push(std::move(n));
}

Var Tape::abs(Var a) {
  Node n;
  n.op = Op::Abs;
  n.a = a.id;
  n.val = at(a).val.array().abs();
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.val = Mat::Constant(1, 1, at(a).val.sum());
  return push(std::move(n));
}

Var Tape::reshape(Var a, int rows, int cols) {
  const Mat& v = at(a).val;
  if (rows * cols != v.size()) throw Error("Tape::reshape: size mismatch");
  Node n;
  n.op = Op::Reshape;
  n.a = a.id;
  n.val = Eigen::Map<const Mat>(v.data(), rows, cols);
  return push(std::move(n));
}

Var Tape::slice(Var a, int r0, int c0, int rows, int cols) {
  const Mat& v = at(a).val;
  if (r0 < 0 || c0 < 0 || r0 + rows > v.rows() || c0 + cols > v.cols())
    throw Error("Tape::slice: block out of range");
  Node n;
  n.op = Op::Slice;
  n.a = a.id;
  n.r0 = r0;
  n.c0 = c0;
  n.val = v.block(r0, c0, rows, cols);
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("Tape::concat_cols: no inputs");
  Eigen::Index rows = at(parts[0]).val.rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (at(p).val.rows() != rows)
      throw Error("Tape::concat_cols: row count mismatch");
    cols += at(p).val.cols();
  }
  Node n;
  n.op = Op::ConcatCols;
  n.val.resize(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    n.extra.push_back(p.id);
    n.val.middleCols(c, at(p).val.cols()) = at(p).val;
    c += at(p).val.cols();
  }
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.val = at(a).val.transpose();
  return push(std::move(n));
}

Var Tape::box_penalty(Var a, const Mat& lo, const Mat& hi) {
  check_same_shape(at(a).val, lo, "box_penalty(lo)");
  check_same_shape(at(a).val, hi, "box_penalty(hi)");
  Node n;
  n.op = Op::BoxPenalty;
  n.a = a.id;
  n.lo = lo;
  n.hi = hi;
  n.val = (at(a).val - hi).cwiseMax(0.0) + (lo - at(a).val).cwiseMax(0.0);
  return push(std::move(n));
}

const Mat& Tape::value(Var v) const { return at(v).val; }

const Mat& Tape::adjoint(Var v) const {
  if (!adjoints_valid_) throw Error("Tape::adjoint: call backward() first");
  return at(v).adj;
}

void Tape::backward(Var output) {
  const Node& out = at(output);
  if (out.val.size() != 1)
    throw Error("Tape::backward: output must be a 1x1 scalar");
  for (Node& n : nodes_) n.adj = Mat::Zero(n.val.rows(), n.val.cols());
  nodes_[output.id].adj(0, 0) = 1.0;

  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.adj.isZero(0.0) && n.op != Op::Input && n.op != Op::Const) continue;
    const Mat& g = n.adj;
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Add:
        nodes_[n.a].adj += g;
        nodes_[n.b].adj += g;
        break;
      case Op::Sub:
        nodes_[n.a].adj += g;
        nodes_[n.b].adj -= g;
        break;
      case Op::Mul:
        nodes_[n.a].adj += g.cwiseProduct(nodes_[n.b].val);
        nodes_[n.b].adj += g.cwiseProduct(nodes_[n.a].val);
        break;
      case Op::Div: {
        const Mat& bv = nodes_[n.b].val;
        nodes_[n.a].adj += g.cwiseQuotient(bv);
        nodes_[n.b].adj -= g.cwiseProduct(n.val).cwiseQuotient(bv);
        break;
      }
      case Op::MatMul:
        nodes_[n.a].adj += g * nodes_[n.b].val.transpose();
        nodes_[n.b].adj += nodes_[n.a].val.transpose() * g;
        break;
      case Op::SparseMatMul:
        nodes_[n.a].adj += n.sparse->transpose() * g;
        break;
      case Op::Scale: {
        const double s = nodes_[n.b].val(0, 0);
        nodes_[n.a].adj += g * s;
        nodes_[n.b].adj(0, 0) += g.cwiseProduct(nodes_[n.a].val).sum();
        break;
      }
      case Op::MulColBroadcast: {
        const Eigen::ArrayXd col = nodes_[n.b].val.col(0).array();
        nodes_[n.a].adj.array() += g.array().colwise() * col;
        nodes_[n.b].adj.col(0) += g.cwiseProduct(nodes_[n.a].val).rowwise().sum();
        break;
      }
      case Op::DivColBroadcast: {
        const Eigen::ArrayXd col = nodes_[n.b].val.col(0).array();
        nodes_[n.a].adj.array() += g.array().colwise() / col;
        nodes_[n.b].adj.col(0).array() -=
            g.cwiseProduct(n.val).rowwise().sum().array() / col;
        break;
      }
      case Op::Sigmoid:
        nodes_[n.a].adj.array() +=
            g.array() * n.val.array() * (1.0 - n.val.array());
        break;
      case Op::Sin:
        nodes_[n.a].adj.array() += g.array() * nodes_[n.a].val.array().cos();
        break;
      case Op::Cos:
        nodes_[n.a].adj.array() -= g.array() * nodes_[n.a].val.array().sin();
        break;
      case Op::Sqrt:
        // subgradient at 0 defined as 0
        nodes_[n.a].adj.array() +=
            g.array() * n.val.array().unaryExpr([](double s) {
              return s > 0.0 ? 0.5 / s : 0.0;
            });
        break;
      case Op::Abs:
        nodes_[n.a].adj.array() +=
            g.array() * nodes_[n.a].val.array().unaryExpr([](double x) {
              return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            });
        break;
      case Op::Sum:
        nodes_[n.a].adj.array() += g(0, 0);
        break;
      case Op::Reshape: {
        Node& src = nodes_[n.a];
        src.adj +=
            Eigen::Map<const Mat>(g.data(), src.val.rows(), src.val.cols());
        break;
      }
      case Op::Slice:
        nodes_[n.a].adj.block(n.r0, n.c0, g.rows(), g.cols()) += g;
        break;
      case Op::ConcatCols: {
        Eigen::Index c = 0;
        for (int src : n.extra) {
          const Eigen::Index w = nodes_[src].val.cols();
          nodes_[src].adj += g.middleCols(c, w);
          c += w;
        }
        break;
      }
      case Op::Transpose:
        nodes_[n.a].adj += g.transpose();
        break;
      case Op::BoxPenalty:
        nodes_[n.a].adj.array() +=
            g.array() * (nodes_[n.a].val.array() > n.hi.array())
                            .select(Eigen::ArrayXXd::Constant(g.rows(), g.cols(), 1.0),
                                    (nodes_[n.a].val.array() < n.lo.array())
                                        .select(Eigen::ArrayXXd::Constant(
                                                    g.rows(), g.cols(), -1.0),
                                                Eigen::ArrayXXd::Zero(g.rows(),
                                                                      g.cols())));
        break;
    }
  }
  adjoints_valid_ = true;
}

void Tape::clear() {
  nodes_.clear();
  adjoints_valid_ = false;
}

Var sumsq(Tape& t, Var x) { return t.sum(t.mul(x, x)); }

FdReport finite_difference_check(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f,
    const Eigen::VectorXd& params, double h) {
  const Eigen::VectorXd g = grad_f(params);
  if (g.size() != params.size())
    throw Error("finite_difference_check: gradient size mismatch");
  FdReport report;
  Eigen::VectorXd p = params;
  for (int i = 0; i < params.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = f(p);
    p[i] = orig - h;
    const double fm = f(p);
    p[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({1e-8, std::abs(fd), std::abs(g[i])});
    const double rel = std::abs(g[i] - fd) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace rigfit::ad
