#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>
#include <vector>

#include "rigfit/common.hpp"

namespace rigfit::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a tape node. Values are matrices; scalars are 1x1.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

// Define-by-run reverse-mode tape over a fixed primitive set. Forward values
// are computed eagerly at record time; backward() fills adjoints for one
// scalar output. Re-recording with the same inputs replays bit-identically.
class Tape {
 public:
  enum class Op {
    Input, Const,
    Add, Sub, Mul, Div, MatMul, SparseMatMul,
    Scale,            // matrix * scalar node
    MulColBroadcast,  // A(r x c) .* b(r x 1) per column
    DivColBroadcast,  // A(r x c) ./ b(r x 1) per column
    Sigmoid, Sin, Cos, Sqrt, Abs,
    Sum, Reshape, Slice, ConcatCols, Transpose,
    BoxPenalty,       // elementwise hinge distance outside [lo, hi]
  };

  Var input(const Mat& value);
  Var constant(const Mat& value);
  Var scalar(double value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);            // elementwise
  Var div(Var a, Var b);            // elementwise
  Var matmul(Var a, Var b);
  Var sparse_matmul(std::shared_ptr<const Eigen::SparseMatrix<double>> lhs,
                    Var rhs);
  Var scale(Var a, Var s);          // s is 1x1
  Var scale(Var a, double c);
  Var mul_col_broadcast(Var a, Var col);
  Var div_col_broadcast(Var a, Var col);
  Var sigmoid(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var sqrt(Var a);                  // d/dx at 0 defined as 0
  Var abs(Var a);                   // d/dx at 0 defined as 0
  Var sum(Var a);                   // -> 1x1
  Var reshape(Var a, int rows, int cols);  // column-major flattening
  Var slice(Var a, int r0, int c0, int rows, int cols);
  Var concat_cols(const std::vector<Var>& parts);
  Var transpose(Var a);
  Var box_penalty(Var a, const Mat& lo, const Mat& hi);

  const Mat& value(Var v) const;
  // Reverse pass from a 1x1 output. Adjoints of nodes not reachable from
  // the output stay zero.
  void backward(Var output);
  const Mat& adjoint(Var v) const;

  void clear();
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> extra;  // ConcatCols inputs
    Mat val;
    Mat adj;
    std::shared_ptr<const Eigen::SparseMatrix<double>> sparse;
    Mat lo, hi;
    int r0 = 0, c0 = 0;
  };

  Var push(Node&& n);
  Node& at(Var v);
  const Node& at(Var v) const;

  std::vector<Node> nodes_;
  bool adjoints_valid_ = false;
};

// Convenience composites.
inline Var swish(Tape& t, Var x) { return t.mul(x, t.sigmoid(x)); }
Var sumsq(Tape& t, Var x);  // sum of elementwise squares

struct FdReport {
  double max_rel_err = 0.0;
  int worst_index = -1;
};

// Central finite differences per coordinate vs. an analytic gradient.
FdReport finite_difference_check(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f,
    const Eigen::VectorXd& params, double h = 1e-5);

}  // namespace rigfit::ad
