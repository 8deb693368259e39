#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace smtl::ag {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional value, row-major, 64-bit floats. `node` is the
// handle of the graph node that produced it (-1 for a detached value).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  int node = -1;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> d);
  static Tensor scalar(double v);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
  bool all_finite() const;
};

enum class Op {
  Leaf,
  Linear,   // matrix-vector plus optional bias
  Conv3d,   // stride/padding attrs, cubic kernels
  Relu,
  Sigmoid,
  Softmax,  // over a designated axis
  Add,
  Sub,
  Mul,      // elementwise; trailing-suffix broadcast allowed
  Scale,    // multiply by a constant
  SumAll,
  MeanAll,
  SumSpatial,   // [C, ...] -> [C], sums all but the first axis
  MeanChannel,  // [C, ...] -> [...], mean over the first axis
  MaxChannel,   // [C, ...] -> [...], max over the first axis
  Concat,
  Gather,   // pick elements by flat index
  Dropout,  // train-mode flag; inverted scaling
  SquaredError,
  BinaryCrossEntropy,
};

const char* op_name(Op op);

struct OpAttrs {
  int axis = 0;                  // Softmax
  double scalar = 0.0;           // Scale
  int stride = 1;                // Conv3d
  int pad = 0;                   // Conv3d
  double keep = 1.0;             // Dropout keep probability
  bool train = false;            // Dropout
  uint64_t seed = 0;             // Dropout mask stream
  std::vector<int64_t> indices;  // Gather
  Shape out_shape;               // Concat
};

struct Node {
  Op op = Op::Leaf;
  std::vector<int> in;
  OpAttrs attrs;
  Tensor value;
  std::vector<double> saved;  // op-specific forward state (dropout mask, argmax)
};

// Probabilities are clamped to [kBceClamp, 1 - kBceClamp] inside the
// cross-entropy, which is otherwise undefined at 0 and 1.
constexpr double kBceClamp = 1e-7;

// Define-by-run tape. Nodes are appended in topological order; a Graph is
// single-threaded, distinct Graphs are independent.
class Graph {
 public:
  // Records v as a leaf and returns it with its node handle set.
  Tensor leaf(const Tensor& v);

  // Generic entry point: validates shapes for `op`, runs the forward
  // computation, appends a node and returns the output tensor. Inputs with
  // no node handle are recorded as leaves first.
  Tensor record(Op op, const std::vector<Tensor>& inputs, OpAttrs attrs = {});

  Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b);
  Tensor matvec(const Tensor& w, const Tensor& x);
  Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                int pad);
  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor softmax(const Tensor& x, int axis);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double c);
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor sum_spatial(const Tensor& x);
  Tensor mean_channel(const Tensor& x);
  Tensor max_channel(const Tensor& x);
  Tensor concat(const std::vector<Tensor>& xs, Shape out_shape = {});
  Tensor gather(const Tensor& x, std::vector<int64_t> indices);
  Tensor dropout(const Tensor& x, double keep, bool train, uint64_t seed);
  Tensor squared_error(const Tensor& pred, const Tensor& target);
  Tensor binary_cross_entropy(const Tensor& prob, const Tensor& target);

  const Tensor& value(int node) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Reverse pass from a scalar loss node. The returned map holds gradients
  // for exactly the nodes the loss depends on; d(loss)/d(loss) == 1.
  std::unordered_map<int, Tensor> backward(const Tensor& loss) const;

 private:
  std::vector<Node> nodes_;
  int ensure_node(const Tensor& t);
};

}  // namespace smtl::ag
