#include "smtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "smtl/errors.hpp"
#include "smtl/rng.hpp"

namespace smtl::ag {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                " does not match buffer of " +
                                std::to_string(data.size()) + " elements");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Linear: return "linear";
    case Op::Conv3d: return "conv3d";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::SumAll: return "sum";
    case Op::MeanAll: return "mean";
    case Op::SumSpatial: return "sum_spatial";
    case Op::MeanChannel: return "mean_channel";
    case Op::MaxChannel: return "max_channel";
    case Op::Concat: return "concat";
    case Op::Gather: return "gather";
    case Op::Dropout: return "dropout";
    case Op::SquaredError: return "squared_error";
    case Op::BinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) +
                              ": shape mismatch, " + detail);
}

void require(bool ok, Op op, const std::string& detail) {
  if (!ok) shape_error(op, detail);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvDims {
  int64_t cin, d, h, w;
  int64_t cout, k;
  int64_t od, oh, ow;
};

ConvDims conv_dims(const Shape& x, const Shape& ws, int stride, int pad) {
  require(x.size() == 4, Op::Conv3d,
          "input must be [C,D,H,W], got " + shape_str(x));
  require(ws.size() == 5, Op::Conv3d,
          "weight must be [Cout,Cin,k,k,k], got " + shape_str(ws));
  require(ws[2] == ws[3] && ws[3] == ws[4], Op::Conv3d,
          "kernel must be cubic, got " + shape_str(ws));
  require(ws[1] == x[0], Op::Conv3d,
          "input channels " + std::to_string(x[0]) + " vs weight " +
              shape_str(ws));
  require(stride >= 1 && pad >= 0, Op::Conv3d, "stride/pad out of range");
  ConvDims cd;
  cd.cin = x[0];
  cd.d = x[1];
  cd.h = x[2];
  cd.w = x[3];
  cd.cout = ws[0];
  cd.k = ws[2];
  cd.od = (cd.d + 2 * pad - cd.k) / stride + 1;
  cd.oh = (cd.h + 2 * pad - cd.k) / stride + 1;
  cd.ow = (cd.w + 2 * pad - cd.k) / stride + 1;
  require(cd.od >= 1 && cd.oh >= 1 && cd.ow >= 1, Op::Conv3d,
          "kernel " + std::to_string(cd.k) + " larger than padded input " +
              shape_str(x));
  return cd;
}

// Broadcast rule for Mul: equal numel, or the smaller operand matches a
// trailing suffix of the larger one (leading axes are tiled).
bool suffix_broadcast_ok(const Shape& big, int64_t small_numel) {
  if (small_numel == 1) return true;
  int64_t prod = 1;
  for (size_t i = big.size(); i-- > 0;) {
    prod *= big[i];
    if (prod == small_numel) return true;
    if (prod > small_numel) return false;
  }
  return false;
}

struct SoftmaxDims {
  int64_t outer, n, inner;
};

SoftmaxDims softmax_dims(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(s));
  SoftmaxDims sd{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sd.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    sd.inner *= s[i];
  return sd;
}

}  // namespace

int Graph::ensure_node(const Tensor& t) {
  if (t.node >= 0) {
    if (t.node >= size())
      throw std::invalid_argument("graph: foreign node handle");
    return t.node;
  }
  Node n;
  n.op = Op::Leaf;
  n.value = t;
  n.value.node = size();
  nodes_.push_back(std::move(n));
  return size() - 1;
}

Tensor Graph::leaf(const Tensor& v) {
  Tensor detached = v;
  detached.node = -1;
  return nodes_[static_cast<size_t>(ensure_node(detached))].value;
}

const Tensor& Graph::value(int node) const {
  return nodes_.at(static_cast<size_t>(node)).value;
}

Tensor Graph::record(Op op, const std::vector<Tensor>& inputs, OpAttrs attrs) {
  Node n;
  n.op = op;
  n.attrs = std::move(attrs);
  n.in.reserve(inputs.size());
  for (const Tensor& t : inputs) n.in.push_back(ensure_node(t));

  auto in_val = [&](size_t i) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.in[i])].value;
  };

  switch (op) {
    case Op::Leaf:
      require(inputs.size() == 1, op, "leaf takes one input");
      n.value = in_val(0);
      break;

    case Op::Linear: {
      require(inputs.size() == 2 || inputs.size() == 3, op,
              "linear takes (W, x[, b])");
      const Tensor& w = in_val(0);
      const Tensor& x = in_val(1);
      require(w.shape.size() == 2, op, "W must be a matrix, got " +
                                           shape_str(w.shape));
      const int64_t m = w.shape[0], k = w.shape[1];
      require(x.numel() == k, op,
              "W " + shape_str(w.shape) + " vs x " + shape_str(x.shape));
      if (inputs.size() == 3)
        require(in_val(2).numel() == m, op,
                "bias " + shape_str(in_val(2).shape) + " vs W " +
                    shape_str(w.shape));
      Tensor out({m});
      for (int64_t i = 0; i < m; ++i) {
        double acc = inputs.size() == 3 ? in_val(2)[i] : 0.0;
        const double* wr = w.data.data() + i * k;
        for (int64_t j = 0; j < k; ++j) acc += wr[j] * x[j];
        out[i] = acc;
      }
      n.value = std::move(out);
      break;
    }

    case Op::Conv3d: {
      require(inputs.size() == 3, op, "conv3d takes (x, w, b)");
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      const Tensor& b = in_val(2);
      ConvDims cd = conv_dims(x.shape, w.shape, n.attrs.stride, n.attrs.pad);
      require(b.numel() == cd.cout, op,
              "bias " + shape_str(b.shape) + " vs weight " +
                  shape_str(w.shape));
      Tensor out({cd.cout, cd.od, cd.oh, cd.ow});
      const int64_t s = n.attrs.stride, p = n.attrs.pad, k = cd.k;
      for (int64_t co = 0; co < cd.cout; ++co) {
        for (int64_t od = 0; od < cd.od; ++od)
          for (int64_t oh = 0; oh < cd.oh; ++oh)
            for (int64_t ow = 0; ow < cd.ow; ++ow) {
              double acc = b[co];
              for (int64_t ci = 0; ci < cd.cin; ++ci) {
                const double* xp = x.data.data() + ((ci * cd.d) * cd.h) * cd.w;
                const double* wp =
                    w.data.data() + (((co * cd.cin + ci) * k) * k) * k;
                for (int64_t kd = 0; kd < k; ++kd) {
                  const int64_t id = od * s - p + kd;
                  if (id < 0 || id >= cd.d) continue;
                  for (int64_t kh = 0; kh < k; ++kh) {
                    const int64_t ih = oh * s - p + kh;
                    if (ih < 0 || ih >= cd.h) continue;
                    for (int64_t kw = 0; kw < k; ++kw) {
                      const int64_t iw = ow * s - p + kw;
                      if (iw < 0 || iw >= cd.w) continue;
                      acc += xp[(id * cd.h + ih) * cd.w + iw] *
                             wp[(kd * k + kh) * k + kw];
                    }
                  }
                }
              }
              out[((co * cd.od + od) * cd.oh + oh) * cd.ow + ow] = acc;
            }
      }
      n.value = std::move(out);
      break;
    }

    case Op::Relu: {
      require(inputs.size() == 1, op, "relu takes one input");
      Tensor out = in_val(0);
      out.node = -1;
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      n.value = std::move(out);
      break;
    }

    case Op::Sigmoid: {
      require(inputs.size() == 1, op, "sigmoid takes one input");
      Tensor out = in_val(0);
      out.node = -1;
      for (double& v : out.data) v = stable_sigmoid(v);
      n.value = std::move(out);
      break;
    }

    case Op::Softmax: {
      require(inputs.size() == 1, op, "softmax takes one input");
      const Tensor& x = in_val(0);
      SoftmaxDims sd = softmax_dims(x.shape, n.attrs.axis);
      Tensor out = x;
      out.node = -1;
      for (int64_t o = 0; o < sd.outer; ++o)
        for (int64_t i = 0; i < sd.inner; ++i) {
          double mx = -1e300;
          for (int64_t j = 0; j < sd.n; ++j)
            mx = std::max(mx, x[(o * sd.n + j) * sd.inner + i]);
          double z = 0.0;
          for (int64_t j = 0; j < sd.n; ++j) {
            const int64_t idx = (o * sd.n + j) * sd.inner + i;
            out[idx] = std::exp(x[idx] - mx);
            z += out[idx];
          }
          for (int64_t j = 0; j < sd.n; ++j)
            out[(o * sd.n + j) * sd.inner + i] /= z;
        }
      n.value = std::move(out);
      break;
    }

    case Op::Add:
    case Op::Sub: {
      require(inputs.size() == 2, op, "binary op takes two inputs");
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      require(a.numel() == b.numel(), op,
              shape_str(a.shape) + " vs " + shape_str(b.shape));
      Tensor out = a;
      out.node = -1;
      if (op == Op::Add)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
      else
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
      n.value = std::move(out);
      break;
    }

    case Op::Mul: {
      require(inputs.size() == 2, op, "mul takes two inputs");
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const Tensor& big = a.numel() >= b.numel() ? a : b;
      const Tensor& small = a.numel() >= b.numel() ? b : a;
      require(small.numel() > 0 && big.numel() % small.numel() == 0 &&
                  suffix_broadcast_ok(big.shape, small.numel()),
              op, shape_str(a.shape) + " vs " + shape_str(b.shape));
      Tensor out = big;
      out.node = -1;
      const int64_t m = small.numel();
      for (int64_t i = 0; i < out.numel(); ++i) out[i] *= small[i % m];
      n.value = std::move(out);
      break;
    }

    case Op::Scale: {
      require(inputs.size() == 1, op, "scale takes one input");
      Tensor out = in_val(0);
      out.node = -1;
      for (double& v : out.data) v *= n.attrs.scalar;
      n.value = std::move(out);
      break;
    }

    case Op::SumAll:
    case Op::MeanAll: {
      require(inputs.size() == 1, op, "reduce takes one input");
      const Tensor& x = in_val(0);
      double acc = 0.0;
      for (double v : x.data) acc += v;
      if (op == Op::MeanAll) acc /= static_cast<double>(x.numel());
      n.value = Tensor::scalar(acc);
      break;
    }

    case Op::SumSpatial: {
      require(inputs.size() == 1, op, "reduce takes one input");
      const Tensor& x = in_val(0);
      require(x.shape.size() >= 2, op,
              "need at least 2 axes, got " + shape_str(x.shape));
      const int64_t c = x.shape[0];
      const int64_t s = x.numel() / c;
      Tensor out({c});
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = x.data.data() + ch * s;
        for (int64_t i = 0; i < s; ++i) acc += p[i];
        out[ch] = acc;
      }
      n.value = std::move(out);
      break;
    }

    case Op::MeanChannel:
    case Op::MaxChannel: {
      require(inputs.size() == 1, op, "reduce takes one input");
      const Tensor& x = in_val(0);
      require(x.shape.size() >= 2, op,
              "need at least 2 axes, got " + shape_str(x.shape));
      const int64_t c = x.shape[0];
      const int64_t s = x.numel() / c;
      Shape out_shape(x.shape.begin() + 1, x.shape.end());
      Tensor out(out_shape);
      if (op == Op::MeanChannel) {
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t i = 0; i < s; ++i) out[i] += x[ch * s + i];
        for (int64_t i = 0; i < s; ++i) out[i] /= static_cast<double>(c);
      } else {
        n.saved.resize(static_cast<size_t>(s));
        for (int64_t i = 0; i < s; ++i) {
          int64_t arg = 0;
          double best = x[i];
          for (int64_t ch = 1; ch < c; ++ch)
            if (x[ch * s + i] > best) {
              best = x[ch * s + i];
              arg = ch;
            }
          out[i] = best;
          n.saved[static_cast<size_t>(i)] = static_cast<double>(arg);
        }
      }
      n.value = std::move(out);
      break;
    }

    case Op::Concat: {
      require(!inputs.empty(), op, "concat needs at least one input");
      int64_t total = 0;
      for (size_t i = 0; i < inputs.size(); ++i) total += in_val(i).numel();
      Shape out_shape = n.attrs.out_shape.empty() ? Shape{total}
                                                  : n.attrs.out_shape;
      require(shape_numel(out_shape) == total, op,
              "output " + shape_str(out_shape) + " vs total " +
                  std::to_string(total) + " elements");
      Tensor out(out_shape);
      int64_t off = 0;
      for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& x = in_val(i);
        std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
        off += x.numel();
      }
      n.value = std::move(out);
      break;
    }

    case Op::Gather: {
      require(inputs.size() == 1, op, "gather takes one input");
      const Tensor& x = in_val(0);
      for (int64_t idx : n.attrs.indices)
        require(idx >= 0 && idx < x.numel(), op,
                "index " + std::to_string(idx) + " out of range for " +
                    shape_str(x.shape));
      Tensor out({static_cast<int64_t>(n.attrs.indices.size())});
      for (size_t i = 0; i < n.attrs.indices.size(); ++i)
        out[static_cast<int64_t>(i)] = x[n.attrs.indices[i]];
      n.value = std::move(out);
      break;
    }

    case Op::Dropout: {
      require(inputs.size() == 1, op, "dropout takes one input");
      const double keep = n.attrs.keep;
      if (keep <= 0.0 || keep > 1.0)
        throw std::invalid_argument(
            "dropout: keep probability must be in (0, 1], got " +
            std::to_string(keep));
      Tensor out = in_val(0);
      out.node = -1;
      if (n.attrs.train && keep < 1.0) {
        // Inverted scaling: the eval path stays an exact identity.
        rng::Stream mask_stream(n.attrs.seed);
        n.saved.resize(out.data.size());
        for (size_t i = 0; i < out.data.size(); ++i) {
          const double m = mask_stream.bernoulli(keep) ? 1.0 / keep : 0.0;
          n.saved[i] = m;
          out.data[i] *= m;
        }
      }
      n.value = std::move(out);
      break;
    }

    case Op::SquaredError: {
      require(inputs.size() == 2, op, "squared_error takes (pred, target)");
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      require(a.numel() == b.numel(), op,
              shape_str(a.shape) + " vs " + shape_str(b.shape));
      double acc = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
      }
      n.value = Tensor::scalar(acc / static_cast<double>(a.numel()));
      break;
    }

    case Op::BinaryCrossEntropy: {
      require(inputs.size() == 2, op,
              "binary_cross_entropy takes (prob, target)");
      const Tensor& p = in_val(0);
      const Tensor& y = in_val(1);
      require(p.numel() == y.numel(), op,
              shape_str(p.shape) + " vs " + shape_str(y.shape));
      double acc = 0.0;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double ph = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
        acc += -(y[i] * std::log(ph) + (1.0 - y[i]) * std::log(1.0 - ph));
      }
      n.value = Tensor::scalar(acc / static_cast<double>(p.numel()));
      break;
    }
  }

  if (!n.value.all_finite())
    throw NumericError(std::string(op_name(op)) +
                       " produced a non-finite value");

  n.value.node = size();
  nodes_.push_back(std::move(n));
  return nodes_.back().value;
}

Tensor Graph::linear(const Tensor& w, const Tensor& x, const Tensor& b) {
  return record(Op::Linear, {w, x, b});
}
Tensor Graph::matvec(const Tensor& w, const Tensor& x) {
  return record(Op::Linear, {w, x});
}
Tensor Graph::conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride, int pad) {
  OpAttrs a;
  a.stride = stride;
  a.pad = pad;
  return record(Op::Conv3d, {x, w, b}, std::move(a));
}
Tensor Graph::relu(const Tensor& x) { return record(Op::Relu, {x}); }
Tensor Graph::sigmoid(const Tensor& x) { return record(Op::Sigmoid, {x}); }
Tensor Graph::softmax(const Tensor& x, int axis) {
  OpAttrs a;
  a.axis = axis;
  return record(Op::Softmax, {x}, std::move(a));
}
Tensor Graph::add(const Tensor& a, const Tensor& b) {
  return record(Op::Add, {a, b});
}
Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  return record(Op::Sub, {a, b});
}
Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  return record(Op::Mul, {a, b});
}
Tensor Graph::scale(const Tensor& x, double c) {
  OpAttrs a;
  a.scalar = c;
  return record(Op::Scale, {x}, std::move(a));
}
Tensor Graph::sum(const Tensor& x) { return record(Op::SumAll, {x}); }
Tensor Graph::mean(const Tensor& x) { return record(Op::MeanAll, {x}); }
Tensor Graph::sum_spatial(const Tensor& x) {
  return record(Op::SumSpatial, {x});
}
Tensor Graph::mean_channel(const Tensor& x) {
  return record(Op::MeanChannel, {x});
}
Tensor Graph::max_channel(const Tensor& x) {
  return record(Op::MaxChannel, {x});
}
Tensor Graph::concat(const std::vector<Tensor>& xs, Shape out_shape) {
  OpAttrs a;
  a.out_shape = std::move(out_shape);
  return record(Op::Concat, xs, std::move(a));
}
Tensor Graph::gather(const Tensor& x, std::vector<int64_t> indices) {
  OpAttrs a;
  a.indices = std::move(indices);
  return record(Op::Gather, {x}, std::move(a));
}
Tensor Graph::dropout(const Tensor& x, double keep, bool train,
                      uint64_t seed) {
  OpAttrs a;
  a.keep = keep;
  a.train = train;
  a.seed = seed;
  return record(Op::Dropout, {x}, std::move(a));
}
Tensor Graph::squared_error(const Tensor& pred, const Tensor& target) {
  return record(Op::SquaredError, {pred, target});
}
Tensor Graph::binary_cross_entropy(const Tensor& prob, const Tensor& target) {
  return record(Op::BinaryCrossEntropy, {prob, target});
}

std::unordered_map<int, Tensor> Graph::backward(const Tensor& loss) const {
  if (loss.node < 0 || loss.node >= size())
    throw std::invalid_argument("backward: loss is not a node of this graph");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape));

  const size_t n = nodes_.size();
  std::vector<Tensor> grads(n);
  std::vector<char> has(n, 0);

  auto buf = [&](int id) -> Tensor& {
    auto& g = grads[static_cast<size_t>(id)];
    if (!has[static_cast<size_t>(id)]) {
      g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
      has[static_cast<size_t>(id)] = 1;
    }
    return g;
  };

  buf(loss.node)[0] = 1.0;

  for (int id = loss.node; id >= 0; --id) {
    if (!has[static_cast<size_t>(id)]) continue;
    const Node& nd = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads[static_cast<size_t>(id)];
    auto in_val = [&](size_t i) -> const Tensor& {
      return nodes_[static_cast<size_t>(nd.in[i])].value;
    };

    switch (nd.op) {
      case Op::Leaf:
        break;

      case Op::Linear: {
        const Tensor& w = in_val(0);
        const Tensor& x = in_val(1);
        const int64_t m = w.shape[0], k = w.shape[1];
        Tensor& dw = buf(nd.in[0]);
        Tensor& dx = buf(nd.in[1]);
        for (int64_t i = 0; i < m; ++i) {
          const double gi = g[i];
          for (int64_t j = 0; j < k; ++j) {
            dw[i * k + j] += gi * x[j];
            dx[j] += gi * w[i * k + j];
          }
        }
        if (nd.in.size() == 3) {
          Tensor& db = buf(nd.in[2]);
          for (int64_t i = 0; i < m; ++i) db[i] += g[i];
        }
        break;
      }

      case Op::Conv3d: {
        const Tensor& x = in_val(0);
        const Tensor& w = in_val(1);
        ConvDims cd =
            conv_dims(x.shape, w.shape, nd.attrs.stride, nd.attrs.pad);
        Tensor& dx = buf(nd.in[0]);
        Tensor& dw = buf(nd.in[1]);
        Tensor& db = buf(nd.in[2]);
        const int64_t s = nd.attrs.stride, p = nd.attrs.pad, k = cd.k;
        for (int64_t co = 0; co < cd.cout; ++co) {
          for (int64_t od = 0; od < cd.od; ++od)
            for (int64_t oh = 0; oh < cd.oh; ++oh)
              for (int64_t ow = 0; ow < cd.ow; ++ow) {
                const double go =
                    g[((co * cd.od + od) * cd.oh + oh) * cd.ow + ow];
                if (go == 0.0) continue;
                db[co] += go;
                for (int64_t ci = 0; ci < cd.cin; ++ci) {
                  const int64_t xbase = ci * cd.d * cd.h * cd.w;
                  const int64_t wbase = ((co * cd.cin + ci) * k) * k * k;
                  for (int64_t kd = 0; kd < k; ++kd) {
                    const int64_t id = od * s - p + kd;
                    if (id < 0 || id >= cd.d) continue;
                    for (int64_t kh = 0; kh < k; ++kh) {
                      const int64_t ih = oh * s - p + kh;
                      if (ih < 0 || ih >= cd.h) continue;
                      for (int64_t kw = 0; kw < k; ++kw) {
                        const int64_t iw = ow * s - p + kw;
                        if (iw < 0 || iw >= cd.w) continue;
                        const int64_t xi = xbase + (id * cd.h + ih) * cd.w + iw;
                        const int64_t wi = wbase + (kd * k + kh) * k + kw;
                        dx[xi] += go * w[wi];
                        dw[wi] += go * x[xi];
                      }
                    }
                  }
                }
              }
        }
        break;
      }

      case Op::Relu: {
        const Tensor& x = in_val(0);
        Tensor& dx = buf(nd.in[0]);
        for (int64_t i = 0; i < x.numel(); ++i)
          if (x[i] > 0.0) dx[i] += g[i];
        break;
      }

      case Op::Sigmoid: {
        const Tensor& y = nd.value;
        Tensor& dx = buf(nd.in[0]);
        for (int64_t i = 0; i < y.numel(); ++i)
          dx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }

      case Op::Softmax: {
        const Tensor& y = nd.value;
        SoftmaxDims sd = softmax_dims(y.shape, nd.attrs.axis);
        Tensor& dx = buf(nd.in[0]);
        for (int64_t o = 0; o < sd.outer; ++o)
          for (int64_t i = 0; i < sd.inner; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < sd.n; ++j) {
              const int64_t idx = (o * sd.n + j) * sd.inner + i;
              dot += g[idx] * y[idx];
            }
            for (int64_t j = 0; j < sd.n; ++j) {
              const int64_t idx = (o * sd.n + j) * sd.inner + i;
              dx[idx] += y[idx] * (g[idx] - dot);
            }
          }
        break;
      }

      case Op::Add: {
        Tensor& da = buf(nd.in[0]);
        Tensor& db = buf(nd.in[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          da[i] += g[i];
          db[i] += g[i];
        }
        break;
      }

      case Op::Sub: {
        Tensor& da = buf(nd.in[0]);
        Tensor& db = buf(nd.in[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          da[i] += g[i];
          db[i] -= g[i];
        }
        break;
      }

      case Op::Mul: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        const bool a_big = a.numel() >= b.numel();
        const Tensor& big = a_big ? a : b;
        const Tensor& small = a_big ? b : a;
        Tensor& dbig = buf(a_big ? nd.in[0] : nd.in[1]);
        Tensor& dsmall = buf(a_big ? nd.in[1] : nd.in[0]);
        const int64_t m = small.numel();
        for (int64_t i = 0; i < big.numel(); ++i) {
          dbig[i] += g[i] * small[i % m];
          dsmall[i % m] += g[i] * big[i];
        }
        break;
      }

      case Op::Scale: {
        Tensor& dx = buf(nd.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
          dx[i] += g[i] * nd.attrs.scalar;
        break;
      }

      case Op::SumAll: {
        Tensor& dx = buf(nd.in[0]);
        for (double& v : dx.data) v += g[0];
        break;
      }

      case Op::MeanAll: {
        Tensor& dx = buf(nd.in[0]);
        const double go = g[0] / static_cast<double>(dx.numel());
        for (double& v : dx.data) v += go;
        break;
      }

      case Op::SumSpatial: {
        const Tensor& x = in_val(0);
        Tensor& dx = buf(nd.in[0]);
        const int64_t c = x.shape[0];
        const int64_t s = x.numel() / c;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t i = 0; i < s; ++i) dx[ch * s + i] += g[ch];
        break;
      }

      case Op::MeanChannel: {
        const Tensor& x = in_val(0);
        Tensor& dx = buf(nd.in[0]);
        const int64_t c = x.shape[0];
        const int64_t s = x.numel() / c;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t i = 0; i < s; ++i)
            dx[ch * s + i] += g[i] / static_cast<double>(c);
        break;
      }

      case Op::MaxChannel: {
        const Tensor& x = in_val(0);
        Tensor& dx = buf(nd.in[0]);
        const int64_t c = x.shape[0];
        const int64_t s = x.numel() / c;
        (void)c;
        for (int64_t i = 0; i < s; ++i) {
          const int64_t arg = static_cast<int64_t>(nd.saved[static_cast<size_t>(i)]);
          dx[arg * s + i] += g[i];
        }
        break;
      }

      case Op::Concat: {
        int64_t off = 0;
        for (size_t i = 0; i < nd.in.size(); ++i) {
          Tensor& dx = buf(nd.in[i]);
          for (int64_t j = 0; j < dx.numel(); ++j) dx[j] += g[off + j];
          off += dx.numel();
        }
        break;
      }

      case Op::Gather: {
        Tensor& dx = buf(nd.in[0]);
        for (size_t i = 0; i < nd.attrs.indices.size(); ++i)
          dx[nd.attrs.indices[i]] += g[static_cast<int64_t>(i)];
        break;
      }

      case Op::Dropout: {
        Tensor& dx = buf(nd.in[0]);
        if (nd.saved.empty()) {
          for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
        } else {
          for (int64_t i = 0; i < g.numel(); ++i)
            dx[i] += g[i] * nd.saved[static_cast<size_t>(i)];
        }
        break;
      }

      case Op::SquaredError: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        Tensor& da = buf(nd.in[0]);
        Tensor& db = buf(nd.in[1]);
        const double go = g[0] * 2.0 / static_cast<double>(a.numel());
        for (int64_t i = 0; i < a.numel(); ++i) {
          const double d = go * (a[i] - b[i]);
          da[i] += d;
          db[i] -= d;
        }
        break;
      }

      case Op::BinaryCrossEntropy: {
        const Tensor& p = in_val(0);
        const Tensor& y = in_val(1);
        Tensor& dp = buf(nd.in[0]);
        Tensor& dy = buf(nd.in[1]);
        const double go = g[0] / static_cast<double>(p.numel());
        for (int64_t i = 0; i < p.numel(); ++i) {
          // Flat in the clamped regions.
          if (p[i] > kBceClamp && p[i] < 1.0 - kBceClamp) {
            const double ph = p[i];
            dp[i] += go * (ph - y[i]) / (ph * (1.0 - ph));
          }
          const double ph = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
          dy[i] += go * (std::log(1.0 - ph) - std::log(ph));
        }
        break;
      }
    }
  }

  std::unordered_map<int, Tensor> out;
  for (size_t i = 0; i < n; ++i)
    if (has[i]) out.emplace(static_cast<int>(i), std::move(grads[i]));
  return out;
}

}  // namespace smtl::ag
