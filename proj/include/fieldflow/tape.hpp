#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fieldflow {

// Flat learnable-parameter storage with a matching gradient buffer and a
// registry of named slices. Layers hold slice ids; the tape reads parameter
// values through views and accumulates gradients back into `grads`.
template <typename Scalar>
struct ParamStore {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  enum class Init { zeros, fan_in_uniform };

  struct SliceInfo {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Init init = Init::zeros;
    Eigen::Index size() const { return rows * cols; }
  };

  Vec values;
  Vec grads;
  std::vector<SliceInfo> slices;

  // Registers a [rows, cols] slice and returns its id. Storage is allocated
  // by finalize().
  int add(std::string name, Eigen::Index rows, Eigen::Index cols, Init init) {
    SliceInfo info;
    info.name = std::move(name);
    info.rows = rows;
    info.cols = cols;
    info.init = init;
    info.offset = total_;
    total_ += info.size();
    slices.push_back(std::move(info));
    return static_cast<int>(slices.size()) - 1;
  }

  void finalize() {
    values = Vec::Zero(total_);
    grads = Vec::Zero(total_);
  }

  Eigen::Index size() const { return total_; }

  // Column-major view of one slice.
  Eigen::Map<Mat> slice(int id) {
    const SliceInfo& s = slices.at(static_cast<std::size_t>(id));
    return Eigen::Map<Mat>(values.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<const Mat> slice(int id) const {
    const SliceInfo& s = slices.at(static_cast<std::size_t>(id));
    return Eigen::Map<const Mat>(values.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<Mat> grad_slice(int id) {
    const SliceInfo& s = slices.at(static_cast<std::size_t>(id));
    return Eigen::Map<Mat>(grads.data() + s.offset, s.rows, s.cols);
  }

  void zero_grads() { grads.setZero(); }

  // Fan-in uniform init for weights (the fan-in is the column count of the
  // registered shape), zeros for biases, gates and output projections.
  void init_params(std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    for (const SliceInfo& s : slices) {
      if (s.init == Init::zeros) {
        values.segment(s.offset, s.size()).setZero();
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.cols));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < s.size(); ++i)
          values[s.offset + i] = static_cast<Scalar>(u(engine));
      }
    }
  }

 private:
  Eigen::Index total_ = 0;
};

template <typename Scalar>
class Tape;

// Lightweight handle to a node on the tape. Shapes follow the
// [channels, sequence] convention used throughout the model.
template <typename Scalar>
struct Tensor {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& value() const;
};

// Reverse-mode tape over dense Eigen matrices. Forward calls record one node
// per operation; backward() replays the nodes in reverse and accumulates
// parameter gradients into the bound ParamStore.
template <typename Scalar>
class Tape {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using T = Tensor<Scalar>;

  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> pull;  // empty for leaves without gradient
    bool needs_grad = false;
  };

  std::vector<Node> nodes;

  void clear() { nodes.clear(); }
  std::size_t size() const { return nodes.size(); }

  // Constant leaf; no gradient flows into it.
  T constant(Mat v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
  }

  // Parameter leaf bound to a ParamStore slice. backward() adds the node
  // gradient into the store's gradient buffer.
  T param(ParamStore<Scalar>& store, int slice_id) {
    Node n;
    n.value = store.slice(slice_id);
    n.needs_grad = true;
    const int id = static_cast<int>(nodes.size());
    ParamStore<Scalar>* sp = &store;
    n.pull = [id, sp, slice_id](Tape& t) {
      auto g = sp->grad_slice(slice_id);
      g += t.nodes[static_cast<std::size_t>(id)].grad;
    };
    return push(std::move(n));
  }

  T add(T a, T b) {
    check(a); check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("tape add: shape mismatch");
    Node n;
    n.value = val(a) + val(b);
    return binary(std::move(n), a, b,
                  [](Tape& t, int ia, int ib, const Mat& g) {
                    t.accum(ia, g);
                    t.accum(ib, g);
                  });
  }

  T sub(T a, T b) {
    check(a); check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("tape sub: shape mismatch");
    Node n;
    n.value = val(a) - val(b);
    return binary(std::move(n), a, b,
                  [](Tape& t, int ia, int ib, const Mat& g) {
                    t.accum(ia, g);
                    t.accum(ib, -g);
                  });
  }

  T cwise_mul(T a, T b) {
    check(a); check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("tape cwise_mul: shape mismatch");
    Node n;
    n.value = val(a).cwiseProduct(val(b));
    return binary(std::move(n), a, b,
                  [](Tape& t, int ia, int ib, const Mat& g) {
                    t.accum(ia, g.cwiseProduct(t.val_at(ib)));
                    t.accum(ib, g.cwiseProduct(t.val_at(ia)));
                  });
  }

  // x [C, S] plus a column vector v [C, 1] broadcast over columns.
  T add_colvec(T x, T v) {
    check(x); check(v);
    if (val(v).cols() != 1 || val(v).rows() != val(x).rows())
      throw std::invalid_argument("tape add_colvec: shape mismatch");
    Node n;
    n.value = val(x).colwise() + val(v).col(0);
    return binary(std::move(n), x, v,
                  [](Tape& t, int ix, int iv, const Mat& g) {
                    t.accum(ix, g);
                    t.accum(iv, g.rowwise().sum());
                  });
  }

  // x [C, S] scaled rowwise by a column vector v [C, 1].
  T mul_colvec(T x, T v) {
    check(x); check(v);
    if (val(v).cols() != 1 || val(v).rows() != val(x).rows())
      throw std::invalid_argument("tape mul_colvec: shape mismatch");
    Node n;
    n.value = val(x).array().colwise() * val(v).col(0).array();
    return binary(std::move(n), x, v,
                  [](Tape& t, int ix, int iv, const Mat& g) {
                    const Mat& xv = t.val_at(ix);
                    const Mat& vv = t.val_at(iv);
                    t.accum(ix, g.array().colwise() * vv.col(0).array());
                    t.accum(iv, g.cwiseProduct(xv).rowwise().sum());
                  });
  }

  T add_scalar(T x, Scalar c) {
    check(x);
    Node n;
    n.value = val(x).array() + c;
    return unary(std::move(n), x,
                 [](Tape& t, int ix, const Mat& g) { t.accum(ix, g); });
  }

  T scale(T x, Scalar c) {
    check(x);
    Node n;
    n.value = val(x) * c;
    return unary(std::move(n), x,
                 [c](Tape& t, int ix, const Mat& g) { t.accum(ix, g * c); });
  }

  T matmul(T a, T b) {
    check(a); check(b);
    if (val(a).cols() != val(b).rows())
      throw std::invalid_argument("tape matmul: inner dimension mismatch");
    Node n;
    n.value = val(a) * val(b);
    return binary(std::move(n), a, b,
                  [](Tape& t, int ia, int ib, const Mat& g) {
                    t.accum(ia, g * t.val_at(ib).transpose());
                    t.accum(ib, t.val_at(ia).transpose() * g);
                  });
  }

  T transpose(T x) {
    check(x);
    Node n;
    n.value = val(x).transpose();
    return unary(std::move(n), x, [](Tape& t, int ix, const Mat& g) {
      t.accum(ix, g.transpose());
    });
  }

  // Contiguous row block [r0, r0 + count).
  T rows(T x, Eigen::Index r0, Eigen::Index count) {
    check(x);
    if (r0 < 0 || count < 0 || r0 + count > val(x).rows())
      throw std::invalid_argument("tape rows: block out of range");
    Node n;
    n.value = val(x).middleRows(r0, count);
    return unary(std::move(n), x, [r0, count](Tape& t, int ix, const Mat& g) {
      if (!t.nodes[static_cast<std::size_t>(ix)].needs_grad) return;
      t.ensure_grad(ix);
      t.nodes[static_cast<std::size_t>(ix)].grad.middleRows(r0, count) += g;
    });
  }

  // Vertical concatenation [a; b].
  T vcat(T a, T b) {
    check(a); check(b);
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("tape vcat: column mismatch");
    Node n;
    n.value.resize(val(a).rows() + val(b).rows(), val(a).cols());
    n.value.topRows(val(a).rows()) = val(a);
    n.value.bottomRows(val(b).rows()) = val(b);
    const Eigen::Index ra = val(a).rows();
    return binary(std::move(n), a, b,
                  [ra](Tape& t, int ia, int ib, const Mat& g) {
                    t.accum(ia, g.topRows(ra));
                    t.accum(ib, g.bottomRows(g.rows() - ra));
                  });
  }

  // Column gather y(:, e) = x(:, index[e]).
  T gather_cols(T x, const std::vector<std::int32_t>& index) {
    check(x);
    Node n;
    n.value.resize(val(x).rows(), static_cast<Eigen::Index>(index.size()));
    for (std::size_t e = 0; e < index.size(); ++e) {
      if (index[e] < 0 || index[e] >= val(x).cols())
        throw std::invalid_argument("tape gather_cols: index out of range");
      n.value.col(static_cast<Eigen::Index>(e)) = val(x).col(index[e]);
    }
    auto idx = index;  // captured copy
    return unary(std::move(n), x, [idx](Tape& t, int ix, const Mat& g) {
      if (!t.nodes[static_cast<std::size_t>(ix)].needs_grad) return;
      t.ensure_grad(ix);
      Mat& gx = t.nodes[static_cast<std::size_t>(ix)].grad;
      for (std::size_t e = 0; e < idx.size(); ++e)
        gx.col(idx[e]) += g.col(static_cast<Eigen::Index>(e));
    });
  }

  // Segment mean over columns: y(:, s) = mean of x columns with segment s,
  // zero when a segment is empty.
  T segment_mean_cols(T x, const std::vector<std::int32_t>& segment,
                      Eigen::Index n_segments) {
    check(x);
    if (static_cast<Eigen::Index>(segment.size()) != val(x).cols())
      throw std::invalid_argument("tape segment_mean_cols: segment size mismatch");
    std::vector<int> counts(static_cast<std::size_t>(n_segments), 0);
    for (std::int32_t s : segment) {
      if (s < 0 || s >= n_segments)
        throw std::invalid_argument("tape segment_mean_cols: segment out of range");
      ++counts[static_cast<std::size_t>(s)];
    }
    Node n;
    n.value = Mat::Zero(val(x).rows(), n_segments);
    for (std::size_t e = 0; e < segment.size(); ++e)
      n.value.col(segment[e]) += val(x).col(static_cast<Eigen::Index>(e));
    for (Eigen::Index s = 0; s < n_segments; ++s)
      if (counts[static_cast<std::size_t>(s)] > 0)
        n.value.col(s) /= static_cast<Scalar>(counts[static_cast<std::size_t>(s)]);
    auto seg = segment;
    return unary(std::move(n), x, [seg, counts](Tape& t, int ix, const Mat& g) {
      if (!t.nodes[static_cast<std::size_t>(ix)].needs_grad) return;
      t.ensure_grad(ix);
      Mat& gx = t.nodes[static_cast<std::size_t>(ix)].grad;
      for (std::size_t e = 0; e < seg.size(); ++e)
        gx.col(static_cast<Eigen::Index>(e)) +=
            g.col(seg[e]) / static_cast<Scalar>(counts[static_cast<std::size_t>(seg[e])]);
    });
  }

  // Per-column normalization over channels to zero mean, unit variance
  // (biased variance, epsilon 1e-5). Affine transforms are separate ops.
  T layer_norm_raw(T x) {
    check(x);
    const Scalar eps = static_cast<Scalar>(1e-5);
    const Mat& xv = val(x);
    const Eigen::Index C = xv.rows();
    Node n;
    n.value.resize(xv.rows(), xv.cols());
    Mat inv_sigma(1, xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      const Scalar mu = xv.col(j).mean();
      const Scalar var = (xv.col(j).array() - mu).square().sum() / C;
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_sigma(0, j) = is;
      n.value.col(j) = (xv.col(j).array() - mu) * is;
    }
    const int xid = x.id;
    Node stored = std::move(n);
    T out = push_with(std::move(stored), has_grad(x));
    if (has_grad(x)) {
      const int oid = out.id;
      node(out.id).pull = [xid, oid, inv_sigma, C](Tape& t) {
        const Mat& g = t.nodes[static_cast<std::size_t>(oid)].grad;
        const Mat& y = t.nodes[static_cast<std::size_t>(oid)].value;
        Mat gx(g.rows(), g.cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
          const Scalar gmean = g.col(j).mean();
          const Scalar gy = (g.col(j).cwiseProduct(y.col(j))).sum() / C;
          gx.col(j) =
              ((g.col(j).array() - gmean) - y.col(j).array() * gy) * inv_sigma(0, j);
        }
        t.accum(xid, gx);
      };
    }
    return out;
  }

  // Row-wise softmax with max subtraction; each row sums to one.
  T softmax_rows(T x) {
    check(x);
    const Mat& xv = val(x);
    Node n;
    n.value.resize(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const Scalar m = xv.row(i).maxCoeff();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (xv.row(i).array() - m).exp();
      n.value.row(i) = e / e.sum();
    }
    const int xid = x.id;
    T out = push_with(std::move(n), has_grad(x));
    if (has_grad(x)) {
      const int oid = out.id;
      node(out.id).pull = [xid, oid](Tape& t) {
        const Mat& g = t.nodes[static_cast<std::size_t>(oid)].grad;
        const Mat& y = t.nodes[static_cast<std::size_t>(oid)].value;
        Mat gx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const Scalar dot = g.row(i).cwiseProduct(y.row(i)).sum();
          gx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
        t.accum(xid, gx);
      };
    }
    return out;
  }

  T gelu(T x) {
    check(x);
    const Mat& xv = val(x);
    Node n;
    n.value = xv.array().unaryExpr([](Scalar v) {
      return static_cast<Scalar>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
    });
    return unary(std::move(n), x, [](Tape& t, int ix, const Mat& g) {
      const Mat& xv = t.val_at(ix);
      Mat d = xv.array().unaryExpr([](Scalar v) {
        const double phi = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double dens = std::exp(-0.5 * v * v) / std::sqrt(2.0 * 3.14159265358979323846);
        return static_cast<Scalar>(phi + v * dens);
      });
      t.accum(ix, g.cwiseProduct(d));
    });
  }

  T silu(T x) {
    check(x);
    const Mat& xv = val(x);
    Node n;
    n.value = xv.array().unaryExpr([](Scalar v) {
      return static_cast<Scalar>(v / (1.0 + std::exp(-static_cast<double>(v))));
    });
    return unary(std::move(n), x, [](Tape& t, int ix, const Mat& g) {
      const Mat& xv = t.val_at(ix);
      Mat d = xv.array().unaryExpr([](Scalar v) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
        return static_cast<Scalar>(s * (1.0 + v * (1.0 - s)));
      });
      t.accum(ix, g.cwiseProduct(d));
    });
  }

  // Mean over all entries, returned as a [1, 1] node.
  T mean_all(T x) {
    check(x);
    Node n;
    n.value.resize(1, 1);
    n.value(0, 0) = val(x).mean();
    const Eigen::Index r = val(x).rows(), c = val(x).cols();
    return unary(std::move(n), x, [r, c](Tape& t, int ix, const Mat& g) {
      const Scalar w = g(0, 0) / static_cast<Scalar>(r * c);
      t.accum(ix, Mat::Constant(r, c, w));
    });
  }

  // Reverse sweep from a scalar loss node. Parameter gradients accumulate
  // into their ParamStore; call zero_grads() beforehand for fresh gradients.
  void backward(T loss) {
    check(loss);
    if (val(loss).rows() != 1 || val(loss).cols() != 1)
      throw std::invalid_argument("tape backward: loss must be a [1, 1] node");
    for (Node& n : nodes) n.grad.resize(0, 0);
    Node& ln = node(loss.id);
    ln.grad = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.pull) continue;
      n.pull(*this);
    }
  }

  const Mat& val(T t) const { return nodes.at(static_cast<std::size_t>(t.id)).value; }
  const Mat& val_at(int id) const { return nodes.at(static_cast<std::size_t>(id)).value; }
  Node& node(int id) { return nodes.at(static_cast<std::size_t>(id)); }

  void ensure_grad(int id) {
    Node& n = nodes.at(static_cast<std::size_t>(id));
    if (n.grad.size() == 0)
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }

  void accum(int id, const Mat& g) {
    Node& n = nodes.at(static_cast<std::size_t>(id));
    if (!n.needs_grad) return;
    ensure_grad(id);
    n.grad += g;
  }

 private:
  bool has_grad(T t) const {
    return nodes.at(static_cast<std::size_t>(t.id)).needs_grad;
  }

  void check(T t) const {
    if (t.tape != this || t.id < 0 ||
        t.id >= static_cast<int>(nodes.size()))
      throw std::invalid_argument("tape: tensor does not belong to this tape");
  }

  T push(Node n) {
    const bool ng = n.needs_grad;
    return push_with(std::move(n), ng);
  }

  T push_with(Node n, bool needs_grad) {
    n.needs_grad = needs_grad;
    nodes.push_back(std::move(n));
    T t;
    t.tape = this;
    t.id = static_cast<int>(nodes.size()) - 1;
    return t;
  }

  template <typename F>
  T unary(Node n, T x, F pull) {
    const bool ng = has_grad(x);
    const int xid = x.id;
    T out = push_with(std::move(n), ng);
    if (ng) {
      const int oid = out.id;
      node(out.id).pull = [xid, oid, pull](Tape& t) {
        pull(t, xid, t.nodes[static_cast<std::size_t>(oid)].grad);
      };
    }
    return out;
  }

  template <typename F>
  T binary(Node n, T a, T b, F pull) {
    const bool ng = has_grad(a) || has_grad(b);
    const int ia = a.id, ib = b.id;
    T out = push_with(std::move(n), ng);
    if (ng) {
      const int oid = out.id;
      node(out.id).pull = [ia, ib, oid, pull](Tape& t) {
        pull(t, ia, ib, t.nodes[static_cast<std::size_t>(oid)].grad);
      };
    }
    return out;
  }
};

template <typename Scalar>
Eigen::Index Tensor<Scalar>::rows() const {
  return tape->val(*this).rows();
}
template <typename Scalar>
Eigen::Index Tensor<Scalar>::cols() const {
  return tape->val(*this).cols();
}
template <typename Scalar>
const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>&
Tensor<Scalar>::value() const {
  return tape->val(*this);
}

}  // namespace fieldflow
