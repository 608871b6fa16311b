#pragma once

// Minimal reverse-mode differentiation over row-major matrices. Each row is
// one sequence position; a batch of sequences is stacked along rows and the
// attention op receives explicit per-sequence segments.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace xlg {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Query rows [q_begin, q_end) attend to key rows [k_begin, k_end).
/// Causal segments require q and k to index the same positions.
struct AttentionSegment {
  int q_begin = 0;
  int q_end = 0;
  int k_begin = 0;
  int k_end = 0;
  bool causal = false;
  std::vector<char> key_valid;  // empty means every key is valid
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Matrix<T> value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to external storage. A null `grad` marks it frozen: no
  /// gradient flows into it and sub-graphs depending only on frozen leaves
  /// are skipped during backward.
  Var param(const Matrix<T>& value, Matrix<T>* grad) {
    Node n;
    n.ext = &value;
    n.grad_ext = grad;
    n.needs_grad = grad != nullptr;
    return push(std::move(n));
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.ext ? *n.ext : n.own;
  }

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  T scalar(Var v) const { return value(v)(0, 0); }

  // ---------------------------------------------------------------- ops

  Var gather_rows(Var table, std::vector<int> rows) {
    const auto& tab = value(table);
    Matrix<T> out(static_cast<Eigen::Index>(rows.size()), tab.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= tab.rows()) throw ShapeError("gather_rows: row index out of range");
      out.row(static_cast<Eigen::Index>(i)) = tab.row(rows[i]);
    }
    return make(std::move(out), {table}, [this, table, rows = std::move(rows)](const Matrix<T>& g) {
      auto& gt = grad(table);
      for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    });
  }

  Var select_rows(Var x, std::vector<int> rows) { return gather_rows(x, std::move(rows)); }

  Var add(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) throw ShapeError("add: shape mismatch");
    return make(va + vb, {a, b}, [this, a, b](const Matrix<T>& g) {
      if (requires_grad(a)) grad(a) += g;
      if (requires_grad(b)) grad(b) += g;
    });
  }

  /// x W + b with b a 1 x out row.
  Var linear(Var x, Var w, Var b) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    if (vx.cols() != vw.rows() || vb.cols() != vw.cols() || vb.rows() != 1) throw ShapeError("linear: shape mismatch");
    Matrix<T> out = vx * vw;
    out.rowwise() += vb.row(0);
    return make(std::move(out), {x, w, b}, [this, x, w, b](const Matrix<T>& g) {
      if (requires_grad(x)) grad(x).noalias() += g * value(w).transpose();
      if (requires_grad(w)) grad(w).noalias() += value(x).transpose() * g;
      if (requires_grad(b)) grad(b) += g.colwise().sum();
    });
  }

  /// x Wᵀ + b: projection through a (vocab x d) table.
  Var linear_transposed(Var x, Var w, Var b) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    if (vx.cols() != vw.cols() || vb.cols() != vw.rows() || vb.rows() != 1) {
      throw ShapeError("linear_transposed: shape mismatch");
    }
    Matrix<T> out = vx * vw.transpose();
    out.rowwise() += vb.row(0);
    return make(std::move(out), {x, w, b}, [this, x, w, b](const Matrix<T>& g) {
      if (requires_grad(x)) grad(x).noalias() += g * value(w);
      if (requires_grad(w)) grad(w).noalias() += g.transpose() * value(x);
      if (requires_grad(b)) grad(b) += g.colwise().sum();
    });
  }

  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& vx = value(x);
    const auto& vg = value(gamma);
    const auto& vb = value(beta);
    if (vg.cols() != vx.cols() || vb.cols() != vx.cols()) throw ShapeError("layer_norm: shape mismatch");
    const Eigen::Index n = vx.rows();
    const Eigen::Index d = vx.cols();
    Matrix<T> xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mean = vx.row(i).mean();
      const auto centered = (vx.row(i).array() - mean).matrix();
      const T var = centered.squaredNorm() / static_cast<T>(d);
      rstd(i) = T(1) / std::sqrt(var + eps);
      xhat.row(i) = centered * rstd(i);
    }
    Matrix<T> out = (xhat.array().rowwise() * vg.row(0).array()).matrix();
    out.rowwise() += vb.row(0);
    return make(std::move(out), {x, gamma, beta},
                [this, x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](const Matrix<T>& g) {
                  if (requires_grad(gamma)) grad(gamma) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (requires_grad(beta)) grad(beta) += g.colwise().sum();
                  if (!requires_grad(x)) return;
                  const auto& vg2 = value(gamma);
                  auto& gx = grad(x);
                  const T inv_d = T(1) / static_cast<T>(xhat.cols());
                  for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                    const auto dxhat = (g.row(i).array() * vg2.row(0).array()).matrix();
                    const T m1 = dxhat.sum() * inv_d;
                    const T m2 = dxhat.dot(xhat.row(i)) * inv_d;
                    gx.row(i) += ((dxhat.array() - m1 - xhat.row(i).array() * m2) * rstd(i)).matrix();
                  }
                });
  }

  /// Exact GELU: x Φ(x).
  Var gelu(Var x) {
    const auto& vx = value(x);
    const T inv_sqrt2 = T(0.70710678118654752440);
    Matrix<T> e = vx.unaryExpr([inv_sqrt2](T v) { return std::erf(v * inv_sqrt2); });
    Matrix<T> out = (T(0.5) * vx.array() * (T(1) + e.array())).matrix();
    return make(std::move(out), {x}, [this, x, e = std::move(e)](const Matrix<T>& g) {
      const T inv_sqrt_2pi = T(0.39894228040143267794);
      const auto& vx2 = value(x);
      grad(x).array() += g.array() * vx2.binaryExpr(e, [&](T v, T ev) {
        return T(0.5) * (T(1) + ev) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      }).array();
    });
  }

  /// Multi-head scaled dot-product attention over explicit segments.
  Var attention(Var q, Var k, Var v, int heads, std::vector<AttentionSegment> segments) {
    const auto& vq = value(q);
    const auto& vk = value(k);
    const auto& vv = value(v);
    if (vq.cols() != vk.cols() || vk.cols() != vv.cols() || vk.rows() != vv.rows() || heads < 1 ||
        vq.cols() % heads != 0) {
      throw ShapeError("attention: shape mismatch");
    }
    const Eigen::Index dh = vq.cols() / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> out = Matrix<T>::Zero(vq.rows(), vq.cols());
    std::vector<Matrix<T>> probs;
    probs.reserve(segments.size() * static_cast<std::size_t>(heads));
    const T neg_inf = -std::numeric_limits<T>::infinity();

    for (const auto& s : segments) {
      const Eigen::Index nq = s.q_end - s.q_begin;
      const Eigen::Index nk = s.k_end - s.k_begin;
      if (nq < 0 || nk <= 0 || s.q_end > vq.rows() || s.k_end > vk.rows() ||
          (!s.key_valid.empty() && static_cast<Eigen::Index>(s.key_valid.size()) != nk) || (s.causal && nq > nk)) {
        throw ShapeError("attention: bad segment");
      }
      for (int h = 0; h < heads; ++h) {
        const Eigen::Index c = h * dh;
        Matrix<T> sc = (vq.block(s.q_begin, c, nq, dh) * vk.block(s.k_begin, c, nk, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < nq; ++i) {
          for (Eigen::Index j = 0; j < nk; ++j) {
            if ((!s.key_valid.empty() && !s.key_valid[static_cast<std::size_t>(j)]) || (s.causal && j > i)) {
              sc(i, j) = neg_inf;
            }
          }
          const T mx = sc.row(i).maxCoeff();
          if (mx == neg_inf) throw ShapeError("attention: query row has no valid key");
          sc.row(i) = (sc.row(i).array() - mx).exp().matrix();
          sc.row(i) /= sc.row(i).sum();
        }
        out.block(s.q_begin, c, nq, dh).noalias() = sc * vv.block(s.k_begin, c, nk, dh);
        probs.push_back(std::move(sc));
      }
    }
    return make(std::move(out), {q, k, v},
                [this, q, k, v, heads, dh, scale, segments = std::move(segments),
                 probs = std::move(probs)](const Matrix<T>& g) {
                  const auto& vq2 = value(q);
                  const auto& vk2 = value(k);
                  const auto& vv2 = value(v);
                  const bool gq = requires_grad(q), gk = requires_grad(k), gv = requires_grad(v);
                  std::size_t idx = 0;
                  for (const auto& s : segments) {
                    const Eigen::Index nq = s.q_end - s.q_begin;
                    const Eigen::Index nk = s.k_end - s.k_begin;
                    for (int h = 0; h < heads; ++h, ++idx) {
                      const Eigen::Index c = h * dh;
                      const Matrix<T>& p = probs[idx];
                      const auto go = g.block(s.q_begin, c, nq, dh);
                      if (gv) grad(v).block(s.k_begin, c, nk, dh).noalias() += p.transpose() * go;
                      if (!gq && !gk) continue;
                      Matrix<T> dp = go * vv2.block(s.k_begin, c, nk, dh).transpose();
                      const auto rowdot = (dp.array() * p.array()).rowwise().sum().eval();
                      Matrix<T> ds = (p.array() * (dp.array().colwise() - rowdot)).matrix() * scale;
                      if (gq) grad(q).block(s.q_begin, c, nq, dh).noalias() += ds * vk2.block(s.k_begin, c, nk, dh);
                      if (gk) grad(k).block(s.k_begin, c, nk, dh).noalias() += ds.transpose() * vq2.block(s.q_begin, c, nq, dh);
                    }
                  }
                });
  }

  /// Σ_i weight · (logsumexp(z_i) − z_i[t_i]) as a 1x1 value.
  Var cross_entropy(Var logits, std::vector<int> targets, T weight = T(1)) {
    const auto& z = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw ShapeError("cross_entropy: target count mismatch");
    Matrix<T> probs(z.rows(), z.cols());
    T total = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const int t = targets[static_cast<std::size_t>(i)];
      if (t < 0 || t >= z.cols()) throw ShapeError("cross_entropy: target out of range");
      const T mx = z.row(i).maxCoeff();
      probs.row(i) = (z.row(i).array() - mx).exp().matrix();
      const T sum = probs.row(i).sum();
      probs.row(i) /= sum;
      total += (std::log(sum) + mx - z(i, t));
    }
    Matrix<T> out(1, 1);
    out(0, 0) = weight * total;
    return make(std::move(out), {logits},
                [this, logits, weight, targets = std::move(targets), probs = std::move(probs)](const Matrix<T>& g) {
                  Matrix<T> d = probs;
                  for (std::size_t i = 0; i < targets.size(); ++i) d(static_cast<Eigen::Index>(i), targets[i]) -= T(1);
                  grad(logits) += d * (weight * g(0, 0));
                });
  }

  Var sum(const std::vector<Var>& scalars) {
    Matrix<T> out = Matrix<T>::Zero(1, 1);
    std::vector<Var> deps;
    for (Var s : scalars) {
      out(0, 0) += scalar(s);
      deps.push_back(s);
    }
    return make(std::move(out), deps, [this, scalars](const Matrix<T>& g) {
      for (Var s : scalars) {
        if (requires_grad(s)) grad(s) += g;
      }
    });
  }

  Var scale(Var x, T factor) {
    return make(value(x) * factor, {x}, [this, x, factor](const Matrix<T>& g) { grad(x) += g * factor; });
  }

  /// Seeds d(loss)/d(loss) = 1 and runs recorded closures in reverse.
  void backward(Var loss) {
    const auto& v = value(loss);
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!requires_grad(loss)) return;
    grad(loss).setConstant(T(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.back || !n.grad_ready) continue;
      n.back(n.grad_own);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> own;
    const Matrix<T>* ext = nullptr;
    Matrix<T> grad_own;
    Matrix<T>* grad_ext = nullptr;
    bool needs_grad = false;
    bool grad_ready = false;
    std::function<void(const Matrix<T>&)> back;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Matrix<T> value, std::initializer_list<Var> deps, std::function<void(const Matrix<T>&)> back) {
    return make(std::move(value), std::vector<Var>(deps), std::move(back));
  }

  Var make(Matrix<T> value, const std::vector<Var>& deps, std::function<void(const Matrix<T>&)> back) {
    Node n;
    n.own = std::move(value);
    for (Var d : deps) n.needs_grad = n.needs_grad || requires_grad(d);
    if (n.needs_grad) n.back = std::move(back);
    return push(std::move(n));
  }

  Matrix<T>& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad_ext) return *n.grad_ext;
    if (!n.grad_ready) {
      const auto& val = n.ext ? *n.ext : n.own;
      n.grad_own = Matrix<T>::Zero(val.rows(), val.cols());
      n.grad_ready = true;
    }
    return n.grad_own;
  }

  std::vector<Node> nodes_;
};

}  // namespace xlg
