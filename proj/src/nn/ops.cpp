#include "sar2rgb/nn/ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace sar2rgb::nn {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

template <class T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void backward(const std::vector<std::pair<Var<T>, Matrix<T>>>& seeds) {
  // Iterative post-order DFS gives a topological order of the recorded tape.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  for (const auto& [root, seed] : seeds) {
    if (!root.requires_grad()) continue;
    if (seed.rows() != root.rows() || seed.cols() != root.cols())
      throw std::invalid_argument("backward seed shape mismatch");
    root.node()->accumulate(seed);
    if (visited.insert(root.node().get()).second) stack.emplace_back(root.node().get(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() != 0) {
      node->backward(*node);
      // intermediate gradients are not needed after propagation
      node->grad.resize(0, 0);
    }
  }
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Matrix<T> out = a.value() * b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    if (wants(self, 0)) self.inputs[0]->grad_buffer().noalias() += self.grad * B.transpose();
    if (wants(self, 1)) self.inputs[1]->grad_buffer().noalias() += A.transpose() * self.grad;
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x.cols() == w.rows(), "linear input width mismatch");
  require(b.rows() == 1 && b.cols() == w.cols(), "linear bias shape mismatch");
  Matrix<T> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result<T>(std::move(out), {x, w, b}, [](Node<T>& self) {
    const auto& X = self.inputs[0]->value;
    const auto& W = self.inputs[1]->value;
    if (wants(self, 0)) self.inputs[0]->grad_buffer().noalias() += self.grad * W.transpose();
    if (wants(self, 1)) self.inputs[1]->grad_buffer().noalias() += X.transpose() * self.grad;
    if (wants(self, 2)) self.inputs[2]->grad_buffer() += self.grad.colwise().sum();
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(-self.grad);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self, 0))
      self.inputs[0]->grad_buffer() += self.grad.cwiseProduct(self.inputs[1]->value);
    if (wants(self, 1))
      self.inputs[1]->grad_buffer() += self.grad.cwiseProduct(self.inputs[0]->value);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return make_result<T>(a.value() * s, {a}, [s](Node<T>& self) {
    self.inputs[0]->grad_buffer() += self.grad * s;
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Matrix<T> out = x.value().unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  Matrix<T> s = out;
  return make_result<T>(std::move(out), {x}, [s = std::move(s)](Node<T>& self) {
    self.inputs[0]->grad_buffer() += self.grad.cwiseProduct(s.cwiseProduct((T(1) - s.array()).matrix()));
  });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  Matrix<T> sig = (T(1) + (-x.value().array()).exp()).inverse().matrix();
  Matrix<T> out = x.value().cwiseProduct(sig);
  return make_result<T>(std::move(out), {x}, [sig = std::move(sig)](Node<T>& self) {
    const auto X = self.inputs[0]->value.array();
    const auto s = sig.array();
    self.inputs[0]->grad_buffer().array() += self.grad.array() * (s * (T(1) + X * (T(1) - s)));
  });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  const T k = T(0.7978845608028654);  // sqrt(2 / pi)
  const T c = T(0.044715);
  const auto X = x.value().array();
  Matrix<T> th = (k * (X + c * X.cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * X * (T(1) + th.array())).matrix();
  return make_result<T>(std::move(out), {x}, [th = std::move(th), k, c](Node<T>& self) {
    const auto X = self.inputs[0]->value.array();
    const auto t = th.array();
    auto d = T(0.5) * (T(1) + t) + T(0.5) * X * (T(1) - t.square()) * k * (T(1) + T(3) * c * X.square());
    self.inputs[0]->grad_buffer().array() += self.grad.array() * d;
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Matrix<T> out = x.value().cwiseMax(T(0));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& X = self.inputs[0]->value;
    self.inputs[0]->grad_buffer() +=
        self.grad.cwiseProduct(X.unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, T eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix<T> out(n, d);
  Matrix<T> inv_std(n, 1);
  for (Index r = 0; r < n; ++r) {
    auto row = x.value().row(r);
    T mean = row.mean();
    T var = (row.array() - mean).square().mean();
    T is = T(1) / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    out.row(r) = (row.array() - mean) * is;
  }
  Matrix<T> normalized = out;
  return make_result<T>(
      std::move(out), {x},
      [normalized = std::move(normalized), inv_std = std::move(inv_std), d](Node<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (Index r = 0; r < self.grad.rows(); ++r) {
          auto dy = self.grad.row(r).array();
          auto xh = normalized.row(r).array();
          T mean_dy = dy.sum() / T(d);
          T mean_dyx = (dy * xh).sum() / T(d);
          gx.row(r).array() += inv_std(r, 0) * (dy - mean_dy - xh * mean_dyx);
        }
      });
}

template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scl, int group) {
  const Index batch = shift.rows();
  require(x.rows() == batch * group && shift.cols() == x.cols() && scl.rows() == batch &&
              scl.cols() == x.cols(),
          "modulate shape mismatch");
  Matrix<T> out(x.rows(), x.cols());
  for (Index b = 0; b < batch; ++b) {
    auto blk = x.value().middleRows(b * group, group).array();
    out.middleRows(b * group, group).array() =
        (blk.rowwise() * (T(1) + scl.value().row(b).array())).rowwise() +
        shift.value().row(b).array();
  }
  return make_result<T>(std::move(out), {x, shift, scl}, [group, batch](Node<T>& self) {
    const auto& X = self.inputs[0]->value;
    const auto& S = self.inputs[2]->value;
    for (Index b = 0; b < batch; ++b) {
      auto g = self.grad.middleRows(b * group, group);
      if (wants(self, 0))
        self.inputs[0]->grad_buffer().middleRows(b * group, group).array() +=
            g.array().rowwise() * (T(1) + S.row(b).array());
      if (wants(self, 1)) self.inputs[1]->grad_buffer().row(b) += g.colwise().sum();
      if (wants(self, 2))
        self.inputs[2]->grad_buffer().row(b) +=
            g.cwiseProduct(X.middleRows(b * group, group)).colwise().sum();
    }
  });
}

template <class T>
Var<T> gated_add(const Var<T>& x, const Var<T>& y, const Var<T>& gate, int group) {
  const Index batch = gate.rows();
  require(x.rows() == y.rows() && x.cols() == y.cols() && x.rows() == batch * group &&
              gate.cols() == x.cols(),
          "gated_add shape mismatch");
  Matrix<T> out = x.value();
  for (Index b = 0; b < batch; ++b)
    out.middleRows(b * group, group).array() +=
        y.value().middleRows(b * group, group).array().rowwise() * gate.value().row(b).array();
  return make_result<T>(std::move(out), {x, y, gate}, [group, batch](Node<T>& self) {
    const auto& Y = self.inputs[1]->value;
    const auto& G = self.inputs[2]->value;
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    for (Index b = 0; b < batch; ++b) {
      auto g = self.grad.middleRows(b * group, group);
      if (wants(self, 1))
        self.inputs[1]->grad_buffer().middleRows(b * group, group).array() +=
            g.array().rowwise() * G.row(b).array();
      if (wants(self, 2))
        self.inputs[2]->grad_buffer().row(b) +=
            g.cwiseProduct(Y.middleRows(b * group, group)).colwise().sum();
    }
  });
}

template <class T>
Var<T> attention(const Var<T>& qkv, int batch, int tokens, int heads) {
  require(qkv.rows() == Index(batch) * tokens && qkv.cols() % 3 == 0, "attention shape mismatch");
  const Index width = qkv.cols() / 3;
  require(width % heads == 0, "attention width not divisible by heads");
  const Index hd = width / heads;
  const T s = T(1) / std::sqrt(T(hd));
  const auto& QKV = qkv.value();
  Matrix<T> out(qkv.rows(), width);
  std::vector<Matrix<T>> probs(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto q = QKV.block(Index(b) * tokens, h * hd, tokens, hd);
      auto k = QKV.block(Index(b) * tokens, width + h * hd, tokens, hd);
      auto v = QKV.block(Index(b) * tokens, 2 * width + h * hd, tokens, hd);
      Matrix<T> p = (q * k.transpose()) * s;
      for (Index r = 0; r < p.rows(); ++r) {
        T m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
      }
      out.block(Index(b) * tokens, h * hd, tokens, hd).noalias() = p * v;
      probs[static_cast<std::size_t>(b) * heads + h] = std::move(p);
    }
  }
  return make_result<T>(
      std::move(out), {qkv},
      [probs = std::move(probs), batch, tokens, heads, width, hd, s](Node<T>& self) {
        const auto& QKV = self.inputs[0]->value;
        auto& G = self.inputs[0]->grad_buffer();
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix<T>& p = probs[static_cast<std::size_t>(b) * heads + h];
            const Index r0 = Index(b) * tokens;
            auto q = QKV.block(r0, h * hd, tokens, hd);
            auto k = QKV.block(r0, width + h * hd, tokens, hd);
            auto v = QKV.block(r0, 2 * width + h * hd, tokens, hd);
            Matrix<T> dout = self.grad.block(r0, h * hd, tokens, hd);
            G.block(r0, 2 * width + h * hd, tokens, hd).noalias() += p.transpose() * dout;
            Matrix<T> dp = dout * v.transpose();
            Matrix<T> ds = p.cwiseProduct(
                (dp.colwise() - dp.cwiseProduct(p).rowwise().sum()));
            ds *= s;
            G.block(r0, h * hd, tokens, hd).noalias() += ds * k;
            G.block(r0, width + h * hd, tokens, hd).noalias() += ds.transpose() * q;
          }
        }
      });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols out of range");
  Matrix<T> out = x.value().middleCols(start, count);
  return make_result<T>(std::move(out), {x}, [start, count](Node<T>& self) {
    self.inputs[0]->grad_buffer().middleCols(start, count) += self.grad;
  });
}

template <class T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < table.rows(), "gather_rows index out of range");
    out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result<T>(std::move(out), {table}, [idx = std::move(idx)](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

template <class T>
Var<T> add_tiled_rows(const Var<T>& x, const Matrix<T>& pattern) {
  require(pattern.cols() == x.cols() && pattern.rows() > 0 && x.rows() % pattern.rows() == 0,
          "add_tiled_rows shape mismatch");
  Matrix<T> out = x.value();
  for (Index r = 0; r < out.rows(); r += pattern.rows()) out.middleRows(r, pattern.rows()) += pattern;
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    self.inputs[0]->accumulate(self.grad);
  });
}

template <class T>
Matrix<T> patchify_matrix(const Matrix<T>& x, int channels, int size, int patch) {
  require(patch > 0 && size % patch == 0, "patch size must divide the grid size");
  require(x.cols() == Index(channels) * size * size, "patchify input width mismatch");
  const int grid = size / patch;
  const Index n = Index(grid) * grid;
  const Index pd = Index(patch) * patch * channels;
  Matrix<T> out(x.rows() * n, pd);
  for (Index b = 0; b < x.rows(); ++b)
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx) {
        const Index row = b * n + Index(gy) * grid + gx;
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < channels; ++c) {
              const int y = gy * patch + py;
              const int xx = gx * patch + px;
              out(row, (Index(py) * patch + px) * channels + c) =
                  x(b, (Index(c) * size + y) * size + xx);
            }
      }
  return out;
}

template <class T>
Matrix<T> unpatchify_matrix(const Matrix<T>& tokens, int batch, int channels, int size, int patch) {
  require(patch > 0 && size % patch == 0, "patch size must divide the grid size");
  const int grid = size / patch;
  const Index n = Index(grid) * grid;
  require(tokens.rows() == Index(batch) * n && tokens.cols() == Index(patch) * patch * channels,
          "unpatchify input shape mismatch");
  Matrix<T> out(batch, Index(channels) * size * size);
  for (Index b = 0; b < batch; ++b)
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx) {
        const Index row = b * n + Index(gy) * grid + gx;
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < channels; ++c) {
              const int y = gy * patch + py;
              const int xx = gx * patch + px;
              out(b, (Index(c) * size + y) * size + xx) =
                  tokens(row, (Index(py) * patch + px) * channels + c);
            }
      }
  return out;
}

template <class T>
Var<T> patchify(const Var<T>& x, int channels, int size, int patch) {
  const int batch = static_cast<int>(x.rows());
  return make_result<T>(patchify_matrix<T>(x.value(), channels, size, patch), {x},
                        [batch, channels, size, patch](Node<T>& self) {
                          self.inputs[0]->grad_buffer() +=
                              unpatchify_matrix<T>(self.grad, batch, channels, size, patch);
                        });
}

template <class T>
Var<T> unpatchify(const Var<T>& tokens, int batch, int channels, int size, int patch) {
  return make_result<T>(unpatchify_matrix<T>(tokens.value(), batch, channels, size, patch),
                        {tokens}, [channels, size, patch](Node<T>& self) {
                          self.inputs[0]->grad_buffer() +=
                              patchify_matrix<T>(self.grad, channels, size, patch);
                        });
}

namespace {

// cols is (Cin * k * k) x (Ho * Wo)
template <class T, class Row>
void im2col(const Row& src, const ConvGeometry& g, Matrix<T>& cols) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  cols.resize(Index(g.in_channels) * g.kernel * g.kernel, Index(ho) * wo);
  for (int c = 0; c < g.in_channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Index r = (Index(c) * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            T v = T(0);
            if (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
              v = src((Index(c) * g.height + iy) * g.width + ix);
            cols(r, Index(oy) * wo + ox) = v;
          }
        }
      }
}

template <class T, class Row>
void col2im(const Matrix<T>& cols, const ConvGeometry& g, Row dst) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  for (int c = 0; c < g.in_channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Index r = (Index(c) * g.kernel + ky) * g.kernel + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            dst((Index(c) * g.height + iy) * g.width + ix) += cols(r, Index(oy) * wo + ox);
          }
        }
      }
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvGeometry& g) {
  require(x.cols() == Index(g.in_channels) * g.height * g.width, "conv2d input width mismatch");
  require(w.rows() == g.out_channels && w.cols() == Index(g.in_channels) * g.kernel * g.kernel,
          "conv2d weight shape mismatch");
  require(b.rows() == 1 && b.cols() == g.out_channels, "conv2d bias shape mismatch");
  require(g.out_height() > 0 && g.out_width() > 0, "conv2d output would be empty");
  const Index hw = Index(g.out_height()) * g.out_width();
  Matrix<T> out(x.rows(), Index(g.out_channels) * hw);
  Matrix<T> cols;
  Matrix<T> res(g.out_channels, hw);
  for (Index n = 0; n < x.rows(); ++n) {
    im2col<T>(x.value().row(n), g, cols);
    res.noalias() = w.value() * cols;
    res.colwise() += b.value().row(0).transpose();
    out.row(n) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(res.data(), res.size());
  }
  return make_result<T>(std::move(out), {x, w, b}, [g, hw](Node<T>& self) {
    const auto& X = self.inputs[0]->value;
    const auto& W = self.inputs[1]->value;
    Matrix<T> cols;
    Matrix<T> dcols;
    for (Index n = 0; n < X.rows(); ++n) {
      Eigen::Map<const Matrix<T>> dy(self.grad.row(n).data(), g.out_channels, hw);
      if (wants(self, 1)) {
        im2col<T>(X.row(n), g, cols);
        self.inputs[1]->grad_buffer().noalias() += dy * cols.transpose();
      }
      if (wants(self, 2)) self.inputs[2]->grad_buffer() += dy.rowwise().sum().transpose();
      if (wants(self, 0)) {
        dcols.noalias() = W.transpose() * dy;
        col2im<T>(dcols, g, self.inputs[0]->grad_buffer().row(n));
      }
    }
  });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int channels, int height, int width, int factor) {
  require(x.cols() == Index(channels) * height * width, "upsample input width mismatch");
  const int oh = height * factor;
  const int ow = width * factor;
  Matrix<T> out(x.rows(), Index(channels) * oh * ow);
  for (Index n = 0; n < x.rows(); ++n)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          out(n, (Index(c) * oh + y) * ow + xx) =
              x.value()(n, (Index(c) * height + y / factor) * width + xx / factor);
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (Index n = 0; n < g.rows(); ++n)
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            g(n, (Index(c) * height + y / factor) * width + xx / factor) +=
                self.grad(n, (Index(c) * oh + y) * ow + xx);
  });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x, int channels, int height, int width) {
  require(x.cols() == Index(channels) * height * width, "pool input width mismatch");
  const Index hw = Index(height) * width;
  Matrix<T> out(x.rows(), channels);
  for (Index n = 0; n < x.rows(); ++n)
    for (int c = 0; c < channels; ++c) out(n, c) = x.value().row(n).segment(c * hw, hw).mean();
  return make_result<T>(std::move(out), {x}, [channels, hw](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (Index n = 0; n < g.rows(); ++n)
      for (int c = 0; c < channels; ++c)
        g.row(n).segment(c * hw, hw).array() += self.grad(n, c) / T(hw);
  });
}

template <class T>
Var<T> reparameterize(const Var<T>& mean, const Var<T>& logvar, const Matrix<T>& eps) {
  require(mean.rows() == logvar.rows() && mean.cols() == logvar.cols() &&
              eps.rows() == mean.rows() && eps.cols() == mean.cols(),
          "reparameterize shape mismatch");
  Matrix<T> sd = (logvar.value().array() * T(0.5)).exp().matrix();
  Matrix<T> out = mean.value() + sd.cwiseProduct(eps);
  return make_result<T>(std::move(out), {mean, logvar},
                        [sd = std::move(sd), eps](Node<T>& self) {
                          if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
                          if (wants(self, 1))
                            self.inputs[1]->grad_buffer() +=
                                (self.grad.cwiseProduct(sd).cwiseProduct(eps)) * T(0.5);
                        });
}

#define SAR2RGB_INSTANTIATE_OPS(T)                                                           \
  template void backward<T>(const std::vector<std::pair<Var<T>, Matrix<T>>>&);               \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> silu<T>(const Var<T>&);                                                    \
  template Var<T> sigmoid<T>(const Var<T>&);                                                 \
  template Var<T> gelu<T>(const Var<T>&);                                                    \
  template Var<T> relu<T>(const Var<T>&);                                                    \
  template Var<T> layer_norm<T>(const Var<T>&, T);                                           \
  template Var<T> modulate<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);             \
  template Var<T> gated_add<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);            \
  template Var<T> attention<T>(const Var<T>&, int, int, int);                                \
  template Var<T> slice_cols<T>(const Var<T>&, Index, Index);                                \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const int>);                       \
  template Var<T> add_tiled_rows<T>(const Var<T>&, const Matrix<T>&);                        \
  template Matrix<T> patchify_matrix<T>(const Matrix<T>&, int, int, int);                    \
  template Matrix<T> unpatchify_matrix<T>(const Matrix<T>&, int, int, int, int);             \
  template Var<T> patchify<T>(const Var<T>&, int, int, int);                                 \
  template Var<T> unpatchify<T>(const Var<T>&, int, int, int, int);                          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const ConvGeometry&); \
  template Var<T> upsample_nearest<T>(const Var<T>&, int, int, int, int);                    \
  template Var<T> global_avg_pool<T>(const Var<T>&, int, int, int);                          \
  template Var<T> reparameterize<T>(const Var<T>&, const Var<T>&, const Matrix<T>&);

SAR2RGB_INSTANTIATE_OPS(float)
SAR2RGB_INSTANTIATE_OPS(double)

}  // namespace sar2rgb::nn
