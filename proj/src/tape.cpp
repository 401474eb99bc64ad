#include "salbench/tape.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace salbench::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + detail);
}

}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::kMatMul;
  n.value = salbench::matmul(val(a), val(b));  // validates shapes
  n.parents = {a, b};
  n.requires_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
  Node n;
  n.kind = OpKind::kTranspose;
  n.value = transpose2d(val(a));
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) shape_error("add", A.shape_str() + " + " + B.shape_str());
  Node n;
  n.kind = OpKind::kAdd;
  n.value = A;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] += B[i];
  n.parents = {a, b};
  n.requires_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) shape_error("mul", A.shape_str() + " * " + B.shape_str());
  Node n;
  n.kind = OpKind::kMul;
  n.value = A;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= B[i];
  n.parents = {a, b};
  n.requires_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
  Node n;
  n.kind = OpKind::kScale;
  n.value = val(a);
  for (auto& v : n.value.vec()) v *= c;
  n.parents = {a};
  n.scalar = c;
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::add_bias(NodeId a, NodeId bias) {
  const Tensor& A = val(a);
  const Tensor& B = val(bias);
  size_t cols = A.rank() == 2 ? A.dim(1) : A.dim(0);
  if (B.rank() != 1 || B.dim(0) != cols) {
    shape_error("add_bias", A.shape_str() + " + " + B.shape_str());
  }
  Node n;
  n.kind = OpKind::kAddBias;
  n.value = A;
  size_t rows = A.numel() / cols;
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) n.value[r * cols + c] += B[c];
  n.parents = {a, bias};
  n.requires_grad = needs_grad(a) || needs_grad(bias);
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.kind = OpKind::kSigmoid;
  n.value = val(a);
  for (auto& v : n.value.vec()) v = 1.0 / (1.0 + std::exp(-v));
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
  Node n;
  n.kind = OpKind::kTanh;
  n.value = val(a);
  for (auto& v : n.value.vec()) v = std::tanh(v);
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
  Node n;
  n.kind = OpKind::kExp;
  n.value = val(a);
  for (auto& v : n.value.vec()) v = std::exp(v);
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  Node n;
  n.kind = OpKind::kLog;
  n.value = val(a);
  for (auto& v : n.value.vec()) v = std::log(v);
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId a) {
  const Tensor& A = val(a);
  size_t cols = A.rank() == 2 ? A.dim(1) : A.dim(0);
  size_t rows = A.numel() / cols;
  Node n;
  n.kind = OpKind::kSoftmaxRows;
  n.value = A;
  for (size_t r = 0; r < rows; ++r) {
    double* row = n.value.data() + r * cols;
    double mx = row[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId a, NodeId gain, NodeId shift, double eps) {
  const Tensor& A = val(a);
  const Tensor& G = val(gain);
  const Tensor& S = val(shift);
  size_t cols = A.rank() == 2 ? A.dim(1) : A.dim(0);
  size_t rows = A.numel() / cols;
  if (G.rank() != 1 || G.dim(0) != cols || !G.same_shape(S)) {
    shape_error("layer_norm", A.shape_str() + " with gain " + G.shape_str() + ", shift " +
                S.shape_str());
  }
  Node n;
  n.kind = OpKind::kLayerNorm;
  n.value = A;
  // cached: normalized rows, plus one extra column holding 1/std per row.
  n.cached = Tensor({rows, cols + 1});
  for (size_t r = 0; r < rows; ++r) {
    const double* x = A.data() + r * cols;
    double mean = 0.0;
    for (size_t c = 0; c < cols; ++c) mean += x[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<double>(cols);
    double inv_std = 1.0 / std::sqrt(var + eps);
    for (size_t c = 0; c < cols; ++c) {
      double xhat = (x[c] - mean) * inv_std;
      n.cached.at(r, c) = xhat;
      n.value[r * cols + c] = xhat * G[c] + S[c];
    }
    n.cached.at(r, cols) = inv_std;
  }
  n.parents = {a, gain, shift};
  n.scalar = eps;
  n.requires_grad = needs_grad(a) || needs_grad(gain) || needs_grad(shift);
  return push(std::move(n));
}

NodeId Tape::concat(const std::vector<NodeId>& parts, size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const Tensor& first = val(parts[0]);
  size_t rank = first.rank();
  if (axis >= rank) throw std::invalid_argument("concat: axis out of range");
  Shape out = first.shape();
  Shape part_sizes;
  part_sizes.push_back(first.dim(axis));
  for (size_t i = 1; i < parts.size(); ++i) {
    const Tensor& t = val(parts[i]);
    if (t.rank() != rank) shape_error("concat", first.shape_str() + " vs " + t.shape_str());
    for (size_t d = 0; d < rank; ++d) {
      if (d != axis && t.dim(d) != out[d]) {
        shape_error("concat", first.shape_str() + " vs " + t.shape_str());
      }
    }
    out[axis] += t.dim(axis);
    part_sizes.push_back(t.dim(axis));
  }
  Node n;
  n.kind = OpKind::kConcat;
  n.value = Tensor(out);
  if (rank == 1 || axis == 0) {
    size_t off = 0;
    for (NodeId p : parts) {
      const Tensor& t = val(p);
      std::copy(t.data(), t.data() + t.numel(), n.value.data() + off);
      off += t.numel();
    }
  } else {  // rank 2, axis 1
    size_t rows = out[0];
    size_t col_off = 0;
    for (NodeId p : parts) {
      const Tensor& t = val(p);
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < t.dim(1); ++c) n.value.at(r, col_off + c) = t.at(r, c);
      col_off += t.dim(1);
    }
  }
  n.parents = parts;
  n.axis = axis;
  n.sizes = part_sizes;
  n.requires_grad = false;
  for (NodeId p : parts) n.requires_grad = n.requires_grad || needs_grad(p);
  return push(std::move(n));
}

NodeId Tape::slice(NodeId a, const Shape& offsets, const Shape& sizes) {
  const Tensor& A = val(a);
  if (offsets.size() != A.rank() || sizes.size() != A.rank()) {
    shape_error("slice", A.shape_str() + " with offsets " + salbench::shape_str(offsets));
  }
  for (size_t d = 0; d < A.rank(); ++d) {
    if (offsets[d] + sizes[d] > A.dim(d)) {
      shape_error("slice", A.shape_str() + " region " + salbench::shape_str(sizes) + " at " +
                  salbench::shape_str(offsets));
    }
  }
  Node n;
  n.kind = OpKind::kSlice;
  n.value = Tensor(sizes);
  if (A.rank() == 1) {
    for (size_t i = 0; i < sizes[0]; ++i) n.value[i] = A[offsets[0] + i];
  } else {
    for (size_t r = 0; r < sizes[0]; ++r)
      for (size_t c = 0; c < sizes[1]; ++c)
        n.value.at(r, c) = A.at(offsets[0] + r, offsets[1] + c);
  }
  n.parents = {a};
  n.offsets = offsets;
  n.sizes = sizes;
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, Shape new_shape) {
  const Tensor& A = val(a);
  if (shape_numel(new_shape) != A.numel()) {
    shape_error("reshape", A.shape_str() + " to " + salbench::shape_str(new_shape));
  }
  Node n;
  n.kind = OpKind::kReshape;
  n.value = Tensor(new_shape, A.vec());
  n.parents = {a};
  n.prev_shape = A.shape();
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId table, std::vector<int> rows) {
  const Tensor& T = val(table);
  if (T.rank() != 2) shape_error("gather_rows", T.shape_str());
  for (int r : rows) {
    if (r < 0 || static_cast<size_t>(r) >= T.dim(0)) {
      throw std::invalid_argument("gather_rows: row " + std::to_string(r) +
                                  " out of range for table " + T.shape_str());
    }
  }
  Node n;
  n.kind = OpKind::kGatherRows;
  n.value = Tensor({rows.size(), T.dim(1)});
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t c = 0; c < T.dim(1); ++c) n.value.at(i, c) = T.at(rows[i], c);
  n.parents = {table};
  n.idx = std::move(rows);
  n.requires_grad = needs_grad(table);
  return push(std::move(n));
}

NodeId Tape::pick(NodeId a, std::vector<std::pair<int, int>> indices) {
  const Tensor& A = val(a);
  size_t cols = A.rank() == 2 ? A.dim(1) : A.dim(0);
  size_t rows = A.numel() / cols;
  Node n;
  n.kind = OpKind::kPick;
  n.value = Tensor({indices.size()});
  n.idx.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    auto [r, c] = indices[i];
    if (r < 0 || c < 0 || static_cast<size_t>(r) >= rows || static_cast<size_t>(c) >= cols) {
      throw std::invalid_argument("pick: index (" + std::to_string(r) + "," + std::to_string(c) +
                                  ") out of range for " + A.shape_str());
    }
    n.idx.push_back(r * static_cast<int>(cols) + c);
    n.value[i] = A[n.idx.back()];
  }
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
  Node n;
  n.kind = OpKind::kSumAll;
  double s = 0.0;
  for (double v : val(a).vec()) s += v;
  n.value = Tensor::scalar(s);
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
  Node n;
  n.kind = OpKind::kMeanAll;
  double s = 0.0;
  for (double v : val(a).vec()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(val(a).numel()));
  n.parents = {a};
  n.requires_grad = needs_grad(a);
  return push(std::move(n));
}

GradientMap Tape::backward(NodeId output) const {
  if (val(output).numel() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got " +
                                val(output).shape_str());
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[output] = Tensor::full(val(output).shape(), 1.0);

  auto accumulate = [&](NodeId id, Tensor g) {
    if (!nodes_[id].requires_grad) return;
    if (!grads[id]) {
      grads[id] = std::move(g);
    } else {
      Tensor& acc = *grads[id];
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    }
  };

  for (NodeId id = output; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!grads[id] || n.kind == OpKind::kLeaf || !n.requires_grad) continue;
    const Tensor& g = *grads[id];
    switch (n.kind) {
      case OpKind::kMatMul: {
        const Tensor& A = val(n.parents[0]);
        const Tensor& B = val(n.parents[1]);
        bool a_vec = A.rank() == 1;
        bool b_vec = B.rank() == 1;
        size_t m = a_vec ? 1 : A.dim(0);
        size_t k = a_vec ? A.dim(0) : A.dim(1);
        size_t nn = b_vec ? 1 : B.dim(1);
        // dA[m,k] = g[m,n] * B^T[n,k];  dB[k,n] = A^T[k,m] * g[m,n]
        if (needs_grad(n.parents[0])) {
          Tensor da(A.shape());
          for (size_t i = 0; i < m; ++i)
            for (size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * B[p * nn + j];
              da[i * k + p] = acc;
            }
          accumulate(n.parents[0], std::move(da));
        }
        if (needs_grad(n.parents[1])) {
          Tensor db(B.shape());
          for (size_t p = 0; p < k; ++p)
            for (size_t j = 0; j < nn; ++j) {
              double acc = 0.0;
              for (size_t i = 0; i < m; ++i) acc += A[i * k + p] * g[i * nn + j];
              db[p * nn + j] = acc;
            }
          accumulate(n.parents[1], std::move(db));
        }
        break;
      }
      case OpKind::kTranspose:
        accumulate(n.parents[0], transpose2d(g));
        break;
      case OpKind::kAdd:
        accumulate(n.parents[0], g);
        accumulate(n.parents[1], g);
        break;
      case OpKind::kMul: {
        const Tensor& A = val(n.parents[0]);
        const Tensor& B = val(n.parents[1]);
        if (needs_grad(n.parents[0])) {
          Tensor da(A.shape());
          for (size_t i = 0; i < da.numel(); ++i) da[i] = g[i] * B[i];
          accumulate(n.parents[0], std::move(da));
        }
        if (needs_grad(n.parents[1])) {
          Tensor db(B.shape());
          for (size_t i = 0; i < db.numel(); ++i) db[i] = g[i] * A[i];
          accumulate(n.parents[1], std::move(db));
        }
        break;
      }
      case OpKind::kScale: {
        Tensor da = g;
        for (auto& v : da.vec()) v *= n.scalar;
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kAddBias: {
        accumulate(n.parents[0], g);
        if (needs_grad(n.parents[1])) {
          const Tensor& B = val(n.parents[1]);
          size_t cols = B.dim(0);
          size_t rows = g.numel() / cols;
          Tensor db({cols});
          for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
          accumulate(n.parents[1], std::move(db));
        }
        break;
      }
      case OpKind::kSigmoid: {
        Tensor da(n.value.shape());
        for (size_t i = 0; i < da.numel(); ++i) da[i] = g[i] * n.value[i] * (1.0 - n.value[i]);
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kTanh: {
        Tensor da(n.value.shape());
        for (size_t i = 0; i < da.numel(); ++i) da[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kExp: {
        Tensor da(n.value.shape());
        for (size_t i = 0; i < da.numel(); ++i) da[i] = g[i] * n.value[i];
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kLog: {
        const Tensor& X = val(n.parents[0]);
        Tensor da(X.shape());
        for (size_t i = 0; i < da.numel(); ++i) da[i] = g[i] / X[i];
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kSoftmaxRows: {
        const Tensor& S = n.value;
        size_t cols = S.rank() == 2 ? S.dim(1) : S.dim(0);
        size_t rows = S.numel() / cols;
        Tensor da(S.shape());
        for (size_t r = 0; r < rows; ++r) {
          const double* s = S.data() + r * cols;
          const double* gy = g.data() + r * cols;
          double dot = 0.0;
          for (size_t c = 0; c < cols; ++c) dot += gy[c] * s[c];
          for (size_t c = 0; c < cols; ++c) da[r * cols + c] = s[c] * (gy[c] - dot);
        }
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& G = val(n.parents[1]);
        size_t cols = G.dim(0);
        size_t rows = n.value.numel() / cols;
        Tensor da(val(n.parents[0]).shape());
        Tensor dg({cols});
        Tensor ds({cols});
        for (size_t r = 0; r < rows; ++r) {
          const double* gy = g.data() + r * cols;
          double inv_std = n.cached.at(r, cols);
          double mean_dyh = 0.0, mean_dyh_xhat = 0.0;
          for (size_t c = 0; c < cols; ++c) {
            double dyh = gy[c] * G[c];
            double xhat = n.cached.at(r, c);
            mean_dyh += dyh;
            mean_dyh_xhat += dyh * xhat;
            dg[c] += gy[c] * xhat;
            ds[c] += gy[c];
          }
          mean_dyh /= static_cast<double>(cols);
          mean_dyh_xhat /= static_cast<double>(cols);
          for (size_t c = 0; c < cols; ++c) {
            double dyh = gy[c] * G[c];
            double xhat = n.cached.at(r, c);
            da[r * cols + c] = inv_std * (dyh - mean_dyh - xhat * mean_dyh_xhat);
          }
        }
        accumulate(n.parents[0], std::move(da));
        accumulate(n.parents[1], std::move(dg));
        accumulate(n.parents[2], std::move(ds));
        break;
      }
      case OpKind::kConcat: {
        size_t rank = n.value.rank();
        if (rank == 1 || n.axis == 0) {
          size_t off = 0;
          for (size_t p = 0; p < n.parents.size(); ++p) {
            const Tensor& P = val(n.parents[p]);
            if (needs_grad(n.parents[p])) {
              Tensor dp(P.shape());
              std::copy(g.data() + off, g.data() + off + P.numel(), dp.data());
              accumulate(n.parents[p], std::move(dp));
            }
            off += P.numel();
          }
        } else {
          size_t rows = n.value.dim(0);
          size_t col_off = 0;
          for (size_t p = 0; p < n.parents.size(); ++p) {
            const Tensor& P = val(n.parents[p]);
            if (needs_grad(n.parents[p])) {
              Tensor dp(P.shape());
              for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < P.dim(1); ++c) dp.at(r, c) = g.at(r, col_off + c);
              accumulate(n.parents[p], std::move(dp));
            }
            col_off += P.dim(1);
          }
        }
        break;
      }
      case OpKind::kSlice: {
        const Tensor& A = val(n.parents[0]);
        Tensor da(A.shape());
        if (A.rank() == 1) {
          for (size_t i = 0; i < n.sizes[0]; ++i) da[n.offsets[0] + i] = g[i];
        } else {
          for (size_t r = 0; r < n.sizes[0]; ++r)
            for (size_t c = 0; c < n.sizes[1]; ++c)
              da.at(n.offsets[0] + r, n.offsets[1] + c) = g.at(r, c);
        }
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kReshape:
        accumulate(n.parents[0], Tensor(n.prev_shape, g.vec()));
        break;
      case OpKind::kGatherRows: {
        const Tensor& T = val(n.parents[0]);
        Tensor dt(T.shape());
        size_t d = T.dim(1);
        for (size_t i = 0; i < n.idx.size(); ++i)
          for (size_t c = 0; c < d; ++c) dt.at(n.idx[i], c) += g[i * d + c];
        accumulate(n.parents[0], std::move(dt));
        break;
      }
      case OpKind::kPick: {
        const Tensor& A = val(n.parents[0]);
        Tensor da(A.shape());
        for (size_t i = 0; i < n.idx.size(); ++i) da[n.idx[i]] += g[i];
        accumulate(n.parents[0], std::move(da));
        break;
      }
      case OpKind::kSumAll: {
        accumulate(n.parents[0], Tensor::full(val(n.parents[0]).shape(), g[0]));
        break;
      }
      case OpKind::kMeanAll: {
        const Tensor& A = val(n.parents[0]);
        accumulate(n.parents[0], Tensor::full(A.shape(), g[0] / static_cast<double>(A.numel())));
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  GradientMap out;
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    if (nodes_[id].kind == OpKind::kLeaf && nodes_[id].requires_grad) {
      out.set(id, grads[id] ? std::move(*grads[id]) : Tensor(nodes_[id].value.shape()));
    }
  }
  return out;
}

double gradient_check(const ScalarFn& f, const Tensor& point, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be positive");

  Tape tape;
  NodeId p = tape.leaf(point, true);
  NodeId out = f(tape, p);
  GradientMap grads = tape.backward(out);
  const Tensor& analytic = grads.at(p);

  auto eval = [&f](const Tensor& x) {
    Tape t;
    NodeId leaf = t.leaf(x, false);
    NodeId o = f(t, leaf);
    return t.value(o)[0];
  };

  double worst = 0.0;
  Tensor x = point;
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + epsilon;
    double fp = eval(x);
    x[i] = orig - epsilon;
    double fm = eval(x);
    x[i] = orig;
    double numeric = (fp - fm) / (2.0 * epsilon);
    double err = std::abs(analytic[i] - numeric) /
                 (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    if (std::isnan(err)) return err;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace salbench::ad
