#include "biparse/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace biparse {

namespace {

using EMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Decompose a shape as [outer, n, inner] around `axis`.
void axis_split(const Shape& shape, int axis, int& outer, int& n, int& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  n = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

void check_axis(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || static_cast<size_t>(axis) >= shape.size()) {
    throw DimError(std::string(op) + ": axis " + std::to_string(axis) +
                   " out of range for shape " + shape_str(shape));
  }
}

}  // namespace

int numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Shape shape, Init init, Rng& rng,
                               double init_scale) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  const int n = numel(p.shape);
  p.value.assign(static_cast<size_t>(n), 0.0);
  p.grad.assign(static_cast<size_t>(n), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(p.value.begin(), p.value.end(), 1.0);
      break;
    case Init::xavier: {
      if (p.shape.size() < 2) throw ConfigError("xavier init needs rank >= 2: " + name);
      const double fan_in = p.shape[0];
      const double fan_out = p.shape[p.shape.size() - 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : p.value) v = rng.uniform(-bound, bound);
      break;
    }
    case Init::normal_0_1:
      for (double& v : p.value) v = rng.normal(0.0, init_scale);
      break;
  }
  params_.push_back(std::move(p));
  Parameter& ref = params_.back();
  by_name_[ref.name] = &ref;
  return ref;
}

Parameter& ParameterStore::add_zeros(const std::string& name, Shape shape) {
  Rng dummy(0);
  return add(name, std::move(shape), Init::zeros, dummy);
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

long long ParameterStore::total_params() const {
  long long n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.grad) sq += g * g;
  return std::sqrt(sq);
}

void ParameterStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& p : params_)
    for (double& g : p.grad) g *= s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'B', 'P', 'C', 'K'};
constexpr uint8_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(b, 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw IoError("checkpoint entry name too long: " + e.name);
    const uint32_t name_len = static_cast<uint32_t>(e.name.size());
    os.put(static_cast<char>(name_len & 0xff));
    os.put(static_cast<char>((name_len >> 8) & 0xff));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    os.put(static_cast<char>(e.shape.size()));
    for (int d : e.shape) put_u32(os, static_cast<uint32_t>(d));
    if (static_cast<int>(e.data.size()) != numel(e.shape))
      throw IoError("checkpoint entry size mismatch: " + e.name);
    for (double v : e.data) put_f64(os, v);
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic): " + path);
  const int version = is.get();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const uint32_t count = get_u32(is);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const int lo = is.get();
    const int hi = is.get();
    if (lo < 0 || hi < 0) throw FormatError("truncated checkpoint: " + path);
    const int name_len = lo | (hi << 8);
    e.name.resize(static_cast<size_t>(name_len));
    is.read(e.name.data(), name_len);
    const int rank = is.get();
    if (rank < 0) throw FormatError("truncated checkpoint: " + path);
    e.shape.resize(static_cast<size_t>(rank));
    for (int r = 0; r < rank; ++r) e.shape[static_cast<size_t>(r)] = static_cast<int>(get_u32(is));
    const int n = numel(e.shape);
    e.data.resize(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) e.data[static_cast<size_t>(k)] = get_f64(is);
    if (!is) throw FormatError("truncated checkpoint: " + path);
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_params(const std::string& path, const ParameterStore& store) {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : store) entries.push_back({p.name, p.shape, p.value});
  write_checkpoint(path, entries);
}

void load_params(const std::string& path, ParameterStore& store) {
  for (const auto& e : read_checkpoint(path)) {
    Parameter* p = store.find(e.name);
    if (!p) throw FormatError("checkpoint has unknown parameter: " + e.name);
    if (p->shape != e.shape)
      throw FormatError("checkpoint shape mismatch for " + e.name + ": expected " +
                        shape_str(p->shape) + ", got " + shape_str(e.shape));
    p->value = e.data;
  }
}

// ---------------------------------------------------------------------------
// Tensor handle

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::size() const { return node_->size; }
int Tensor::dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::values() const {
  return {node_->val, static_cast<size_t>(node_->size)};
}

std::span<const double> Tensor::grad() const {
  if (!node_->grad) throw Error("tensor has no gradient (backward not run or not reachable)");
  return {node_->grad, static_cast<size_t>(node_->size)};
}

double Tensor::value_at(int flat_index) const { return node_->val[flat_index]; }

double Tensor::item() const {
  if (node_->size != 1) throw DimError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
  return node_->val[0];
}

// ---------------------------------------------------------------------------
// Graph

Graph::Node& Graph::make(Shape shape, std::vector<Node*> parents) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.shape = std::move(shape);
  n.size = numel(n.shape);
  n.val_store.assign(static_cast<size_t>(n.size), 0.0);
  n.val = n.val_store.data();
  n.parents = std::move(parents);
  for (const Node* p : n.parents)
    if (p->requires_grad) n.requires_grad = true;
  return n;
}

void Graph::ensure_grad(Node& n) {
  if (n.grad) return;
  if (n.param) {
    n.grad = n.param->grad.data();
  } else {
    n.grad_store.assign(static_cast<size_t>(n.size), 0.0);
    n.grad = n.grad_store.data();
  }
}

void Graph::check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

Tensor Graph::input(Shape shape, std::span<const double> data, bool requires_grad) {
  if (static_cast<int>(data.size()) != numel(shape))
    throw DimError("input: got " + std::to_string(data.size()) + " values for shape " +
                   shape_str(shape));
  Node& n = make(std::move(shape), {});
  std::copy(data.begin(), data.end(), n.val_store.begin());
  n.requires_grad = requires_grad;
  return Tensor(&n);
}

Tensor Graph::constant(Shape shape, double fill) {
  Node& n = make(std::move(shape), {});
  std::fill(n.val_store.begin(), n.val_store.end(), fill);
  return Tensor(&n);
}

Tensor Graph::scalar(double v) { return constant({1}, v); }

Tensor Graph::param(Parameter& p) {
  auto it = param_leaves_.find(&p);
  if (it != param_leaves_.end()) return Tensor(it->second);
  Node& n = make(p.shape, {});
  n.val_store.clear();
  n.val = p.value.data();
  n.param = &p;
  n.requires_grad = p.trainable;
  param_leaves_[&p] = &n;
  return Tensor(&n);
}

Tensor Graph::matmul(Tensor a, Tensor b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimError("matmul: rank-2 tensors required, got " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  Node& out = make({m, n}, {a.node_, b.node_});
  EMapMut(out.val_store.data(), m, n).noalias() = EMap(a.node_->val, m, k) * EMap(b.node_->val, k, n);
  if (out.requires_grad) {
    out.backward_fn = [m, k, n](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* pb = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        EMapMut(pa->grad, m, k).noalias() +=
            EMap(o.grad, m, n) * EMap(pb->val, k, n).transpose();
      }
      if (pb->requires_grad) {
        g.ensure_grad(*pb);
        EMapMut(pb->grad, k, n).noalias() +=
            EMap(pa->val, m, k).transpose() * EMap(o.grad, m, n);
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::transpose(Tensor a) {
  if (a.shape().size() != 2) throw DimError("transpose: rank-2 required, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Node& out = make({n, m}, {a.node_});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.val_store[static_cast<size_t>(j) * m + i] = a.node_->val[i * n + j];
  if (out.requires_grad) {
    out.backward_fn = [m, n](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) p->grad[i * n + j] += o.grad[static_cast<size_t>(j) * m + i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::add(Tensor a, Tensor b) {
  check_same_shape(a, b, "add");
  Node& out = make(a.shape(), {a.node_, b.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[i] + b.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      for (Node* p : o.parents) {
        if (!p->requires_grad) continue;
        g.ensure_grad(*p);
        for (int i = 0; i < o.size; ++i) p->grad[i] += o.grad[i];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::sub(Tensor a, Tensor b) {
  check_same_shape(a, b, "sub");
  Node& out = make(a.shape(), {a.node_, b.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[i] - b.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* pb = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        for (int i = 0; i < o.size; ++i) pa->grad[i] += o.grad[i];
      }
      if (pb->requires_grad) {
        g.ensure_grad(*pb);
        for (int i = 0; i < o.size; ++i) pb->grad[i] -= o.grad[i];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::mul(Tensor a, Tensor b) {
  check_same_shape(a, b, "mul");
  Node& out = make(a.shape(), {a.node_, b.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[i] * b.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* pb = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        for (int i = 0; i < o.size; ++i) pa->grad[i] += o.grad[i] * pb->val[i];
      }
      if (pb->requires_grad) {
        g.ensure_grad(*pb);
        for (int i = 0; i < o.size; ++i) pb->grad[i] += o.grad[i] * pa->val[i];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::scale(Tensor a, double c) {
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = c * a.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [c](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) p->grad[i] += c * o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::relu(Tensor a) {
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) {
    const double v = a.node_->val[i];
    out.val_store[static_cast<size_t>(i)] = v > 0.0 ? v : 0.0;
  }
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i)
        if (p->val[i] > 0.0) p->grad[i] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::log(Tensor a) {
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = std::log(a.node_->val[i]);
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) p->grad[i] += o.grad[i] / p->val[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::sigmoid(Tensor a) {
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) {
    const double v = a.node_->val[i];
    out.val_store[static_cast<size_t>(i)] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                                     : std::exp(v) / (1.0 + std::exp(v));
  }
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) {
        const double y = o.val[i];
        p->grad[i] += o.grad[i] * y * (1.0 - y);
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::tanh(Tensor a) {
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = std::tanh(a.node_->val[i]);
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) {
        const double y = o.val[i];
        p->grad[i] += o.grad[i] * (1.0 - y * y);
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::add_rowwise(Tensor a, Tensor v) {
  if (a.shape().size() != 2 || v.shape().size() != 1 || v.dim(0) != a.dim(1))
    throw DimError("add_rowwise: need [m,n] + [n], got " + shape_str(a.shape()) + " and " +
                   shape_str(v.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Node& out = make(a.shape(), {a.node_, v.node_});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.val_store[static_cast<size_t>(i) * n + j] = a.node_->val[i * n + j] + v.node_->val[j];
  if (out.requires_grad) {
    out.backward_fn = [m, n](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* pv = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        for (int i = 0; i < o.size; ++i) pa->grad[i] += o.grad[i];
      }
      if (pv->requires_grad) {
        g.ensure_grad(*pv);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pv->grad[j] += o.grad[i * n + j];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::add_colwise(Tensor a, Tensor v) {
  if (a.shape().size() != 2 || v.shape().size() != 1 || v.dim(0) != a.dim(0))
    throw DimError("add_colwise: need [m,n] + [m], got " + shape_str(a.shape()) + " and " +
                   shape_str(v.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Node& out = make(a.shape(), {a.node_, v.node_});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.val_store[static_cast<size_t>(i) * n + j] = a.node_->val[i * n + j] + v.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [m, n](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* pv = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        for (int i = 0; i < o.size; ++i) pa->grad[i] += o.grad[i];
      }
      if (pv->requires_grad) {
        g.ensure_grad(*pv);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pv->grad[i] += o.grad[i * n + j];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::add_scalar(Tensor a, Tensor s) {
  if (s.size() != 1) throw DimError("add_scalar: second operand must be a scalar");
  Node& out = make(a.shape(), {a.node_, s.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[i] + s.node_->val[0];
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* pa = o.parents[0];
      Node* ps = o.parents[1];
      if (pa->requires_grad) {
        g.ensure_grad(*pa);
        for (int i = 0; i < o.size; ++i) pa->grad[i] += o.grad[i];
      }
      if (ps->requires_grad) {
        g.ensure_grad(*ps);
        for (int i = 0; i < o.size; ++i) ps->grad[0] += o.grad[i];
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  check_axis(s0, axis, "concat");
  Shape out_shape = s0;
  int total = s0[static_cast<size_t>(axis)];
  for (size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != s0.size()) throw DimError("concat: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (d != static_cast<size_t>(axis) && s[d] != s0[d])
        throw DimError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  std::vector<Node*> parents;
  parents.reserve(parts.size());
  for (const Tensor& t : parts) parents.push_back(t.node_);
  Node& out = make(out_shape, std::move(parents));

  int outer, n_out, inner;
  axis_split(out_shape, axis, outer, n_out, inner);
  // Per-part sizes along the axis.
  std::vector<int> widths;
  for (const Tensor& t : parts) widths.push_back(t.dim(axis));

  int offset = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Node* p = parts[pi].node_;
    const int w = widths[pi];
    for (int o = 0; o < outer; ++o)
      for (int j = 0; j < w; ++j)
        for (int in = 0; in < inner; ++in)
          out.val_store[(static_cast<size_t>(o) * n_out + offset + j) * inner + in] =
              p->val[(static_cast<size_t>(o) * w + j) * inner + in];
    offset += w;
  }
  if (out.requires_grad) {
    out.backward_fn = [outer, n_out, inner, widths](Graph& g, Node& o) {
      int off = 0;
      for (size_t pi = 0; pi < o.parents.size(); ++pi) {
        Node* p = o.parents[pi];
        const int w = widths[pi];
        if (p->requires_grad) {
          g.ensure_grad(*p);
          for (int ou = 0; ou < outer; ++ou)
            for (int j = 0; j < w; ++j)
              for (int in = 0; in < inner; ++in)
                p->grad[(static_cast<size_t>(ou) * w + j) * inner + in] +=
                    o.grad[(static_cast<size_t>(ou) * n_out + off + j) * inner + in];
        }
        off += w;
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::slice(Tensor a, int axis, int begin, int end) {
  check_axis(a.shape(), axis, "slice");
  const int dim = a.dim(axis);
  if (begin < 0 || end > dim || begin >= end)
    throw DimError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                   ") for axis of size " + std::to_string(dim));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = end - begin;
  Node& out = make(out_shape, {a.node_});
  int outer, n_in, inner;
  axis_split(a.shape(), axis, outer, n_in, inner);
  const int w = end - begin;
  for (int o = 0; o < outer; ++o)
    for (int j = 0; j < w; ++j)
      for (int in = 0; in < inner; ++in)
        out.val_store[(static_cast<size_t>(o) * w + j) * inner + in] =
            a.node_->val[(static_cast<size_t>(o) * n_in + begin + j) * inner + in];
  if (out.requires_grad) {
    out.backward_fn = [outer, n_in, inner, begin, w](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int ou = 0; ou < outer; ++ou)
        for (int j = 0; j < w; ++j)
          for (int in = 0; in < inner; ++in)
            p->grad[(static_cast<size_t>(ou) * n_in + begin + j) * inner + in] +=
                o.grad[(static_cast<size_t>(ou) * w + j) * inner + in];
    };
  }
  return Tensor(&out);
}

Tensor Graph::reshape(Tensor a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Node& out = make(std::move(shape), {a.node_});
  std::copy(a.node_->val, a.node_->val + a.size(), out.val_store.begin());
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) p->grad[i] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::rows(Tensor a, std::vector<int> indices) {
  if (a.shape().size() != 2) throw DimError("rows: rank-2 required, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= m)
      throw DimError("rows: index " + std::to_string(idx) + " out of range [0," + std::to_string(m) + ")");
  const int k = static_cast<int>(indices.size());
  Node& out = make({k, n}, {a.node_});
  for (int i = 0; i < k; ++i)
    std::copy(a.node_->val + static_cast<size_t>(indices[static_cast<size_t>(i)]) * n,
              a.node_->val + static_cast<size_t>(indices[static_cast<size_t>(i)]) * n + n,
              out.val_store.begin() + static_cast<size_t>(i) * n);
  if (out.requires_grad) {
    out.backward_fn = [n, idx = std::move(indices)](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < n; ++j)
          p->grad[static_cast<size_t>(idx[i]) * n + j] += o.grad[i * static_cast<size_t>(n) + static_cast<size_t>(j)];
    };
  }
  return Tensor(&out);
}

Tensor Graph::gather(Tensor a, std::vector<int> flat_indices) {
  for (int idx : flat_indices)
    if (idx < 0 || idx >= a.size())
      throw DimError("gather: flat index " + std::to_string(idx) + " out of range [0," +
                     std::to_string(a.size()) + ")");
  const int k = static_cast<int>(flat_indices.size());
  Node& out = make({k}, {a.node_});
  for (int i = 0; i < k; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[flat_indices[static_cast<size_t>(i)]];
  if (out.requires_grad) {
    out.backward_fn = [idx = std::move(flat_indices)](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (size_t i = 0; i < idx.size(); ++i) p->grad[idx[i]] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::pick_per_row(Tensor a, std::vector<int> cols) {
  if (a.shape().size() != 2) throw DimError("pick_per_row: rank-2 required");
  const int m = a.dim(0), n = a.dim(1);
  if (static_cast<int>(cols.size()) != m)
    throw DimError("pick_per_row: need one column index per row");
  for (int c : cols)
    if (c < 0 || c >= n) throw DimError("pick_per_row: column " + std::to_string(c) + " out of range");
  Node& out = make({m}, {a.node_});
  for (int i = 0; i < m; ++i)
    out.val_store[static_cast<size_t>(i)] = a.node_->val[static_cast<size_t>(i) * n + cols[static_cast<size_t>(i)]];
  if (out.requires_grad) {
    out.backward_fn = [n, cs = std::move(cols)](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (size_t i = 0; i < cs.size(); ++i) p->grad[i * static_cast<size_t>(n) + static_cast<size_t>(cs[i])] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::mask_fill(Tensor a, const std::vector<uint8_t>& mask, double fill) {
  if (static_cast<int>(mask.size()) != a.size())
    throw DimError("mask_fill: mask size " + std::to_string(mask.size()) + " != tensor size " +
                   std::to_string(a.size()));
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i)
    out.val_store[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? fill : a.node_->val[i];
  if (out.requires_grad) {
    out.backward_fn = [m = mask](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i)
        if (!m[static_cast<size_t>(i)]) p->grad[i] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::sum(Tensor a) {
  Node& out = make({1}, {a.node_});
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.node_->val[i];
  out.val_store[0] = s;
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < p->size; ++i) p->grad[i] += o.grad[0];
    };
  }
  return Tensor(&out);
}

Tensor Graph::mean(Tensor a) {
  Node& out = make({1}, {a.node_});
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.node_->val[i];
  out.val_store[0] = s / a.size();
  if (out.requires_grad) {
    out.backward_fn = [](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      const double inv = 1.0 / p->size;
      for (int i = 0; i < p->size; ++i) p->grad[i] += o.grad[0] * inv;
    };
  }
  return Tensor(&out);
}

Tensor Graph::sum_axis1(Tensor a) {
  if (a.shape().size() != 2) throw DimError("sum_axis1: rank-2 required");
  const int m = a.dim(0), n = a.dim(1);
  Node& out = make({m}, {a.node_});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a.node_->val[i * n + j];
    out.val_store[static_cast<size_t>(i)] = s;
  }
  if (out.requires_grad) {
    out.backward_fn = [m, n](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) p->grad[i * n + j] += o.grad[i];
    };
  }
  return Tensor(&out);
}

Tensor Graph::max_axis0(Tensor a) {
  if (a.shape().size() != 2) throw DimError("max_axis0: rank-2 required");
  const int m = a.dim(0), n = a.dim(1);
  Node& out = make({n}, {a.node_});
  std::vector<int> argmax(static_cast<size_t>(n), 0);
  for (int j = 0; j < n; ++j) {
    double best = a.node_->val[j];
    int best_i = 0;
    for (int i = 1; i < m; ++i) {
      const double v = a.node_->val[i * n + j];
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    out.val_store[static_cast<size_t>(j)] = best;
    argmax[static_cast<size_t>(j)] = best_i;
  }
  if (out.requires_grad) {
    out.backward_fn = [n, am = std::move(argmax)](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int j = 0; j < n; ++j) p->grad[am[static_cast<size_t>(j)] * n + j] += o.grad[j];
    };
  }
  return Tensor(&out);
}

Tensor Graph::softmax(Tensor a, int axis) {
  check_axis(a.shape(), axis, "softmax");
  int outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  Node& out = make(a.shape(), {a.node_});
  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * n * inner + static_cast<size_t>(in);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) mx = std::max(mx, a.node_->val[base + static_cast<size_t>(j) * inner]);
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        const double e = std::exp(a.node_->val[base + static_cast<size_t>(j) * inner] - mx);
        out.val_store[base + static_cast<size_t>(j) * inner] = e;
        z += e;
      }
      for (int j = 0; j < n; ++j) out.val_store[base + static_cast<size_t>(j) * inner] /= z;
    }
  }
  if (out.requires_grad) {
    out.backward_fn = [outer, n, inner](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int ou = 0; ou < outer; ++ou) {
        for (int in = 0; in < inner; ++in) {
          const size_t base = static_cast<size_t>(ou) * n * inner + static_cast<size_t>(in);
          double dot = 0.0;
          for (int j = 0; j < n; ++j)
            dot += o.grad[base + static_cast<size_t>(j) * inner] * o.val[base + static_cast<size_t>(j) * inner];
          for (int j = 0; j < n; ++j) {
            const size_t k = base + static_cast<size_t>(j) * inner;
            p->grad[k] += o.val[k] * (o.grad[k] - dot);
          }
        }
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::log_softmax(Tensor a, int axis) {
  check_axis(a.shape(), axis, "log_softmax");
  int outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  Node& out = make(a.shape(), {a.node_});
  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * n * inner + static_cast<size_t>(in);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) mx = std::max(mx, a.node_->val[base + static_cast<size_t>(j) * inner]);
      double z = 0.0;
      for (int j = 0; j < n; ++j) z += std::exp(a.node_->val[base + static_cast<size_t>(j) * inner] - mx);
      const double lse = mx + std::log(z);
      for (int j = 0; j < n; ++j)
        out.val_store[base + static_cast<size_t>(j) * inner] = a.node_->val[base + static_cast<size_t>(j) * inner] - lse;
    }
  }
  if (out.requires_grad) {
    out.backward_fn = [outer, n, inner](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int ou = 0; ou < outer; ++ou) {
        for (int in = 0; in < inner; ++in) {
          const size_t base = static_cast<size_t>(ou) * n * inner + static_cast<size_t>(in);
          double gsum = 0.0;
          for (int j = 0; j < n; ++j) gsum += o.grad[base + static_cast<size_t>(j) * inner];
          for (int j = 0; j < n; ++j) {
            const size_t k = base + static_cast<size_t>(j) * inner;
            p->grad[k] += o.grad[k] - std::exp(o.val[k]) * gsum;
          }
        }
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimError("layer_norm: rank >= 1 required");
  const int d = xs.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  const int rows = x.size() / d;
  Node& out = make(xs, {x.node_, gain.node_, bias.node_});
  // Cache normalized values for backward.
  std::vector<double> xhat(static_cast<size_t>(x.size()));
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* xv = x.node_->val + static_cast<size_t>(r) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xv[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xv[j] - mu) * (xv[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      const double xh = (xv[j] - mu) * is;
      xhat[static_cast<size_t>(r) * d + j] = xh;
      out.val_store[static_cast<size_t>(r) * d + j] = xh * gain.node_->val[j] + bias.node_->val[j];
    }
  }
  if (out.requires_grad) {
    out.backward_fn = [rows, d, xh = std::move(xhat), isg = std::move(inv_sigma)](Graph& g, Node& o) {
      Node* px = o.parents[0];
      Node* pg = o.parents[1];
      Node* pb = o.parents[2];
      for (int r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r) * d;
        if (pg->requires_grad) {
          g.ensure_grad(*pg);
          for (int j = 0; j < d; ++j) pg->grad[j] += o.grad[base + static_cast<size_t>(j)] * xh[base + static_cast<size_t>(j)];
        }
        if (pb->requires_grad) {
          g.ensure_grad(*pb);
          for (int j = 0; j < d; ++j) pb->grad[j] += o.grad[base + static_cast<size_t>(j)];
        }
        if (px->requires_grad) {
          g.ensure_grad(*px);
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < d; ++j) {
            const double gh = o.grad[base + static_cast<size_t>(j)] * pg->val[j];
            m1 += gh;
            m2 += gh * xh[base + static_cast<size_t>(j)];
          }
          m1 /= d;
          m2 /= d;
          for (int j = 0; j < d; ++j) {
            const double gh = o.grad[base + static_cast<size_t>(j)] * pg->val[j];
            px->grad[base + static_cast<size_t>(j)] +=
                isg[static_cast<size_t>(r)] * (gh - m1 - xh[base + static_cast<size_t>(j)] * m2);
          }
        }
      }
    };
  }
  return Tensor(&out);
}

Tensor Graph::dropout(Tensor a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(static_cast<size_t>(a.size()));
  for (double& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Node& out = make(a.shape(), {a.node_});
  for (int i = 0; i < out.size; ++i) out.val_store[static_cast<size_t>(i)] = a.node_->val[i] * mask[static_cast<size_t>(i)];
  if (out.requires_grad) {
    out.backward_fn = [m = std::move(mask)](Graph& g, Node& o) {
      Node* p = o.parents[0];
      g.ensure_grad(*p);
      for (int i = 0; i < o.size; ++i) p->grad[i] += o.grad[i] * m[static_cast<size_t>(i)];
    };
  }
  return Tensor(&out);
}

Tensor Graph::conv1d(Tensor x, Tensor kernel, Tensor bias, int width) {
  if (x.shape().size() != 2 || kernel.shape().size() != 2 || bias.shape().size() != 1)
    throw DimError("conv1d: need x[t,d_in], kernel[w*d_in,d_out], bias[d_out]");
  const int t = x.dim(0), d_in = x.dim(1);
  const int d_out = kernel.dim(1);
  if (kernel.dim(0) != width * d_in)
    throw DimError("conv1d: kernel rows " + std::to_string(kernel.dim(0)) + " != width*d_in " +
                   std::to_string(width * d_in));
  if (bias.dim(0) != d_out) throw DimError("conv1d: bias size mismatch");
  Node& out = make({t, d_out}, {x.node_, kernel.node_, bias.node_});
  for (int p = 0; p < t; ++p) {
    for (int o = 0; o < d_out; ++o) {
      double s = bias.node_->val[o];
      for (int u = 0; u < width; ++u) {
        if (p + u >= t) break;  // zero padding past the end
        for (int c = 0; c < d_in; ++c)
          s += x.node_->val[(p + u) * d_in + c] * kernel.node_->val[(u * d_in + c) * d_out + o];
      }
      out.val_store[static_cast<size_t>(p) * d_out + o] = s;
    }
  }
  if (out.requires_grad) {
    out.backward_fn = [t, d_in, d_out, width](Graph& g, Node& o) {
      Node* px = o.parents[0];
      Node* pk = o.parents[1];
      Node* pb = o.parents[2];
      if (pb->requires_grad) {
        g.ensure_grad(*pb);
        for (int p = 0; p < t; ++p)
          for (int j = 0; j < d_out; ++j) pb->grad[j] += o.grad[p * d_out + j];
      }
      if (pk->requires_grad) {
        g.ensure_grad(*pk);
        for (int p = 0; p < t; ++p)
          for (int u = 0; u < width && p + u < t; ++u)
            for (int c = 0; c < d_in; ++c)
              for (int j = 0; j < d_out; ++j)
                pk->grad[(u * d_in + c) * d_out + j] += px->val[(p + u) * d_in + c] * o.grad[p * d_out + j];
      }
      if (px->requires_grad) {
        g.ensure_grad(*px);
        for (int p = 0; p < t; ++p)
          for (int u = 0; u < width && p + u < t; ++u)
            for (int c = 0; c < d_in; ++c)
              for (int j = 0; j < d_out; ++j)
                px->grad[(p + u) * d_in + c] += pk->val[(u * d_in + c) * d_out + j] * o.grad[p * d_out + j];
      }
    };
  }
  return Tensor(&out);
}

void Graph::backward(Tensor loss) {
  if (!loss.defined()) throw Error("backward: undefined loss tensor");
  Node* root = loss.node_;
  if (root->size != 1)
    throw DimError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad)
    throw Error("backward: loss does not depend on any requires_grad tensor");

  static thread_local uint32_t visit_counter = 0;
  const uint32_t mark = ++visit_counter;

  // Mark reachable subgraph.
  std::vector<Node*> stack{root};
  root->last_visit = mark;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    for (Node* p : n->parents) {
      if (p->last_visit != mark && p->requires_grad) {
        p->last_visit = mark;
        stack.push_back(p);
      }
    }
  }

  // Reset scratch gradients of reachable interior nodes. Leaf gradients
  // (parameters and requires_grad inputs) accumulate across calls.
  for (Node& n : nodes_) {
    if (n.last_visit != mark) continue;
    if (n.param) {
      n.grad = n.param->grad.data();
    } else if (n.parents.empty()) {
      if (!n.grad) {
        n.grad_store.assign(static_cast<size_t>(n.size), 0.0);
        n.grad = n.grad_store.data();
      }
    } else {
      n.grad_store.assign(static_cast<size_t>(n.size), 0.0);
      n.grad = n.grad_store.data();
    }
  }

  root->grad[0] += 1.0;

  // Creation order is topological; reverse sweep visits each node once.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.last_visit != mark || !n.backward_fn) continue;
    n.backward_fn(*this, n);
  }
}

}  // namespace biparse
