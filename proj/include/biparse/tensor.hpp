#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "biparse/error.hpp"
#include "biparse/rng.hpp"

namespace biparse {

using Shape = std::vector<int>;

int numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// A named trainable array. Values persist across computation graphs;
// gradients accumulate until zero_grad.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  int size() const { return static_cast<int>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

enum class Init { zeros, ones, xavier, normal_0_1 };

// Registration-ordered parameter collection. Order is stable, names unique;
// checkpoints are written in registration order so save/load/save is
// byte-identical.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape, Init init, Rng& rng,
                 double init_scale = 0.1);
  Parameter& add_zeros(const std::string& name, Shape shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  long long total_params() const;
  void zero_grads();
  double grad_norm() const;
  void clip_grad_norm(double max_norm);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t count() const { return params_.size(); }

 private:
  std::deque<Parameter> params_;  // deque: stable addresses
  std::unordered_map<std::string, Parameter*> by_name_;
};

// Checkpoint file: "BPCK" magic, one version byte, then (name, shape,
// little-endian float64 data) records. Round-trips bit-exactly.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);
void save_params(const std::string& path, const ParameterStore& store);
void load_params(const std::string& path, ParameterStore& store);

class Graph;

// Handle to a node in a Graph. Cheap to copy; values are immutable after
// construction, gradients are filled in by Graph::backward.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  int size() const;
  int dim(int axis) const;
  bool requires_grad() const;

  std::span<const double> values() const;
  std::span<const double> grad() const;
  double value_at(int flat_index) const;
  double item() const;  // scalar tensors only

  bool defined() const { return node_ != nullptr; }

 private:
  friend class Graph;
  struct Node;
  explicit Tensor(Node* n) : node_(n) {}
  Node* node_ = nullptr;
};

// Dynamic computation graph (tape). Nodes are recorded in creation order,
// which is a topological order; backward walks the tape in reverse and
// visits each reachable node exactly once. One graph per thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Tensor input(Shape shape, std::span<const double> data, bool requires_grad = false);
  Tensor constant(Shape shape, double fill);
  Tensor scalar(double v);
  Tensor param(Parameter& p);  // shares storage; grads accumulate into p.grad

  // Linear algebra.
  Tensor matmul(Tensor a, Tensor b);
  Tensor transpose(Tensor a);

  // Elementwise.
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor scale(Tensor a, double c);
  Tensor relu(Tensor a);
  Tensor log(Tensor a);
  Tensor sigmoid(Tensor a);
  Tensor tanh(Tensor a);

  // Broadcast adds.
  Tensor add_rowwise(Tensor a, Tensor v);  // [m,n] + [n]
  Tensor add_colwise(Tensor a, Tensor v);  // [m,n] + [m]
  Tensor add_scalar(Tensor a, Tensor s);   // [..] + [1]

  // Structure.
  Tensor concat(const std::vector<Tensor>& parts, int axis);
  Tensor slice(Tensor a, int axis, int begin, int end);
  Tensor reshape(Tensor a, Shape shape);
  Tensor rows(Tensor a, std::vector<int> indices);        // [m,n] -> [k,n]; embedding lookup
  Tensor gather(Tensor a, std::vector<int> flat_indices); // flat view gather -> [k]
  Tensor pick_per_row(Tensor a, std::vector<int> cols);   // [m,n] -> [m], a[i, cols[i]]
  Tensor mask_fill(Tensor a, const std::vector<uint8_t>& mask, double fill);

  // Reductions.
  Tensor sum(Tensor a);
  Tensor mean(Tensor a);
  Tensor sum_axis1(Tensor a);  // [m,n] -> [m]
  Tensor max_axis0(Tensor a);  // [m,n] -> [n]

  // Neural primitives.
  Tensor softmax(Tensor a, int axis);
  Tensor log_softmax(Tensor a, int axis);
  Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps = 1e-6);
  Tensor dropout(Tensor a, double rate, Rng& rng);  // inverted dropout, train-time
  // x: [t, d_in], kernel: [width*d_in, d_out], bias: [d_out]. Positions past
  // the end are zero-padded, so output is [t, d_out] for any t >= 1.
  Tensor conv1d(Tensor x, Tensor kernel, Tensor bias, int width);

  // Reverse-mode sweep from a scalar loss. Repeated calls accumulate into
  // leaf gradients.
  void backward(Tensor loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  friend class Tensor;
  using Node = Tensor::Node;
  Node& make(Shape shape, std::vector<Node*> parents);
  void ensure_grad(Node& n);
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, Node*> param_leaves_;
};

struct Tensor::Node {
  Shape shape;
  int size = 0;
  std::vector<double> val_store;
  const double* val = nullptr;  // val_store or Parameter::value
  std::vector<double> grad_store;
  double* grad = nullptr;  // grad_store or Parameter::grad
  Parameter* param = nullptr;
  bool requires_grad = false;
  std::vector<Node*> parents;
  std::function<void(Graph&, Node&)> backward_fn;
  uint32_t last_visit = 0;  // reachability mark for backward sweeps
};

}  // namespace biparse
