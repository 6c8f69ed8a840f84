#pragma once

// Reverse-mode automatic differentiation over dense double vectors, plus the
// parameter registry, optimizers and checkpoint I/O built on top of it.
//
// A Graph is a tape: every operation appends a node and backward() walks the
// tape in reverse. Parameters live in a ParamStore and enter a graph through
// Graph::param(); their gradients are accumulated into Tensor::grad.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tdtd/rng.hpp"

namespace tdtd::ad {

// Dense row-major array. `grad` is empty until a gradient is accumulated.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  std::size_t size() const noexcept { return values.size(); }
  // Matrix view: a 1-D tensor is a single row.
  std::size_t rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const noexcept { return shape.empty() ? 1 : shape.back(); }
  bool has_grad() const noexcept { return !grad.empty(); }
  void zero_grad() { grad.assign(values.size(), 0.0); }
};

std::size_t shape_size(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

// Named parameters. Iteration order is lexicographic by name, which keeps
// initialization, optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  // Registers a zero-filled tensor. Throws ContractError on duplicate names.
  Tensor& add(const std::string& name, std::vector<std::size_t> shape);
  Tensor& add(const std::string& name, Tensor tensor);

  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  Tensor* find(std::string_view name);
  const Tensor* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; fan_in is the row count of
  // a matrix and the length of a vector.
  void init_uniform(Rng& rng);
  void zero_grads();
  void fill(double value);
  double grad_norm() const;

 private:
  Map entries_;
};

// Handle to a node in a Graph. Only meaningful for the graph that made it.
class Var {
 public:
  Var() = default;
  bool valid() const noexcept { return id_ != kNone; }
  std::uint32_t index() const noexcept { return id_; }

 private:
  friend class Graph;
  static constexpr std::uint32_t kNone = 0xffffffffu;
  explicit Var(std::uint32_t id) : id_(id) {}
  std::uint32_t id_ = kNone;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Leaves.
  Var constant(std::vector<double> values);
  Var scalar(double value) { return constant({value}); }
  Var zeros(std::size_t n) { return constant(std::vector<double>(n, 0.0)); }
  // Enters a parameter; repeated calls with the same tensor return one node.
  Var param(Tensor& tensor);

  // x·W + b with x of length W.rows() and b of length W.cols(). `b` may be
  // an invalid Var for no bias.
  Var affine(Var x, Var w, Var b = Var{});
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  // Scalar node `s` times vector `v`.
  Var scale_by(Var s, Var v);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice(Var a, std::size_t offset, std::size_t length);
  // Equal-length vectors as the rows of a matrix.
  Var stack_rows(std::span<const Var> rows);
  Var transpose(Var a);
  // Row `row` of a matrix parameter.
  Var lookup(Var table, std::size_t row);
  Var log_softmax(Var a);
  // Element i as a scalar (the negative-log-likelihood pick, un-negated).
  Var pick(Var a, std::size_t i);
  Var gather(Var a, std::vector<std::size_t> indices);
  Var sum(Var a);
  Var dot(Var a, Var b);

  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;
  std::size_t size(Var v) const;
  // Gradient w.r.t. a node after backward(); empty if the node was unreached.
  std::span<const double> grad(Var v) const;

  // Propagates from a scalar node and accumulates into parameter tensors.
  void backward(Var loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kConstant, kParam, kAffine, kAdd, kSub, kMul, kScale, kScaleBy, kSigmoid,
    kTanh, kExp, kConcat, kSlice, kLookup, kLogSoftmax, kPick, kGather, kSum,
    kDot, kTranspose,
  };
  static constexpr std::uint32_t kNone = 0xffffffffu;

  struct Node {
    Op op = Op::kConstant;
    bool needs_grad = false;
    std::size_t rows = 1;
    std::size_t cols = 0;
    std::vector<double> value;
    Tensor* tensor = nullptr;
    std::array<std::uint32_t, 3> in{kNone, kNone, kNone};
    std::vector<std::uint32_t> parts;
    std::vector<std::size_t> indices;
    std::size_t aux = 0;
    double factor = 0.0;

    std::size_t size() const noexcept { return rows * cols; }
  };

  const double* data(const Node& n) const {
    return n.tensor != nullptr ? n.tensor->values.data() : n.value.data();
  }
  const Node& node(Var v, const char* op) const;
  Var push(Node n);
  void backprop(std::uint32_t id);
  std::vector<double>& grad_buffer(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::uint32_t> param_nodes_;
};

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // Applies one update using the accumulated grads, then zeroes them.
  // Returns the gradient norm before clipping. Throws ContractError when a
  // parameter has no gradient buffer.
  double step(ParamStore& store);
  std::size_t steps() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments, std::less<>> moments_;
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates per tensor; tensors at most this large are checked fully.
  std::size_t max_coords_per_tensor = 24;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares backward() against central differences on `store`. `loss_fn` must
// build a deterministic scalar loss in the graph it is given. Relative error
// is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult gradient_check(const std::function<Var(Graph&)>& loss_fn,
                               ParamStore& store,
                               const GradCheckOptions& options = {});

// Checkpoint text format: `TDTD-CKPT v1`, then for each tensor a line
// `name ndim d1 ... dn` followed by its values (17 significant digits).
inline constexpr std::string_view kCheckpointMagic = "TDTD-CKPT v1";

void save_params(const ParamStore& store, std::ostream& out);
void save_params(const ParamStore& store, const std::filesystem::path& path);
// Reads until end of stream. Errors carry the 1-based line number, offset by
// `line_offset` when the checkpoint is embedded in a larger file.
ParamStore load_params(std::istream& in, std::size_t line_offset = 0);
ParamStore load_params(const std::filesystem::path& path);
// Copies values of every tensor in `target` from `source`; a missing tensor or
// a shape mismatch is an error naming the tensor.
void assign_params(ParamStore& target, const ParamStore& source);

std::string format_double(double value);

}  // namespace tdtd::ad
