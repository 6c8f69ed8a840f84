#include "tdtd/autodiff.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "tdtd/error.hpp"

namespace tdtd::ad {

std::size_t shape_size(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : shape(std::move(dims)), values(std::move(data)) {
  if (values.size() != shape_size(shape)) {
    throw DimensionError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_string(shape));
  }
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  return add(name, Tensor(std::move(shape)));
}

Tensor& ParamStore::add(const std::string& name, Tensor tensor) {
  if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) {
    throw ContractError("parameter name '" + name + "' is empty or has whitespace");
  }
  auto [it, inserted] = entries_.try_emplace(name, std::move(tensor));
  if (!inserted) throw ContractError("parameter '" + name + "' registered twice");
  return it->second;
}

Tensor& ParamStore::at(std::string_view name) {
  Tensor* t = find(name);
  if (t == nullptr) throw ContractError("no parameter named '" + std::string(name) + "'");
  return *t;
}

const Tensor& ParamStore::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw ContractError("no parameter named '" + std::string(name) + "'");
  return *t;
}

Tensor* ParamStore::find(std::string_view name) {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

const Tensor* ParamStore::find(std::string_view name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParamStore::init_uniform(Rng& rng) {
  for (auto& [name, t] : entries_) {
    const double fan_in = static_cast<double>(t.shape.size() == 2 ? t.shape[0] : t.size());
    const double bound = 1.0 / std::sqrt(std::max(fan_in, 1.0));
    for (double& v : t.values) v = rng.uniform(-bound, bound);
  }
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParamStore::fill(double value) {
  for (auto& [name, t] : entries_) std::fill(t.values.begin(), t.values.end(), value);
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, t] : entries_) {
    for (double g : t.grad) sq += g * g;
  }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Graph: forward

const Graph::Node& Graph::node(Var v, const char* op) const {
  if (!v.valid() || v.index() >= nodes_.size()) {
    throw ContractError(std::string(op) + ": invalid variable");
  }
  return nodes_[v.index()];
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(std::vector<double> values) {
  Node n;
  n.op = Op::kConstant;
  n.cols = values.size();
  n.value = std::move(values);
  return push(std::move(n));
}

Var Graph::param(Tensor& tensor) {
  auto it = param_nodes_.find(&tensor);
  if (it != param_nodes_.end()) return Var(it->second);
  if (tensor.values.size() != shape_size(tensor.shape) || tensor.shape.size() > 2) {
    throw DimensionError("param: tensor shape " + shape_string(tensor.shape) +
                         " is not a vector or matrix of its value count");
  }
  Node n;
  n.op = Op::kParam;
  n.needs_grad = true;
  n.rows = tensor.rows();
  n.cols = tensor.cols();
  n.tensor = &tensor;
  Var v = push(std::move(n));
  param_nodes_.emplace(&tensor, v.index());
  return v;
}

Var Graph::affine(Var x, Var w, Var b) {
  const Node& nx = node(x, "affine");
  const Node& nw = node(w, "affine");
  if (nx.size() != nw.rows) {
    throw DimensionError("affine: input has " + std::to_string(nx.size()) +
                         " elements but weight has " + std::to_string(nw.rows) + " rows");
  }
  const std::size_t in = nw.rows;
  const std::size_t out = nw.cols;
  std::vector<double> y(out, 0.0);
  bool grad = nx.needs_grad || nw.needs_grad;
  if (b.valid()) {
    const Node& nb = node(b, "affine");
    if (nb.size() != out) {
      throw DimensionError("affine: bias has " + std::to_string(nb.size()) +
                           " elements but weight has " + std::to_string(out) + " columns");
    }
    const double* bv = data(nb);
    std::copy(bv, bv + out, y.begin());
    grad = grad || nb.needs_grad;
  }
  const double* xv = data(nx);
  const double* wv = data(nw);
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = xv[i];
    if (xi == 0.0) continue;
    const double* row = wv + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
  }
  Node n;
  n.op = Op::kAffine;
  n.needs_grad = grad;
  n.cols = out;
  n.value = std::move(y);
  n.in = {x.index(), w.index(), b.valid() ? b.index() : kNone};
  return push(std::move(n));
}

namespace {

void require_same(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": operand sizes " + std::to_string(a) +
                         " and " + std::to_string(b) + " differ");
  }
}

}  // namespace

Var Graph::add(Var a, Var b) {
  const Node& na = node(a, "add");
  const Node& nb = node(b, "add");
  require_same(na.size(), nb.size(), "add");
  std::vector<double> y(na.size());
  const double* av = data(na);
  const double* bv = data(nb);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  Node n;
  n.op = Op::kAdd;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), b.index(), kNone};
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  const Node& na = node(a, "sub");
  const Node& nb = node(b, "sub");
  require_same(na.size(), nb.size(), "sub");
  std::vector<double> y(na.size());
  const double* av = data(na);
  const double* bv = data(nb);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  Node n;
  n.op = Op::kSub;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), b.index(), kNone};
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const Node& na = node(a, "mul");
  const Node& nb = node(b, "mul");
  require_same(na.size(), nb.size(), "mul");
  std::vector<double> y(na.size());
  const double* av = data(na);
  const double* bv = data(nb);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  Node n;
  n.op = Op::kMul;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), b.index(), kNone};
  return push(std::move(n));
}

Var Graph::scale(Var a, double factor) {
  const Node& na = node(a, "scale");
  std::vector<double> y(na.size());
  const double* av = data(na);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  Node n;
  n.op = Op::kScale;
  n.needs_grad = na.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.factor = factor;
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::scale_by(Var s, Var v) {
  const Node& ns = node(s, "scale_by");
  const Node& nv = node(v, "scale_by");
  if (ns.size() != 1) {
    throw DimensionError("scale_by: scale operand has " + std::to_string(ns.size()) +
                         " elements, expected 1");
  }
  const double k = data(ns)[0];
  std::vector<double> y(nv.size());
  const double* vv = data(nv);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = k * vv[i];
  Node n;
  n.op = Op::kScaleBy;
  n.needs_grad = ns.needs_grad || nv.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {s.index(), v.index(), kNone};
  return push(std::move(n));
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Graph::sigmoid(Var a) {
  const Node& na = node(a, "sigmoid");
  std::vector<double> y(na.size());
  const double* av = data(na);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(av[i]);
  Node n;
  n.op = Op::kSigmoid;
  n.needs_grad = na.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::tanh(Var a) {
  const Node& na = node(a, "tanh");
  std::vector<double> y(na.size());
  const double* av = data(na);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(av[i]);
  Node n;
  n.op = Op::kTanh;
  n.needs_grad = na.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::exp(Var a) {
  const Node& na = node(a, "exp");
  std::vector<double> y(na.size());
  const double* av = data(na);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(av[i]);
  Node n;
  n.op = Op::kExp;
  n.needs_grad = na.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::concat(std::span<const Var> parts) {
  Node n;
  n.op = Op::kConcat;
  std::size_t total = 0;
  for (Var p : parts) total += node(p, "concat").size();
  n.value.reserve(total);
  for (Var p : parts) {
    const Node& np = nodes_[p.index()];
    const double* pv = data(np);
    n.value.insert(n.value.end(), pv, pv + np.size());
    n.needs_grad = n.needs_grad || np.needs_grad;
    n.parts.push_back(p.index());
  }
  n.cols = total;
  return push(std::move(n));
}

Var Graph::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t width = node(rows.front(), "stack_rows").size();
  for (Var r : rows) require_same(node(r, "stack_rows").size(), width, "stack_rows");
  const Var joined = concat(rows);
  Node& n = nodes_[joined.index()];
  n.rows = rows.size();
  n.cols = width;
  return joined;
}

Var Graph::transpose(Var a) {
  const Node& na = node(a, "transpose");
  const double* av = data(na);
  Node n;
  n.op = Op::kTranspose;
  n.needs_grad = na.needs_grad;
  n.rows = na.cols;
  n.cols = na.rows;
  n.value.resize(na.size());
  for (std::size_t i = 0; i < na.rows; ++i) {
    for (std::size_t j = 0; j < na.cols; ++j) n.value[j * na.rows + i] = av[i * na.cols + j];
  }
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::slice(Var a, std::size_t offset, std::size_t length) {
  const Node& na = node(a, "slice");
  if (offset + length > na.size()) {
    throw DimensionError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") exceeds size " +
                         std::to_string(na.size()));
  }
  const double* av = data(na);
  Node n;
  n.op = Op::kSlice;
  n.needs_grad = na.needs_grad;
  n.cols = length;
  n.value.assign(av + offset, av + offset + length);
  n.aux = offset;
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::lookup(Var table, std::size_t row) {
  const Node& nt = node(table, "lookup");
  if (row >= nt.rows) {
    throw DimensionError("lookup: row " + std::to_string(row) + " out of range for table with " +
                         std::to_string(nt.rows) + " rows");
  }
  const double* tv = data(nt) + row * nt.cols;
  Node n;
  n.op = Op::kLookup;
  n.needs_grad = nt.needs_grad;
  n.cols = nt.cols;
  n.value.assign(tv, tv + nt.cols);
  n.aux = row;
  n.in = {table.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::log_softmax(Var a) {
  const Node& na = node(a, "log_softmax");
  if (na.size() == 0) throw DimensionError("log_softmax: empty input");
  const double* av = data(na);
  const double mx = *std::max_element(av, av + na.size());
  double z = 0.0;
  for (std::size_t i = 0; i < na.size(); ++i) z += std::exp(av[i] - mx);
  const double lz = mx + std::log(z);
  std::vector<double> y(na.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - lz;
  Node n;
  n.op = Op::kLogSoftmax;
  n.needs_grad = na.needs_grad;
  n.cols = y.size();
  n.value = std::move(y);
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::pick(Var a, std::size_t i) {
  const Node& na = node(a, "pick");
  if (i >= na.size()) {
    throw DimensionError("pick: index " + std::to_string(i) + " out of range for size " +
                         std::to_string(na.size()));
  }
  Node n;
  n.op = Op::kPick;
  n.needs_grad = na.needs_grad;
  n.cols = 1;
  n.value = {data(na)[i]};
  n.aux = i;
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::gather(Var a, std::vector<std::size_t> indices) {
  const Node& na = node(a, "gather");
  const double* av = data(na);
  Node n;
  n.op = Op::kGather;
  n.needs_grad = na.needs_grad;
  n.value.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= na.size()) {
      throw DimensionError("gather: index " + std::to_string(i) + " out of range for size " +
                           std::to_string(na.size()));
    }
    n.value.push_back(av[i]);
  }
  n.cols = indices.size();
  n.indices = std::move(indices);
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  const Node& na = node(a, "sum");
  const double* av = data(na);
  double s = 0.0;
  for (std::size_t i = 0; i < na.size(); ++i) s += av[i];
  Node n;
  n.op = Op::kSum;
  n.needs_grad = na.needs_grad;
  n.cols = 1;
  n.value = {s};
  n.in = {a.index(), kNone, kNone};
  return push(std::move(n));
}

Var Graph::dot(Var a, Var b) {
  const Node& na = node(a, "dot");
  const Node& nb = node(b, "dot");
  require_same(na.size(), nb.size(), "dot");
  const double* av = data(na);
  const double* bv = data(nb);
  double s = 0.0;
  for (std::size_t i = 0; i < na.size(); ++i) s += av[i] * bv[i];
  Node n;
  n.op = Op::kDot;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.cols = 1;
  n.value = {s};
  n.in = {a.index(), b.index(), kNone};
  return push(std::move(n));
}

std::span<const double> Graph::value(Var v) const {
  const Node& n = node(v, "value");
  return {data(n), n.size()};
}

double Graph::scalar_value(Var v) const {
  const Node& n = node(v, "scalar_value");
  if (n.size() != 1) {
    throw DimensionError("scalar_value: node has " + std::to_string(n.size()) + " elements");
  }
  return data(n)[0];
}

std::size_t Graph::size(Var v) const { return node(v, "size").size(); }

std::span<const double> Graph::grad(Var v) const {
  node(v, "grad");
  if (v.index() >= grads_.size()) return {};
  return grads_[v.index()];
}

// ---------------------------------------------------------------------------
// Graph: backward

std::vector<double>& Graph::grad_buffer(std::uint32_t id) {
  std::vector<double>& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].size(), 0.0);
  return g;
}

void Graph::backward(Var loss) {
  const Node& nl = node(loss, "backward");
  if (nl.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + std::to_string(nl.size()) +
                        " elements");
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.index()] = {1.0};
  for (std::uint32_t id = loss.index() + 1; id-- > 0;) {
    if (!nodes_[id].needs_grad || grads_[id].empty()) continue;
    backprop(id);
  }
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kParam || grads_[id].empty()) continue;
    Tensor& t = *n.tensor;
    if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
    const std::vector<double>& g = grads_[id];
    for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
  }
}

void Graph::backprop(std::uint32_t id) {
  // Inputs always precede their consumer on the tape, so grad_buffer() never
  // touches grads_[id] and `gy` stays valid.
  const Node& n = nodes_[id];
  const std::vector<double>& gy = grads_[id];
  auto wants = [&](std::uint32_t in) { return in != kNone && nodes_[in].needs_grad; };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kAffine: {
      const Node& nx = nodes_[n.in[0]];
      const Node& nw = nodes_[n.in[1]];
      const std::size_t in = nw.rows;
      const std::size_t out = nw.cols;
      const double* xv = data(nx);
      const double* wv = data(nw);
      if (wants(n.in[0])) {
        auto& gx = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < in; ++i) {
          const double* row = wv + i * out;
          double acc = 0.0;
          for (std::size_t j = 0; j < out; ++j) acc += row[j] * gy[j];
          gx[i] += acc;
        }
      }
      if (wants(n.in[1])) {
        auto& gw = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xv[i];
          if (xi == 0.0) continue;
          double* row = gw.data() + i * out;
          for (std::size_t j = 0; j < out; ++j) row[j] += xi * gy[j];
        }
      }
      if (wants(n.in[2])) {
        auto& gb = grad_buffer(n.in[2]);
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[j];
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(n.in[0])) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (wants(n.in[1])) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += sign * gy[i];
      }
      break;
    }
    case Op::kMul: {
      const double* av = data(nodes_[n.in[0]]);
      const double* bv = data(nodes_[n.in[1]]);
      if (wants(n.in[0])) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
      }
      if (wants(n.in[1])) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
      }
      break;
    }
    case Op::kScale: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.factor;
      break;
    }
    case Op::kScaleBy: {
      const double k = data(nodes_[n.in[0]])[0];
      const double* vv = data(nodes_[n.in[1]]);
      if (wants(n.in[0])) {
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * vv[i];
        grad_buffer(n.in[0])[0] += acc;
      }
      if (wants(n.in[1])) {
        auto& gv = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i] * k;
      }
      break;
    }
    case Op::kSigmoid: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double y = n.value[i];
        ga[i] += gy[i] * y * (1.0 - y);
      }
      break;
    }
    case Op::kTanh: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double y = n.value[i];
        ga[i] += gy[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::kExp: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.value[i];
      break;
    }
    case Op::kConcat: {
      std::size_t offset = 0;
      for (std::uint32_t p : n.parts) {
        const std::size_t len = nodes_[p].size();
        if (nodes_[p].needs_grad) {
          auto& gp = grad_buffer(p);
          for (std::size_t i = 0; i < len; ++i) gp[i] += gy[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::kSlice: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[n.aux + i] += gy[i];
      break;
    }
    case Op::kLookup: {
      auto& gt = grad_buffer(n.in[0]);
      double* row = gt.data() + n.aux * n.cols;
      for (std::size_t i = 0; i < gy.size(); ++i) row[i] += gy[i];
      break;
    }
    case Op::kLogSoftmax: {
      double total = 0.0;
      for (double g : gy) total += g;
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] - std::exp(n.value[i]) * total;
      break;
    }
    case Op::kPick: {
      grad_buffer(n.in[0])[n.aux] += gy[0];
      break;
    }
    case Op::kGather: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t k = 0; k < n.indices.size(); ++k) ga[n.indices[k]] += gy[k];
      break;
    }
    case Op::kSum: {
      auto& ga = grad_buffer(n.in[0]);
      for (double& g : ga) g += gy[0];
      break;
    }
    case Op::kTranspose: {
      const Node& na = nodes_[n.in[0]];
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < na.rows; ++i) {
        for (std::size_t j = 0; j < na.cols; ++j) ga[i * na.cols + j] += gy[j * na.rows + i];
      }
      break;
    }
    case Op::kDot: {
      const Node& na = nodes_[n.in[0]];
      const Node& nb = nodes_[n.in[1]];
      const double* av = data(na);
      const double* bv = data(nb);
      if (wants(n.in[0])) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < na.size(); ++i) ga[i] += gy[0] * bv[i];
      }
      if (wants(n.in[1])) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < nb.size(); ++i) gb[i] += gy[0] * av[i];
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer

double Optimizer::step(ParamStore& store) {
  for (const auto& [name, t] : store) {
    if (t.grad.size() != t.values.size()) {
      throw ContractError("optimizer_step: parameter '" + name + "' has no gradient");
    }
  }
  const double norm = store.grad_norm();
  double clip = 1.0;
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) clip = config_.clip_norm / norm;
  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::kSgd) {
    for (auto& [name, t] : store) {
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= lr * clip * t.grad[i];
      std::fill(t.grad.begin(), t.grad.end(), 0.0);
    }
    return norm;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double step = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  for (auto& [name, t] : store) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, Moments{std::vector<double>(t.size(), 0.0),
                                          std::vector<double>(t.size(), 0.0)})
               .first;
    }
    Moments& m = it->second;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double g = t.grad[i] * clip;
      m.first[i] = b1 * m.first[i] + (1.0 - b1) * g;
      m.second[i] = b2 * m.second[i] + (1.0 - b2) * g * g;
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      t.values[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    std::fill(t.grad.begin(), t.grad.end(), 0.0);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult gradient_check(const std::function<Var(Graph&)>& loss_fn, ParamStore& store,
                               const GradCheckOptions& options) {
  store.zero_grads();
  {
    Graph g;
    Var loss = loss_fn(g);
    g.backward(loss);
  }
  auto evaluate = [&]() {
    Graph g;
    return g.scalar_value(loss_fn(g));
  };

  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& [name, t] : store) {
    std::vector<std::size_t> coords;
    if (t.size() <= options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < options.max_coords_per_tensor; ++k) {
        coords.push_back(rng.below(t.size()));
      }
    }
    for (std::size_t i : coords) {
      const double saved = t.values[i];
      t.values[i] = saved + options.eps;
      const double up = evaluate();
      t.values[i] = saved - options.eps;
      const double down = evaluate();
      t.values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = t.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.coords_checked;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void save_params(const ParamStore& store, std::ostream& out) {
  out << kCheckpointMagic << '\n';
  for (const auto& [name, t] : store) {
    out << name << ' ' << t.shape.size();
    for (std::size_t d : t.shape) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (i > 0) out << ' ';
      out << format_double(t.values[i]);
    }
    out << '\n';
  }
}

void save_params(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  save_params(store, out);
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

}  // namespace

ParamStore load_params(std::istream& in, std::size_t line_offset) {
  std::string line;
  std::size_t lineno = line_offset;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("checkpoint line " + std::to_string(lineno) + ": " + what, lineno);
  };
  if (!std::getline(in, line)) {
    ++lineno;
    throw fail("empty checkpoint");
  }
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCheckpointMagic) throw fail("expected '" + std::string(kCheckpointMagic) + "'");

  ParamStore store;
  while (std::getline(in, line)) {
    ++lineno;
    auto head = split_ws(line);
    if (head.empty()) continue;
    if (head.size() < 2) throw fail("expected 'name ndim dims...'");
    std::size_t ndim = 0;
    if (!parse_number(head[1], ndim) || ndim > 2 || head.size() != ndim + 2) {
      throw fail("bad tensor header for '" + std::string(head[0]) + "'");
    }
    std::vector<std::size_t> shape(ndim);
    for (std::size_t k = 0; k < ndim; ++k) {
      if (!parse_number(head[k + 2], shape[k])) throw fail("bad dimension");
    }
    const std::string name(head[0]);
    if (store.contains(name)) throw fail("duplicate tensor '" + name + "'");
    std::vector<double> values;
    const std::size_t want = shape_size(shape);
    values.reserve(want);
    while (values.size() < want) {
      if (!std::getline(in, line)) {
        throw fail("tensor '" + name + "' ends after " + std::to_string(values.size()) + " of " +
                   std::to_string(want) + " values");
      }
      ++lineno;
      for (std::string_view tok : split_ws(line)) {
        double v = 0.0;
        if (!parse_number(tok, v)) throw fail("bad value '" + std::string(tok) + "'");
        if (values.size() == want) throw fail("too many values for '" + name + "'");
        values.push_back(v);
      }
    }
    store.add(name, Tensor(std::move(shape), std::move(values)));
  }
  return store;
}

ParamStore load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return load_params(in);
}

void assign_params(ParamStore& target, const ParamStore& source) {
  for (auto& [name, t] : target) {
    const Tensor* src = source.find(name);
    if (src == nullptr) throw Error("checkpoint is missing tensor '" + name + "'");
    if (src->shape != t.shape) {
      throw Error("tensor '" + name + "': expected shape " + shape_string(t.shape) +
                  ", found " + shape_string(src->shape));
    }
    t.values = src->values;
  }
}

}  // namespace tdtd::ad
