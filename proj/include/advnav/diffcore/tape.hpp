#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advnav/diffcore/tensor.hpp"

namespace advnav {

/// The closed set of recorded operations. Input and Param are leaves.
enum class Prim : std::uint8_t {
  Input,
  Param,
  MatMul,
  Add,
  Mul,
  Concat,
  SliceCols,
  SoftmaxRows,
  SoftmaxAll,
  Tanh,
  Sigmoid,
  Gather,
  Scale,
  Sum,
  CrossEntropy,
  SoftmaxEntropy,
};

inline const char* prim_name(Prim p) {
  switch (p) {
    case Prim::Input: return "input";
    case Prim::Param: return "param";
    case Prim::MatMul: return "matmul";
    case Prim::Add: return "add";
    case Prim::Mul: return "mul";
    case Prim::Concat: return "concat";
    case Prim::SliceCols: return "slice_cols";
    case Prim::SoftmaxRows: return "softmax_rows";
    case Prim::SoftmaxAll: return "softmax";
    case Prim::Tanh: return "tanh";
    case Prim::Sigmoid: return "sigmoid";
    case Prim::Gather: return "gather";
    case Prim::Scale: return "scale";
    case Prim::Sum: return "sum";
    case Prim::CrossEntropy: return "cross_entropy";
    case Prim::SoftmaxEntropy: return "softmax_entropy";
  }
  return "unknown";
}

/// Handle to a value recorded on a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Non-tensor arguments of a primitive.
///
/// matmul: flag_a / flag_b transpose the left / right operand.
/// concat: axis (0 stacks rows, 1 joins columns).
/// slice_cols: [begin, end).
/// gather: ids are the row indices.
/// scale: scalar.
/// cross_entropy: index is the target class.
struct Attrs {
  std::vector<int> ids;
  double scalar = 0.0;
  int axis = 0;
  int begin = 0;
  int end = 0;
  int index = 0;
  bool flag_a = false;
  bool flag_b = false;
};

template <class T>
class BasicTape {
 public:
  struct Entry {
    Prim op = Prim::Input;
    std::vector<int> inputs;
    Attrs attrs;
    std::string name;
    BasicTensor<T>* param = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
  };

  BasicTape() { entries_.reserve(256); }

  // ---- leaves -------------------------------------------------------------

  Var input(std::string name, BasicTensor<T> t) {
    Entry e;
    e.op = Prim::Input;
    e.name = std::move(name);
    e.rows = t.rows();
    e.cols = t.cols();
    e.value = std::move(t.values);
    return push(std::move(e));
  }

  Var constant(BasicTensor<T> t) { return input({}, std::move(t)); }

  Var constant_row(std::span<const T> v) {
    Entry e;
    e.op = Prim::Input;
    e.rows = 1;
    e.cols = v.size();
    e.value.assign(v.begin(), v.end());
    return push(std::move(e));
  }

  /// Leaf bound to an external parameter tensor; its gradient is added to
  /// `p.grad` by accumulate_param_grads().
  Var param(std::string name, BasicTensor<T>& p) {
    Entry e;
    e.op = Prim::Param;
    e.name = std::move(name);
    e.param = &p;
    e.rows = p.rows();
    e.cols = p.cols();
    e.value = p.values;
    return push(std::move(e));
  }

  // ---- primitives ---------------------------------------------------------

  Var apply(Prim op, std::vector<Var> inputs, Attrs attrs = {}) {
    Entry e;
    e.op = op;
    e.attrs = std::move(attrs);
    e.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      if (v.id < 0 || v.id >= static_cast<int>(entries_.size())) {
        throw std::invalid_argument("tape entry #" + std::to_string(entries_.size()) +
                                    " (" + prim_name(op) + "): input handle out of range");
      }
      e.inputs.push_back(v.id);
    }
    entries_.push_back(std::move(e));
    const int id = static_cast<int>(entries_.size()) - 1;
    try {
      forward(id);
    } catch (...) {
      entries_.pop_back();
      throw;
    }
    return Var{id};
  }

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    Attrs at;
    at.flag_a = trans_a;
    at.flag_b = trans_b;
    return apply(Prim::MatMul, {a, b}, std::move(at));
  }
  Var add(Var a, Var b) { return apply(Prim::Add, {a, b}); }
  Var mul(Var a, Var b) { return apply(Prim::Mul, {a, b}); }
  Var concat(std::vector<Var> parts, int axis) {
    Attrs at;
    at.axis = axis;
    return apply(Prim::Concat, std::move(parts), std::move(at));
  }
  Var slice_cols(Var a, int begin, int end) {
    Attrs at;
    at.begin = begin;
    at.end = end;
    return apply(Prim::SliceCols, {a}, std::move(at));
  }
  Var softmax_rows(Var a) { return apply(Prim::SoftmaxRows, {a}); }
  /// Softmax over every entry of the tensor.
  Var softmax(Var a) { return apply(Prim::SoftmaxAll, {a}); }
  Var tanh(Var a) { return apply(Prim::Tanh, {a}); }
  Var sigmoid(Var a) { return apply(Prim::Sigmoid, {a}); }
  Var gather(Var table, std::vector<int> rows) {
    Attrs at;
    at.ids = std::move(rows);
    return apply(Prim::Gather, {table}, std::move(at));
  }
  Var scale(Var a, double s) {
    Attrs at;
    at.scalar = s;
    return apply(Prim::Scale, {a}, std::move(at));
  }
  Var sum(Var a) { return apply(Prim::Sum, {a}); }
  /// -log softmax(logits)[target] over the flattened logits.
  Var cross_entropy(Var logits, int target) {
    Attrs at;
    at.index = target;
    return apply(Prim::CrossEntropy, {logits}, std::move(at));
  }
  /// Entropy of softmax(logits) over the flattened logits.
  Var softmax_entropy(Var logits) { return apply(Prim::SoftmaxEntropy, {logits}); }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

  // ---- access -------------------------------------------------------------

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(Var v) const { return entries_.at(static_cast<std::size_t>(v.id)); }
  const std::vector<Entry>& entries() const { return entries_; }

  std::span<const T> value(Var v) const { return entry(v).value; }
  std::size_t rows(Var v) const { return entry(v).rows; }
  std::size_t cols(Var v) const { return entry(v).cols; }
  T scalar(Var v) const { return entry(v).value.at(0); }
  BasicTensor<T> tensor(Var v) const {
    const auto& e = entry(v);
    return BasicTensor<T>::from(e.rows, e.cols, e.value);
  }
  /// Gradient of the last backward() w.r.t. v; zeros when v did not
  /// contribute.
  BasicTensor<T> grad(Var v) const {
    const auto& e = entry(v);
    BasicTensor<T> t(e.rows, e.cols);
    if (!e.grad.empty()) t.values = e.grad;
    return t;
  }

  void mark_output(std::string name, Var v) { outputs_[std::move(name)] = v.id; }

  // ---- replay -------------------------------------------------------------

  /// Re-evaluates every entry in tape order. Named leaves (inputs and params)
  /// present in `bindings` take the bound value; params absent from it take
  /// the current value of the external tensor. Returns the marked outputs.
  std::map<std::string, BasicTensor<T>> evaluate(
      const std::map<std::string, BasicTensor<T>>& bindings = {}) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& e = entries_[i];
      e.grad.clear();
      if (e.op == Prim::Input || e.op == Prim::Param) {
        auto it = e.name.empty() ? bindings.end() : bindings.find(e.name);
        if (it != bindings.end()) {
          if (!it->second.valid()) {
            throw ShapeError("tape entry #" + std::to_string(i) + " (" + e.name +
                             "): bound tensor is inconsistent");
          }
          e.rows = it->second.rows();
          e.cols = it->second.cols();
          e.value = it->second.values;
        } else if (e.op == Prim::Param) {
          e.rows = e.param->rows();
          e.cols = e.param->cols();
          e.value = e.param->values;
        }
        continue;
      }
      forward(static_cast<int>(i));
    }
    std::map<std::string, BasicTensor<T>> out;
    for (const auto& [name, id] : outputs_) out.emplace(name, tensor(Var{id}));
    return out;
  }

  // ---- reverse mode -------------------------------------------------------

  /// Propagates d(loss)/d(entry) to every entry that reaches `loss`.
  /// Parameter gradients are added into the bound tensors unless
  /// `accumulate_params` is false, in which case accumulate_param_grads()
  /// must be called later.
  void backward(Var loss, bool accumulate_params = true) {
    const auto& le = entry(loss);
    if (le.rows * le.cols != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + std::to_string(le.rows) +
                       "x" + std::to_string(le.cols));
    }
    for (auto& e : entries_) e.grad.clear();
    entries_[static_cast<std::size_t>(loss.id)].grad.assign(1, T{1});
    for (int i = loss.id; i >= 0; --i) {
      if (entries_[static_cast<std::size_t>(i)].grad.empty()) continue;
      propagate(i);
    }
    if (accumulate_params) accumulate_param_grads();
  }

  void accumulate_param_grads() {
    for (auto& e : entries_) {
      if (e.op != Prim::Param || e.grad.empty()) continue;
      e.param->ensure_grad();
      for (std::size_t k = 0; k < e.grad.size(); ++k) e.param->grad[k] += e.grad[k];
    }
  }

  /// Gradients of all named leaves after backward(); leaves that did not
  /// contribute get zeros. Repeated names are summed.
  std::map<std::string, BasicTensor<T>> named_gradients() const {
    std::map<std::string, BasicTensor<T>> out;
    for (const auto& e : entries_) {
      if ((e.op != Prim::Input && e.op != Prim::Param) || e.name.empty()) continue;
      auto [it, fresh] = out.try_emplace(e.name, e.rows, e.cols);
      if (e.grad.empty()) continue;
      for (std::size_t k = 0; k < e.grad.size(); ++k) it->second.values[k] += e.grad[k];
    }
    return out;
  }

 private:
  Var push(Entry e) {
    entries_.push_back(std::move(e));
    return Var{static_cast<int>(entries_.size()) - 1};
  }

  [[noreturn]] void fail(int id, const std::string& what) const {
    const auto& e = entries_[static_cast<std::size_t>(id)];
    throw ShapeError("tape entry #" + std::to_string(id) + " (" + prim_name(e.op) +
                     "): " + what);
  }

  static std::string dims(const Entry& e) {
    return std::to_string(e.rows) + "x" + std::to_string(e.cols);
  }

  void require_arity(int id, std::size_t n) const {
    if (entries_[static_cast<std::size_t>(id)].inputs.size() != n) {
      fail(id, "expected " + std::to_string(n) + " input(s)");
    }
  }

  static void softmax_into(std::span<const T> x, std::span<T> y) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : x) mx = std::max(mx, v);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double ex = std::exp(static_cast<double>(x[i] - mx));
      y[i] = static_cast<T>(ex);
      total += ex;
    }
    for (auto& v : y) v = static_cast<T>(static_cast<double>(v) / total);
  }

  static double log_sum_exp(std::span<const T> x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : x) mx = std::max(mx, static_cast<double>(v));
    double total = 0.0;
    for (T v : x) total += std::exp(static_cast<double>(v) - mx);
    return mx + std::log(total);
  }

  void forward(int id) {
    Entry& e = entries_[static_cast<std::size_t>(id)];
    auto in = [&](std::size_t k) -> const Entry& {
      return entries_[static_cast<std::size_t>(e.inputs[k])];
    };
    switch (e.op) {
      case Prim::Input:
      case Prim::Param:
        fail(id, "leaf entries take no inputs");
      case Prim::MatMul: {
        require_arity(id, 2);
        const Entry& a = in(0);
        const Entry& b = in(1);
        const bool ta = e.attrs.flag_a;
        const bool tb = e.attrs.flag_b;
        const std::size_t m = ta ? a.cols : a.rows;
        const std::size_t k = ta ? a.rows : a.cols;
        const std::size_t kb = tb ? b.cols : b.rows;
        const std::size_t n = tb ? b.rows : b.cols;
        if (k != kb) fail(id, "inner dimensions differ: " + dims(a) + " vs " + dims(b));
        e.rows = m;
        e.cols = n;
        e.value.assign(m * n, T{0});
        std::vector<double> acc(n);
        for (std::size_t i = 0; i < m; ++i) {
          std::fill(acc.begin(), acc.end(), 0.0);
          if (tb) {
            for (std::size_t j = 0; j < n; ++j) {
              const T* brow = &b.value[j * k];
              double s = 0.0;
              for (std::size_t p = 0; p < k; ++p) {
                const double av = ta ? a.value[p * a.cols + i] : a.value[i * k + p];
                s += av * static_cast<double>(brow[p]);
              }
              acc[j] = s;
            }
          } else {
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ta ? a.value[p * a.cols + i] : a.value[i * k + p];
              if (av == 0.0) continue;
              const T* brow = &b.value[p * n];
              for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
            }
          }
          for (std::size_t j = 0; j < n; ++j) e.value[i * n + j] = static_cast<T>(acc[j]);
        }
        return;
      }
      case Prim::Add:
      case Prim::Mul: {
        require_arity(id, 2);
        const Entry& a = in(0);
        const Entry& b = in(1);
        if (a.rows != b.rows || a.cols != b.cols) {
          fail(id, "operand shapes differ: " + dims(a) + " vs " + dims(b));
        }
        e.rows = a.rows;
        e.cols = a.cols;
        e.value.resize(a.value.size());
        if (e.op == Prim::Add) {
          for (std::size_t i = 0; i < a.value.size(); ++i) e.value[i] = a.value[i] + b.value[i];
        } else {
          for (std::size_t i = 0; i < a.value.size(); ++i) e.value[i] = a.value[i] * b.value[i];
        }
        return;
      }
      case Prim::Concat: {
        if (e.inputs.empty()) fail(id, "needs at least one input");
        if (e.attrs.axis == 0) {
          const std::size_t c = in(0).cols;
          std::size_t r = 0;
          for (std::size_t k = 0; k < e.inputs.size(); ++k) {
            if (in(k).cols != c) fail(id, "column counts differ across row-concat inputs");
            r += in(k).rows;
          }
          e.rows = r;
          e.cols = c;
          e.value.clear();
          e.value.reserve(r * c);
          for (std::size_t k = 0; k < e.inputs.size(); ++k) {
            e.value.insert(e.value.end(), in(k).value.begin(), in(k).value.end());
          }
        } else if (e.attrs.axis == 1) {
          const std::size_t r = in(0).rows;
          std::size_t c = 0;
          for (std::size_t k = 0; k < e.inputs.size(); ++k) {
            if (in(k).rows != r) fail(id, "row counts differ across column-concat inputs");
            c += in(k).cols;
          }
          e.rows = r;
          e.cols = c;
          e.value.assign(r * c, T{0});
          std::size_t off = 0;
          for (std::size_t k = 0; k < e.inputs.size(); ++k) {
            const Entry& p = in(k);
            for (std::size_t i = 0; i < r; ++i) {
              std::copy_n(&p.value[i * p.cols], p.cols, &e.value[i * c + off]);
            }
            off += p.cols;
          }
        } else {
          fail(id, "axis must be 0 or 1");
        }
        return;
      }
      case Prim::SliceCols: {
        require_arity(id, 1);
        const Entry& a = in(0);
        const int b0 = e.attrs.begin;
        const int b1 = e.attrs.end;
        if (b0 < 0 || b1 <= b0 || static_cast<std::size_t>(b1) > a.cols) {
          fail(id, "column range out of bounds for " + dims(a));
        }
        e.rows = a.rows;
        e.cols = static_cast<std::size_t>(b1 - b0);
        e.value.resize(e.rows * e.cols);
        for (std::size_t i = 0; i < a.rows; ++i) {
          std::copy_n(&a.value[i * a.cols + static_cast<std::size_t>(b0)], e.cols,
                      &e.value[i * e.cols]);
        }
        return;
      }
      case Prim::SoftmaxRows:
      case Prim::SoftmaxAll: {
        require_arity(id, 1);
        const Entry& a = in(0);
        if (a.value.empty()) fail(id, "softmax of an empty tensor");
        e.rows = a.rows;
        e.cols = a.cols;
        e.value.resize(a.value.size());
        if (e.op == Prim::SoftmaxAll) {
          softmax_into(a.value, e.value);
        } else {
          for (std::size_t i = 0; i < a.rows; ++i) {
            softmax_into(std::span<const T>(&a.value[i * a.cols], a.cols),
                         std::span<T>(&e.value[i * a.cols], a.cols));
          }
        }
        return;
      }
      case Prim::Tanh:
      case Prim::Sigmoid: {
        require_arity(id, 1);
        const Entry& a = in(0);
        e.rows = a.rows;
        e.cols = a.cols;
        e.value.resize(a.value.size());
        if (e.op == Prim::Tanh) {
          for (std::size_t i = 0; i < a.value.size(); ++i) e.value[i] = std::tanh(a.value[i]);
        } else {
          for (std::size_t i = 0; i < a.value.size(); ++i) {
            e.value[i] = T{1} / (T{1} + std::exp(-a.value[i]));
          }
        }
        return;
      }
      case Prim::Gather: {
        require_arity(id, 1);
        const Entry& a = in(0);
        e.rows = e.attrs.ids.size();
        e.cols = a.cols;
        e.value.resize(e.rows * e.cols);
        for (std::size_t r = 0; r < e.rows; ++r) {
          const int src = e.attrs.ids[r];
          if (src < 0 || static_cast<std::size_t>(src) >= a.rows) {
            fail(id, "row index " + std::to_string(src) + " out of range for " + dims(a));
          }
          std::copy_n(&a.value[static_cast<std::size_t>(src) * a.cols], a.cols,
                      &e.value[r * a.cols]);
        }
        return;
      }
      case Prim::Scale: {
        require_arity(id, 1);
        const Entry& a = in(0);
        e.rows = a.rows;
        e.cols = a.cols;
        e.value.resize(a.value.size());
        const T s = static_cast<T>(e.attrs.scalar);
        for (std::size_t i = 0; i < a.value.size(); ++i) e.value[i] = s * a.value[i];
        return;
      }
      case Prim::Sum: {
        require_arity(id, 1);
        double s = 0.0;
        for (T v : in(0).value) s += v;
        e.rows = e.cols = 1;
        e.value.assign(1, static_cast<T>(s));
        return;
      }
      case Prim::CrossEntropy: {
        require_arity(id, 1);
        const Entry& a = in(0);
        const int t = e.attrs.index;
        if (t < 0 || static_cast<std::size_t>(t) >= a.value.size()) {
          fail(id, "target " + std::to_string(t) + " out of range for " + dims(a));
        }
        e.rows = e.cols = 1;
        e.value.assign(1, static_cast<T>(log_sum_exp(a.value) -
                                         static_cast<double>(a.value[static_cast<std::size_t>(t)])));
        return;
      }
      case Prim::SoftmaxEntropy: {
        require_arity(id, 1);
        const Entry& a = in(0);
        if (a.value.empty()) fail(id, "entropy of an empty tensor");
        const double lse = log_sum_exp(a.value);
        double h = 0.0;
        for (T v : a.value) {
          const double lp = static_cast<double>(v) - lse;
          h -= std::exp(lp) * lp;
        }
        e.rows = e.cols = 1;
        e.value.assign(1, static_cast<T>(h));
        return;
      }
    }
    throw std::invalid_argument("tape entry #" + std::to_string(id) + ": unknown primitive " +
                                std::to_string(static_cast<int>(e.op)));
  }

  std::vector<T>& grad_of(int input_id) {
    Entry& x = entries_[static_cast<std::size_t>(input_id)];
    if (x.grad.size() != x.value.size()) x.grad.assign(x.value.size(), T{0});
    return x.grad;
  }

  void propagate(int id) {
    Entry& e = entries_[static_cast<std::size_t>(id)];
    const std::vector<T>& g = e.grad;
    switch (e.op) {
      case Prim::Input:
      case Prim::Param:
        return;
      case Prim::MatMul: {
        const int ia = e.inputs[0];
        const int ib = e.inputs[1];
        const bool ta = e.attrs.flag_a;
        const bool tb = e.attrs.flag_b;
        const std::size_t m = e.rows;
        const std::size_t n = e.cols;
        const Entry& a = entries_[static_cast<std::size_t>(ia)];
        const std::size_t k = ta ? a.rows : a.cols;
        // op(A)(i,p) and op(B)(p,j) in terms of stored layouts.
        auto opa = [&](std::size_t i, std::size_t p) -> double {
          const Entry& aa = entries_[static_cast<std::size_t>(ia)];
          return ta ? aa.value[p * m + i] : aa.value[i * k + p];
        };
        auto opb = [&](std::size_t p, std::size_t j) -> double {
          const Entry& bb = entries_[static_cast<std::size_t>(ib)];
          return tb ? bb.value[j * k + p] : bb.value[p * n + j];
        };
        {
          std::vector<T>& ga = grad_of(ia);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[i * n + j]) * opb(p, j);
              const std::size_t dst = ta ? p * m + i : i * k + p;
              ga[dst] += static_cast<T>(s);
            }
          }
        }
        {
          std::vector<T>& gb = grad_of(ib);
          std::vector<double> acc(n);
          for (std::size_t p = 0; p < k; ++p) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t i = 0; i < m; ++i) {
              const double av = opa(i, p);
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(g[i * n + j]);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t dst = tb ? j * k + p : p * n + j;
              gb[dst] += static_cast<T>(acc[j]);
            }
          }
        }
        return;
      }
      case Prim::Add: {
        for (int which = 0; which < 2; ++which) {
          auto& gx = grad_of(e.inputs[static_cast<std::size_t>(which)]);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        return;
      }
      case Prim::Mul: {
        const int ia = e.inputs[0];
        const int ib = e.inputs[1];
        {
          auto& ga = grad_of(ia);
          const auto& bv = entries_[static_cast<std::size_t>(ib)].value;
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        {
          auto& gb = grad_of(ib);
          const auto& av = entries_[static_cast<std::size_t>(ia)].value;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
        return;
      }
      case Prim::Concat: {
        if (e.attrs.axis == 0) {
          std::size_t off = 0;
          for (int src : e.inputs) {
            auto& gx = grad_of(src);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[off + i];
            off += gx.size();
          }
        } else {
          std::size_t off = 0;
          for (int src : e.inputs) {
            const std::size_t pc = entries_[static_cast<std::size_t>(src)].cols;
            auto& gx = grad_of(src);
            for (std::size_t i = 0; i < e.rows; ++i) {
              for (std::size_t j = 0; j < pc; ++j) gx[i * pc + j] += g[i * e.cols + off + j];
            }
            off += pc;
          }
        }
        return;
      }
      case Prim::SliceCols: {
        const int src = e.inputs[0];
        const std::size_t ac = entries_[static_cast<std::size_t>(src)].cols;
        auto& gx = grad_of(src);
        const auto b0 = static_cast<std::size_t>(e.attrs.begin);
        for (std::size_t i = 0; i < e.rows; ++i) {
          for (std::size_t j = 0; j < e.cols; ++j) gx[i * ac + b0 + j] += g[i * e.cols + j];
        }
        return;
      }
      case Prim::SoftmaxRows:
      case Prim::SoftmaxAll: {
        auto& gx = grad_of(e.inputs[0]);
        const std::size_t width = e.op == Prim::SoftmaxAll ? e.value.size() : e.cols;
        const std::size_t groups = e.value.size() / width;
        for (std::size_t r = 0; r < groups; ++r) {
          const std::size_t base = r * width;
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            dot += static_cast<double>(g[base + j]) * e.value[base + j];
          }
          for (std::size_t j = 0; j < width; ++j) {
            gx[base + j] += static_cast<T>(e.value[base + j] * (g[base + j] - dot));
          }
        }
        return;
      }
      case Prim::Tanh: {
        auto& gx = grad_of(e.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T{1} - e.value[i] * e.value[i]);
        return;
      }
      case Prim::Sigmoid: {
        auto& gx = grad_of(e.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * e.value[i] * (T{1} - e.value[i]);
        return;
      }
      case Prim::Gather: {
        auto& gx = grad_of(e.inputs[0]);
        for (std::size_t r = 0; r < e.rows; ++r) {
          const auto src = static_cast<std::size_t>(e.attrs.ids[r]);
          for (std::size_t j = 0; j < e.cols; ++j) gx[src * e.cols + j] += g[r * e.cols + j];
        }
        return;
      }
      case Prim::Scale: {
        auto& gx = grad_of(e.inputs[0]);
        const T s = static_cast<T>(e.attrs.scalar);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
        return;
      }
      case Prim::Sum: {
        auto& gx = grad_of(e.inputs[0]);
        for (auto& v : gx) v += g[0];
        return;
      }
      case Prim::CrossEntropy: {
        const int src = e.inputs[0];
        const auto& x = entries_[static_cast<std::size_t>(src)].value;
        const double lse = log_sum_exp(x);
        auto& gx = grad_of(src);
        for (std::size_t i = 0; i < x.size(); ++i) {
          double d = std::exp(static_cast<double>(x[i]) - lse);
          if (static_cast<int>(i) == e.attrs.index) d -= 1.0;
          gx[i] += static_cast<T>(g[0] * d);
        }
        return;
      }
      case Prim::SoftmaxEntropy: {
        const int src = e.inputs[0];
        const auto& x = entries_[static_cast<std::size_t>(src)].value;
        const double lse = log_sum_exp(x);
        const double h = e.value[0];
        auto& gx = grad_of(src);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double lp = static_cast<double>(x[i]) - lse;
          gx[i] += static_cast<T>(-g[0] * std::exp(lp) * (lp + h));
        }
        return;
      }
    }
    throw std::invalid_argument("tape entry #" + std::to_string(id) +
                                ": no backward rule for primitive");
  }

  std::vector<Entry> entries_;
  std::map<std::string, int> outputs_;
};

using Tape = BasicTape<float>;

}  // namespace advnav
