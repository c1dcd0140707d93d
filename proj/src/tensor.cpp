#include "croc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace croc {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

[[noreturn]] void fail(const std::string& msg) { throw Error(msg); }

void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }
}

// C (m x n) = A (m x k) . B (k x n)
void mm(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
        double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) += A^T . B where A is k x m, B is k x n
void mm_at_b_acc(const double* a, std::size_t k, std::size_t m, const double* b,
                 std::size_t n, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) += A . B^T where A is m x k, B is n x k
void mm_a_bt_acc(const double* a, std::size_t m, std::size_t k, const double* b,
                 std::size_t n, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double dot = 0.0;
      for (std::size_t p = 0; p < k; ++p) dot += arow[p] * brow[p];
      crow[j] += dot;
    }
  }
}

// Equal shapes, or b broadcast as a 1 x d row over an N x d left operand.
enum class Bcast { None, RowB };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::None;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    return Bcast::RowB;
  }
  fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
       shape_str(b.shape()));
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

static std::shared_ptr<detail::Storage> new_storage(Shape shape, std::vector<double> v,
                                                    bool requires_grad) {
  if (shape.empty()) fail("tensor: rank-0 shapes are not supported, use {1}");
  for (std::size_t d : shape) {
    if (d == 0) fail("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != v.size()) {
    fail("tensor: " + std::to_string(v.size()) + " values for shape " + shape_str(shape));
  }
  auto s = std::make_shared<detail::Storage>();
  s->shape = std::move(shape);
  s->values = std::move(v);
  s->requires_grad = requires_grad;
  s->grad_connected = requires_grad;
  s->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return s;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(new_storage(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw NumericError("tensor full: non-finite fill value");
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(new_storage(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_finite(values, "tensor from");
  return Tensor(new_storage(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
  if (!(lo <= hi)) fail("tensor uniform: lo > hi");
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(new_storage(std::move(shape), std::move(v), requires_grad));
}

const Shape& Tensor::shape() const {
  if (!s_) fail("tensor: use of an undefined tensor");
  return s_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const { return shape().at(0); }

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.size() >= 2 ? s[1] : 1;
}

std::span<const double> Tensor::values() const {
  if (!s_) fail("tensor: use of an undefined tensor");
  return s_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!s_) fail("tensor: use of an undefined tensor");
  return s_->values;
}

std::span<const double> Tensor::grad() const {
  if (!s_) fail("tensor: use of an undefined tensor");
  return s_->grad;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

void Tensor::zero_grad() {
  if (s_) s_->grad.assign(s_->values.size(), 0.0);
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }
bool Tensor::grad_connected() const { return s_ && s_->grad_connected; }
std::uint64_t Tensor::id() const { return s_ ? s_->id : 0; }

double Tensor::item() const {
  if (numel() != 1) fail("tensor item: expected a single element, got " + shape_str(shape()));
  return s_->values[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) fail("tensor at: flat index out of range");
  return s_->values[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) fail("tensor at(i,j): tensor is not rank 2");
  if (i >= rows() || j >= cols()) fail("tensor at(i,j): index out of range");
  return s_->values[i * cols() + j];
}

Tensor Tensor::detach() const {
  if (!s_) fail("tensor detach: undefined tensor");
  std::vector<double> v = s_->values;
  return Tensor(new_storage(s_->shape, std::move(v), false));
}

// ---------------------------------------------------------------------------
// Tape

void Tape::check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail(std::string(op) + ": undefined tensor operand");
}

bool Tape::track(std::initializer_list<const Tensor*> inputs) const {
  if (!grad_enabled_) return false;
  for (const Tensor* t : inputs) {
    if (t->grad_connected()) return true;
  }
  return false;
}

Tensor Tape::make_tensor(Shape shape, std::vector<double> values, const char* op) {
  check_finite(values, op);
  return Tensor(new_storage(std::move(shape), std::move(values), false));
}

void Tape::record(std::function<void()> pull, const Tensor& out) {
  out.storage()->grad_connected = true;
  outputs_.insert(out.storage());
  records_.push_back({std::move(pull), out.storage()});
  spent_ = false;
}

void Tape::reset() {
  records_.clear();
  outputs_.clear();
  spent_ = false;
}

void Tape::backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.numel() != 1) {
    fail("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (spent_) {
    fail("backward: tape already consumed; run a fresh forward pass first");
  }
  detail::Storage* ls = loss.storage();
  if (!outputs_.count(ls) && !ls->requires_grad) {
    fail("backward: loss is not connected to this tape");
  }
  ls->ensure_grad();
  ls->grad[0] += 1.0;
  // Reverse sweep. Ops whose output gradient was never allocated are not on
  // a path to the loss; skipping them both prunes dead subgraphs and lets
  // closures index the output grad unconditionally.
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    it->pull();
  }
  records_.clear();
  outputs_.clear();
  spent_ = true;
}

// -- elementwise -------------------------------------------------------------

Tensor Tape::relu(const Tensor& a) {
  check_defined(a, "relu");
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  Tensor out = make_tensor(a.shape(), std::move(v), "relu");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->values.size(); ++i) {
        if (as->values[i] > 0.0) as->grad[i] += os->grad[i];
      }
    }, out);
  }
  return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
  check_defined(a, "sigmoid");
  std::vector<double> v(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = av[i];
    if (x >= 0.0) {
      v[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      v[i] = e / (1.0 + e);
    }
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "sigmoid");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->values.size(); ++i) {
        const double y = os->values[i];
        as->grad[i] += os->grad[i] * y * (1.0 - y);
      }
    }, out);
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  const Bcast bc = broadcast_kind(a, b, "add");
  std::vector<double> v(a.numel());
  auto av = a.values();
  auto bv = b.values();
  if (bc == Bcast::None) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  } else {
    const std::size_t n = a.rows(), d = a.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] = av[i * d + j] + bv[j];
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "add");
  if (track({&a, &b})) {
    auto as = a.s_;
    auto bs = b.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gb = b.grad_connected();
    record([as, bs, os, bc, ga, gb] {
      if (ga) {
        as->ensure_grad();
        for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i];
      }
      if (gb) {
        bs->ensure_grad();
        if (bc == Bcast::None) {
          for (std::size_t i = 0; i < bs->grad.size(); ++i) bs->grad[i] += os->grad[i];
        } else {
          const std::size_t d = bs->values.size();
          const std::size_t n = os->values.size() / d;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) bs->grad[j] += os->grad[i * d + j];
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  const Bcast bc = broadcast_kind(a, b, "sub");
  std::vector<double> v(a.numel());
  auto av = a.values();
  auto bv = b.values();
  if (bc == Bcast::None) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  } else {
    const std::size_t n = a.rows(), d = a.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] = av[i * d + j] - bv[j];
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "sub");
  if (track({&a, &b})) {
    auto as = a.s_;
    auto bs = b.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gb = b.grad_connected();
    record([as, bs, os, bc, ga, gb] {
      if (ga) {
        as->ensure_grad();
        for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i];
      }
      if (gb) {
        bs->ensure_grad();
        if (bc == Bcast::None) {
          for (std::size_t i = 0; i < bs->grad.size(); ++i) bs->grad[i] -= os->grad[i];
        } else {
          const std::size_t d = bs->values.size();
          const std::size_t n = os->values.size() / d;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) bs->grad[j] -= os->grad[i * d + j];
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  const Bcast bc = broadcast_kind(a, b, "mul");
  std::vector<double> v(a.numel());
  auto av = a.values();
  auto bv = b.values();
  if (bc == Bcast::None) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  } else {
    const std::size_t n = a.rows(), d = a.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] = av[i * d + j] * bv[j];
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "mul");
  if (track({&a, &b})) {
    auto as = a.s_;
    auto bs = b.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gb = b.grad_connected();
    record([as, bs, os, bc, ga, gb] {
      if (bc == Bcast::None) {
        if (ga) {
          as->ensure_grad();
          for (std::size_t i = 0; i < as->grad.size(); ++i)
            as->grad[i] += os->grad[i] * bs->values[i];
        }
        if (gb) {
          bs->ensure_grad();
          for (std::size_t i = 0; i < bs->grad.size(); ++i)
            bs->grad[i] += os->grad[i] * as->values[i];
        }
      } else {
        const std::size_t d = bs->values.size();
        const std::size_t n = os->values.size() / d;
        if (ga) {
          as->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              as->grad[i * d + j] += os->grad[i * d + j] * bs->values[j];
        }
        if (gb) {
          bs->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              bs->grad[j] += os->grad[i * d + j] * as->values[i * d + j];
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
  check_defined(a, "div");
  check_defined(b, "div");
  const Bcast bc = broadcast_kind(a, b, "div");
  std::vector<double> v(a.numel());
  auto av = a.values();
  auto bv = b.values();
  if (bc == Bcast::None) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] / bv[i];
  } else {
    const std::size_t n = a.rows(), d = a.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] = av[i * d + j] / bv[j];
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "div");
  if (track({&a, &b})) {
    auto as = a.s_;
    auto bs = b.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gb = b.grad_connected();
    record([as, bs, os, bc, ga, gb] {
      if (bc == Bcast::None) {
        if (ga) {
          as->ensure_grad();
          for (std::size_t i = 0; i < as->grad.size(); ++i)
            as->grad[i] += os->grad[i] / bs->values[i];
        }
        if (gb) {
          bs->ensure_grad();
          for (std::size_t i = 0; i < bs->grad.size(); ++i) {
            const double bi = bs->values[i];
            bs->grad[i] -= os->grad[i] * as->values[i] / (bi * bi);
          }
        }
      } else {
        const std::size_t d = bs->values.size();
        const std::size_t n = os->values.size() / d;
        if (ga) {
          as->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              as->grad[i * d + j] += os->grad[i * d + j] / bs->values[j];
        }
        if (gb) {
          bs->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const double bj = bs->values[j];
              bs->grad[j] -= os->grad[i * d + j] * as->values[i * d + j] / (bj * bj);
            }
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  check_defined(a, "scale");
  if (!std::isfinite(c)) throw NumericError("scale: non-finite scalar");
  std::vector<double> v(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  Tensor out = make_tensor(a.shape(), std::move(v), "scale");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, c] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i] * c;
    }, out);
  }
  return out;
}

Tensor Tape::add_const(const Tensor& a, double c) {
  check_defined(a, "add_const");
  if (!std::isfinite(c)) throw NumericError("add_const: non-finite scalar");
  std::vector<double> v(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c;
  Tensor out = make_tensor(a.shape(), std::move(v), "add_const");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i];
    }, out);
  }
  return out;
}

Tensor Tape::sqrt(const Tensor& a) {
  check_defined(a, "sqrt");
  std::vector<double> v(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (av[i] < 0.0) throw NumericError("sqrt: negative input");
    v[i] = std::sqrt(av[i]);
  }
  Tensor out = make_tensor(a.shape(), std::move(v), "sqrt");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) {
        const double y = os->values[i];
        if (y > 0.0) as->grad[i] += os->grad[i] * 0.5 / y;
      }
    }, out);
  }
  return out;
}

// -- linear algebra ----------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2) {
    fail("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  }
  if (a.cols() != b.rows()) {
    fail("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(m * n);
  mm(a.values().data(), m, k, b.values().data(), n, v.data());
  Tensor out = make_tensor({m, n}, std::move(v), "matmul");
  if (track({&a, &b})) {
    auto as = a.s_;
    auto bs = b.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gb = b.grad_connected();
    record([as, bs, os, m, k, n, ga, gb] {
      if (ga) {
        as->ensure_grad();
        mm_a_bt_acc(os->grad.data(), m, n, bs->values.data(), k, as->grad.data());
      }
      if (gb) {
        bs->ensure_grad();
        mm_at_b_acc(as->values.data(), m, k, os->grad.data(), n, bs->grad.data());
      }
    }, out);
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.rank() != 2) fail("transpose: expects a rank-2 tensor");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = av[i * n + j];
  Tensor out = make_tensor({n, m}, std::move(v), "transpose");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, m, n] {
      as->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) as->grad[i * n + j] += os->grad[j * m + i];
    }, out);
  }
  return out;
}

Tensor Tape::softmax(const Tensor& a, std::size_t axis) {
  check_defined(a, "softmax");
  const Shape& sh = a.shape();
  if (axis >= sh.size()) fail("softmax: axis out of range for " + shape_str(sh));
  const std::size_t len = sh[axis];
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  std::vector<double> v(a.numel());
  auto av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = av[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, av[base + l * inner]);
      double denom = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(av[base + l * inner] - mx);
        v[base + l * inner] = e;
        denom += e;
      }
      for (std::size_t l = 0; l < len; ++l) v[base + l * inner] /= denom;
    }
  }
  Tensor out = make_tensor(sh, std::move(v), "softmax");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, outer, inner, len] {
      as->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            dot += os->grad[idx] * os->values[idx];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            as->grad[idx] += os->values[idx] * (os->grad[idx] - dot);
          }
        }
      }
    }, out);
  }
  return out;
}

// -- shape / indexing --------------------------------------------------------

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor out = make_tensor(std::move(shape), std::move(v), "reshape");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i];
    }, out);
  }
  return out;
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const std::int64_t> ids) {
  check_defined(table, "gather_rows");
  if (table.rank() != 2) fail("gather_rows: table must be rank 2");
  if (ids.empty()) fail("gather_rows: empty id list");
  const std::size_t v_rows = table.rows(), d = table.cols();
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  for (std::int64_t id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= v_rows) {
      fail("gather_rows: id " + std::to_string(id) + " out of range [0," +
           std::to_string(v_rows) + ")");
    }
  }
  std::vector<double> v(idx.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(v.data() + i * d, tv.data() + static_cast<std::size_t>(idx[i]) * d,
                d * sizeof(double));
  }
  Tensor out = make_tensor({idx.size(), d}, std::move(v), "gather_rows");
  if (track({&table})) {
    auto ts = table.s_;
    auto os = out.s_;
    record([ts, os, idx = std::move(idx), d] {
      ts->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = ts->grad.data() + static_cast<std::size_t>(idx[i]) * d;
        const double* src = os->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }, out);
  }
  return out;
}

Tensor Tape::gather_rows(const Tensor& table, const std::vector<std::int64_t>& ids) {
  return gather_rows(table, std::span<const std::int64_t>(ids));
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail("concat_cols: no operands");
  const std::size_t n = parts[0].defined() ? parts[0].rows() : 0;
  std::size_t width = 0;
  for (const Tensor& p : parts) {
    check_defined(p, "concat_cols");
    if (p.rank() != 2 || p.rows() != n) {
      fail("concat_cols: operands must be rank 2 with equal row counts");
    }
    width += p.cols();
  }
  std::vector<double> v(n * width);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t d = p.cols();
    auto pv = p.values();
    for (std::size_t i = 0; i < n; ++i) {
      std::memcpy(v.data() + i * width + off, pv.data() + i * d, d * sizeof(double));
    }
    off += d;
  }
  Tensor out = make_tensor({n, width}, std::move(v), "concat_cols");
  bool any = false;
  for (const Tensor& p : parts) any = any || p.grad_connected();
  if (grad_enabled_ && any) {
    std::vector<std::shared_ptr<detail::Storage>> srcs;
    std::vector<std::size_t> offsets;
    std::size_t o2 = 0;
    for (const Tensor& p : parts) {
      srcs.push_back(p.s_);
      offsets.push_back(o2);
      o2 += p.cols();
    }
    auto os = out.s_;
    record([srcs = std::move(srcs), offsets = std::move(offsets), os, n, width] {
      for (std::size_t k = 0; k < srcs.size(); ++k) {
        auto& s = srcs[k];
        if (!s->grad_connected) continue;
        s->ensure_grad();
        const std::size_t d = s->shape[1];
        for (std::size_t i = 0; i < n; ++i) {
          const double* src = os->grad.data() + i * width + offsets[k];
          double* dst = s->grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  return concat_cols(std::span<const Tensor>(parts));
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  check_defined(a, "slice_cols");
  if (a.rank() != 2) fail("slice_cols: expects a rank-2 tensor");
  if (!(c0 < c1 && c1 <= a.cols())) {
    fail("slice_cols: bad column range [" + std::to_string(c0) + "," + std::to_string(c1) +
         ") for " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows(), w = a.cols(), d = c1 - c0;
  std::vector<double> v(n * d);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(v.data() + i * d, av.data() + i * w + c0, d * sizeof(double));
  }
  Tensor out = make_tensor({n, d}, std::move(v), "slice_cols");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, n, w, d, c0] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = os->grad.data() + i * d;
        double* dst = as->grad.data() + i * w + c0;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }, out);
  }
  return out;
}

// -- row-structured helpers ----------------------------------------------------

Tensor Tape::scale_rows(const Tensor& a, const Tensor& s) {
  check_defined(a, "scale_rows");
  check_defined(s, "scale_rows");
  if (a.rank() != 2 || s.rank() != 2 || s.cols() != 1 || s.rows() != a.rows()) {
    fail("scale_rows: expects a (N x d) and s (N x 1)");
  }
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> v(n * d);
  auto av = a.values();
  auto sv = s.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = av[i * d + j] * sv[i];
  Tensor out = make_tensor({n, d}, std::move(v), "scale_rows");
  if (track({&a, &s})) {
    auto as = a.s_;
    auto ss = s.s_;
    auto os = out.s_;
    const bool ga = a.grad_connected(), gs = s.grad_connected();
    record([as, ss, os, n, d, ga, gs] {
      if (ga) {
        as->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            as->grad[i * d + j] += os->grad[i * d + j] * ss->values[i];
      }
      if (gs) {
        ss->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j)
            acc += os->grad[i * d + j] * as->values[i * d + j];
          ss->grad[i] += acc;
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::row_sum(const Tensor& a) {
  check_defined(a, "row_sum");
  if (a.rank() != 2) fail("row_sum: expects a rank-2 tensor");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> v(n, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += av[i * d + j];
    v[i] = acc;
  }
  Tensor out = make_tensor({n, 1}, std::move(v), "row_sum");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, n, d] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) as->grad[i * d + j] += os->grad[i];
    }, out);
  }
  return out;
}

Tensor Tape::mean_rows(const Tensor& a) {
  check_defined(a, "mean_rows");
  if (a.rank() != 2) fail("mean_rows: expects a rank-2 tensor");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> v(d, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[j] += av[i * d + j];
  for (std::size_t j = 0; j < d; ++j) v[j] /= static_cast<double>(n);
  Tensor out = make_tensor({1, d}, std::move(v), "mean_rows");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, n, d] {
      as->ensure_grad();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) as->grad[i * d + j] += os->grad[j] * inv;
    }, out);
  }
  return out;
}

Tensor Tape::sum_mid(const Tensor& a) {
  check_defined(a, "sum_mid");
  if (a.rank() != 3) fail("sum_mid: expects a rank-3 tensor");
  const std::size_t n = a.shape()[0], k = a.shape()[1], d = a.shape()[2];
  std::vector<double> v(n * d, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] += av[(i * k + l) * d + j];
  Tensor out = make_tensor({n, d}, std::move(v), "sum_mid");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os, n, k, d] {
      as->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t j = 0; j < d; ++j)
            as->grad[(i * k + l) * d + j] += os->grad[i * d + j];
    }, out);
  }
  return out;
}

// -- reductions / losses -------------------------------------------------------

Tensor Tape::sum(const Tensor& a) {
  check_defined(a, "sum");
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor out = make_tensor({1}, {acc}, "sum");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[0];
    }, out);
  }
  return out;
}

Tensor Tape::abs_sum(const Tensor& a) {
  check_defined(a, "abs_sum");
  double acc = 0.0;
  for (double x : a.values()) acc += std::abs(x);
  Tensor out = make_tensor({1}, {acc}, "abs_sum");
  if (track({&a})) {
    auto as = a.s_;
    auto os = out.s_;
    record([as, os] {
      as->ensure_grad();
      for (std::size_t i = 0; i < as->grad.size(); ++i) {
        const double x = as->values[i];
        if (x > 0.0) {
          as->grad[i] += os->grad[0];
        } else if (x < 0.0) {
          as->grad[i] -= os->grad[0];
        }
      }
    }, out);
  }
  return out;
}

Tensor Tape::bce(const Tensor& p, const Tensor& y) {
  check_defined(p, "bce");
  check_defined(y, "bce");
  if (p.numel() != y.numel()) fail("bce: prediction/label length mismatch");
  const std::size_t n = p.numel();
  auto pv = p.values();
  auto yv = y.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(pv[i], kBceEps, 1.0 - kBceEps);
    acc -= yv[i] * std::log(pc) + (1.0 - yv[i]) * std::log(1.0 - pc);
  }
  acc /= static_cast<double>(n);
  Tensor out = make_tensor({1}, {acc}, "bce");
  if (track({&p})) {
    auto ps = p.s_;
    auto ys = y.s_;
    auto os = out.s_;
    record([ps, ys, os, n] {
      ps->ensure_grad();
      const double g = os->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double pi = ps->values[i];
        if (pi <= kBceEps || pi >= 1.0 - kBceEps) continue;  // clamped region
        ps->grad[i] += g * (pi - ys->values[i]) / (pi * (1.0 - pi));
      }
    }, out);
  }
  return out;
}

}  // namespace croc
