#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace croc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation produces NaN/Inf, or consumes a NaN gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by a backward pass
  bool requires_grad = false;
  bool grad_connected = false;  // produced by a recorded op or a grad leaf
  std::uint64_t id = 0;

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

/// Dense row-major numeric array. Cheap to copy (shared storage); values are
/// immutable under tape ops. mutable_values() exists for the optimizer and
/// test harnesses, which mutate parameters between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // shape[0]
  std::size_t cols() const;  // shape[1] for rank >= 2, else 1

  std::span<const double> values() const;
  std::span<double> mutable_values();
  std::span<const double> grad() const;  // empty when no backward has touched it
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  bool grad_connected() const;
  std::uint64_t id() const;

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  /// Value copy with no gradient linkage.
  Tensor detach() const;

  detail::Storage* storage() const { return s_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
  std::shared_ptr<detail::Storage> s_;
  friend class Tape;
};

/// Records primitive ops in execution order; backward() replays them in
/// reverse, accumulating gradients into every grad-connected input. One tape
/// per training step, one tape per thread.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  static Tape no_grad() { return Tape(false); }

  // -- elementwise / activation --
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_const(const Tensor& a, double c);
  Tensor sqrt(const Tensor& a);

  // -- linear algebra --
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  /// Softmax along `axis`: summing the result over `axis` yields 1 for every
  /// setting of the remaining indices. Stabilized by max subtraction.
  Tensor softmax(const Tensor& a, std::size_t axis);

  // -- shape / indexing --
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids);
  Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& ids);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);

  // -- row-structured helpers --
  Tensor scale_rows(const Tensor& a, const Tensor& s);  // a: N x d, s: N x 1
  Tensor row_sum(const Tensor& a);                      // N x d -> N x 1
  Tensor mean_rows(const Tensor& a);                    // N x d -> 1 x d
  Tensor sum_mid(const Tensor& a);                      // N x K x d -> N x d

  // -- reductions / losses --
  Tensor sum(const Tensor& a);
  Tensor abs_sum(const Tensor& a);  // l1 norm; subgradient at 0 is 0
  Tensor bce(const Tensor& p, const Tensor& y);

  /// Reverse replay from a scalar loss. Gradients accumulate into leaves;
  /// callers zero parameter grads between steps. Consumes the tape: a second
  /// call without recording new ops is an error.
  void backward(const Tensor& loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t num_records() const { return records_.size(); }
  void reset();

  static constexpr double kBceEps = 1e-12;

 private:
  struct Record {
    std::function<void()> pull;
    detail::Storage* out = nullptr;  // skip the pull when this grad stays empty
  };

  Tensor make_tensor(Shape shape, std::vector<double> values, const char* op);
  bool track(std::initializer_list<const Tensor*> inputs) const;
  void record(std::function<void()> pull, const Tensor& out);
  static void check_defined(const Tensor& t, const char* op);

  std::vector<Record> records_;
  std::unordered_set<const detail::Storage*> outputs_;
  bool grad_enabled_ = true;
  bool spent_ = false;
};

}  // namespace croc
