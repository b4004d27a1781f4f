#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ppasr/rng.hpp"

namespace ppasr {

// Dense float32 array with an optional gradient buffer. Tensor is a handle:
// copies share the same storage. The gradient buffer exists exactly when
// requires_grad is set and is zero-initialized.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, double stddev, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  // rank-2 accessors
  int rows() const;
  int cols() const;
  int64_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double at(int64_t i) const;
  double item() const;  // single-element tensors only

  bool requires_grad() const;
  void set_requires_grad(bool on);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  // Same storage, detached from autograd (never requires grad).
  Tensor detach_alias() const;
  // Deep copy, leaf tensor.
  Tensor clone(bool requires_grad = false) const;
  void copy_from(const Tensor& src);  // in-place data copy, shapes must match

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  std::string shape_str() const;

  // Throws std::runtime_error naming `what` if any element is NaN/Inf.
  void check_finite(const char* what) const;

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
  friend class Tape;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; ops record backward steps while one is active. Destruction
// restores the previously active tape (tapes nest like scopes).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::function<void()> backward_step);
  size_t size() const { return steps_.size(); }

  // Seeds grad(loss) = 1 and replays recorded steps in reverse. `loss` must
  // be a single-element tensor that participated in this tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace ppasr
