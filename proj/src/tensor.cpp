#include "ppasr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ppasr {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

int64_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  node->shape = std::move(shape);
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, float stddev, Rng& rng,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.node_->data) v = rng.normal_f(stddev);
  return t;
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

int Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows(): tensor is not rank-2, shape " + shape_str());
  return node_->shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols(): tensor is not rank-2, shape " + shape_str());
  return node_->shape[1];
}

int64_t Tensor::size() const { return static_cast<int64_t>(node_->data.size()); }

std::span<float> Tensor::data() { return {node_->data.data(), node_->data.size()}; }
std::span<const float> Tensor::data() const {
  return {node_->data.data(), node_->data.size()};
}

float Tensor::at(int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

float Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item(): tensor has " + std::to_string(size()) +
                                " elements, expected 1");
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->data.size(), 0.0f);
  } else {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

std::span<float> Tensor::grad() {
  if (!requires_grad()) throw std::runtime_error("grad(): tensor does not require grad");
  return {node_->grad.data(), node_->grad.size()};
}

std::span<const float> Tensor::grad() const {
  if (!requires_grad()) throw std::runtime_error("grad(): tensor does not require grad");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  if (requires_grad()) node_->grad.assign(node_->data.size(), 0.0f);
}

Tensor Tensor::detach_alias() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;  // value snapshot; autograd must not write through
  return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = from_data(node_->shape, node_->data, requires_grad);
  return t;
}

void Tensor::copy_from(const Tensor& src) {
  if (src.node_->shape != node_->shape) {
    throw std::invalid_argument("copy_from: shape mismatch " + shape_str() + " vs " +
                                src.shape_str());
  }
  node_->data = src.node_->data;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < node_->shape.size(); ++i) {
    if (i) os << 'x';
    os << node_->shape[i];
  }
  os << ']';
  return os.str();
}

void Tensor::check_finite(const char* what) const {
  for (float v : node_->data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value in ") + what);
    }
  }
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                loss.shape_str());
  }
  if (!loss.requires_grad()) {
    throw std::runtime_error("backward: loss does not participate in this tape");
  }
  loss.node_->grad[0] += 1.0f;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace ppasr
