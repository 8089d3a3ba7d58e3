#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msconv {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint32_t { kF32 = 0, kF64 = 1 };

const char* dtype_name(DType dtype);

struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

// Reference into a differentiation tape. Empty when the tensor is detached.
struct GradRef {
  Tape* tape = nullptr;
  int node = -1;
  explicit operator bool() const { return tape != nullptr; }
};

// Dense N x C x H x W array. Values are immutable once constructed; copies
// share the buffer. Storage is always double; kF32 tensors hold values that
// have been rounded to single precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::kF64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::kF64);

  static Tensor zeros(Shape shape, DType dtype = DType::kF64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kF64);
  static Tensor scalar(double value, DType dtype = DType::kF64);

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_ == nullptr; }

  std::span<const double> data() const;
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  double item() const;

  const GradRef& grad_ref() const { return ref_; }
  bool requires_grad() const { return static_cast<bool>(ref_); }

  // Same values with the gradient record dropped.
  Tensor detach() const;
  Tensor to(DType dtype) const;

 private:
  friend class Tape;
  friend Tensor attach(Tensor t, GradRef ref);

  Shape shape_;
  DType dtype_ = DType::kF64;
  std::shared_ptr<const std::vector<double>> data_;
  GradRef ref_;
};

Tensor attach(Tensor t, GradRef ref);

double round_to(DType dtype, double v);

// Trainable tensor with a gradient accumulator. Copies alias the same storage
// and therefore carry the same share_id.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor init);

  bool defined() const { return storage_ != nullptr; }
  std::uint64_t share_id() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t numel() const { return value().numel(); }

  void assign(Tensor values);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

 private:
  struct Storage {
    std::uint64_t id = 0;
    Tensor value;
    std::vector<double> grad;
  };
  std::shared_ptr<Storage> storage_;
};

// Deduplicates by share_id, keeping first occurrence order.
std::vector<Parameter> unique_parameters(std::span<const Parameter> params);

struct NamedParameter {
  std::string name;
  Parameter param;
};

}  // namespace msconv
