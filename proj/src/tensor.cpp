#include "msconv/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace msconv {

const char* dtype_name(DType dtype) { return dtype == DType::kF32 ? "float32" : "float64"; }

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

double round_to(DType dtype, double v) {
  return dtype == DType::kF32 ? static_cast<double>(static_cast<float>(v)) : v;
}

namespace {

void check_shape(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw ShapeError("negative tensor extent " + s.str());
  }
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(shape),
      dtype_(dtype),
      data_(std::make_shared<const std::vector<double>>(
          (check_shape(shape), static_cast<std::size_t>(shape.numel())), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype) : shape_(shape), dtype_(dtype) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("buffer of " + std::to_string(values.size()) + " elements does not fit shape " +
                     shape.str());
  }
  for (double& v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor constructor");
    v = round_to(dtype, v);
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(shape, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  check_shape(shape);
  return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), value), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1, 1, 1, 1}, value, dtype); }

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  if (n < 0 || n >= shape_.n || c < 0 || c >= shape_.c || h < 0 || h >= shape_.h || w < 0 ||
      w >= shape_.w) {
    throw ShapeError("index out of range for shape " + shape_.str());
  }
  return (*data_)[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.ref_ = {};
  return t;
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return detach();
  return Tensor(shape_, std::vector<double>(data().begin(), data().end()), dtype);
}

Tensor attach(Tensor t, GradRef ref) {
  t.ref_ = ref;
  return t;
}

namespace {
std::atomic<std::uint64_t> next_share_id{1};
}

Parameter::Parameter(Tensor init) : storage_(std::make_shared<Storage>()) {
  storage_->id = next_share_id.fetch_add(1);
  storage_->value = init.detach();
  storage_->grad.assign(static_cast<std::size_t>(init.numel()), 0.0);
}

std::uint64_t Parameter::share_id() const {
  if (!storage_) throw std::logic_error("undefined parameter");
  return storage_->id;
}

const Tensor& Parameter::value() const {
  if (!storage_) throw std::logic_error("undefined parameter");
  return storage_->value;
}

void Parameter::assign(Tensor values) {
  if (values.shape() != value().shape()) {
    throw ShapeError("parameter assign " + values.shape().str() + " into " + value().shape().str());
  }
  storage_->value = values.to(storage_->value.dtype());
}

std::span<double> Parameter::grad() {
  if (!storage_) throw std::logic_error("undefined parameter");
  return storage_->grad;
}

std::span<const double> Parameter::grad() const {
  if (!storage_) throw std::logic_error("undefined parameter");
  return storage_->grad;
}

void Parameter::zero_grad() { std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0); }

void Parameter::accumulate_grad(std::span<const double> g) {
  auto& acc = storage_->grad;
  if (g.size() != acc.size()) throw ShapeError("gradient size mismatch for parameter");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

std::vector<Parameter> unique_parameters(std::span<const Parameter> params) {
  std::vector<Parameter> out;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& p : params) {
    if (p.defined() && seen.insert(p.share_id()).second) out.push_back(p);
  }
  return out;
}

}  // namespace msconv
