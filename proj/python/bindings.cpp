#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msconv/complexity.hpp"
#include "msconv/networks.hpp"
#include "msconv/ops.hpp"
#include "msconv/pilot_equiv.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/verify.hpp"

namespace py = pybind11;
using namespace msconv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw ShapeError("expected a 4-d (N, C, H, W) array");
  const Shape s{a.shape(0), a.shape(1), a.shape(2), a.shape(3)};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// Config dicts cross the boundary as JSON text.
nlohmann::json from_py(const py::dict& d) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(d).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-scale convolution toolkit for single-image super-resolution";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

  m.attr("FLOP_CONVENTION") = kFlopConvention;

  m.def(
      "conv2d",
      [](const Array& x, const Array& w, std::optional<Array> bias, int stride, int dilation, int padding) {
        std::optional<Tensor> b;
        if (bias) {
          const Tensor flat = to_tensor(bias->reshape({1L, static_cast<long>(bias->size()), 1L, 1L}));
          b = flat;
        }
        return to_array(conv2d(to_tensor(x), to_tensor(w), b, {stride, dilation, padding}));
      },
      py::arg("x"), py::arg("w"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("dilation") = 1,
      py::arg("padding") = 0);
  m.def("avg_pool2", [](const Array& x) { return to_array(avg_pool2(to_tensor(x))); });
  m.def("nearest_subsample2", [](const Array& x) { return to_array(nearest_subsample2(to_tensor(x))); });
  m.def("nearest_upsample2", [](const Array& x) { return to_array(nearest_upsample2(to_tensor(x))); });
  m.def("pixel_shuffle", [](const Array& x, int r) { return to_array(pixel_shuffle(to_tensor(x), r)); });
  m.def("bicubic_resize", [](const Array& x, double scale) { return to_array(bicubic_resize(to_tensor(x), scale)); });
  m.def(
      "psnr_y", [](const Array& sr, const Array& hr, int border) { return psnr_y(to_tensor(sr), to_tensor(hr), border); },
      py::arg("sr"), py::arg("hr"), py::arg("border") = 0);
  m.def("rearrangement_identity_error", [](const Array& w, const Array& x) {
    return check_rearrangement_identity(Parameter(to_tensor(w)), to_tensor(x));
  });

  py::class_<Network>(m, "Network")
      .def(py::init([](const py::dict& cfg) { return build_network(model_config_from_json(from_py(cfg))); }),
           py::arg("config"))
      .def_property_readonly("config", [](const Network& n) { return to_py(to_json(n.config())); })
      .def_property_readonly("input_multiple", &Network::input_multiple)
      .def("count_params", [](const Network& n) { return count_params(n); })
      .def("count_flops", [](const Network& n, std::int64_t h, std::int64_t w) { return count_flops(n, h, w); })
      .def("analyze",
           [](const Network& n, std::int64_t h, std::int64_t w) {
             return to_py(nlohmann::json::parse(format_json(analyze(n, h, w, "net"))));
           })
      .def("forward_sr", [](const Network& n, const Array& lr) { return to_array(forward_sr_padded(n, to_tensor(lr))); });

  m.def(
      "calibrate_input_size",
      [](const Network& n, double target, std::int64_t align) {
        const InputSize s = calibrate_input_size(n, target, align);
        return py::make_tuple(s.h, s.w);
      },
      py::arg("net"), py::arg("target_flops"), py::arg("align") = 1);

  m.def("verify", [](const std::string& suite) {
    py::list out;
    for (const CheckResult& r : run_verify_suite(suite)) out.append(py::make_tuple(r.suite, r.name, r.ok, r.detail));
    return out;
  });
}
