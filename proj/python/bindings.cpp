#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sar2rgb/cli.hpp"
#include "sar2rgb/cold.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/imagery.hpp"
#include "sar2rgb/metrics.hpp"
#include "sar2rgb/schedule.hpp"

namespace py = pybind11;
using namespace sar2rgb;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) or (H, W) arrays map onto Image.
Image to_image(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ConfigError("expected a (C, H, W) or (H, W) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2));
  const int w = static_cast<int>(a.shape(a.ndim() - 1));
  Image img(c, h, w);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

FloatArray from_image(const Image& img) {
  FloatArray out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

FeatureMatrix to_features(const DoubleArray& a) {
  if (a.ndim() != 2) throw ConfigError("features must be an (N, d) array");
  FeatureMatrix m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = a.at(i, j);
  return m;
}

py::object to_python(const cli::Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

cli::Json from_python(const py::object& o) {
  return cli::Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SAR-to-RGB diffusion core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("linear", &make_linear_schedule, py::arg("steps") = 1000, py::arg("beta_start") = 1e-4,
                  py::arg("beta_end") = 0.02)
      .def_static("from_betas", &NoiseSchedule::from_betas)
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def_property_readonly("betas", &NoiseSchedule::betas)
      .def_property_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
      .def("alpha_bar", &NoiseSchedule::alpha_bar)
      .def("beta_tilde", &NoiseSchedule::beta_tilde);

  m.def("preprocess_sar", [](const FloatArray& a) { return from_image(preprocess_sar(to_image(a))); });
  m.def("preprocess_rgb", [](const FloatArray& a) { return from_image(preprocess_rgb(to_image(a))); });
  m.def("to_unit_range", [](const FloatArray& a) { return from_image(to_unit_range(to_image(a))); });

  m.def(
      "synthetic_pair",
      [](std::uint64_t seed, int size, int region_count, double noise_sigma, std::optional<int> target_label) {
        SyntheticSceneSpec s;
        s.seed = seed;
        s.size = size;
        s.region_count = region_count;
        s.noise_sigma = noise_sigma;
        s.target_label = target_label;
        const auto scene = generate_synthetic_pair(s);
        py::dict d;
        d["sar"] = from_image(scene.pair.sar);
        d["rgb"] = from_image(scene.pair.rgb);
        d["label"] = scene.pair.class_label;
        return d;
      },
      py::arg("seed") = 0, py::arg("size") = 32, py::arg("region_count") = 3, py::arg("noise_sigma") = 0.0,
      py::arg("target_label") = std::nullopt);

  m.def(
      "degrade",
      [](const DoubleArray& x, const DoubleArray& z, int t, const NoiseSchedule& sched) {
        if (x.ndim() != 1 || z.ndim() != 1 || x.size() != z.size()) throw ConfigError("degrade takes equal 1-D arrays");
        nn::Matrix<double> xm = Eigen::Map<const nn::Matrix<double>>(x.data(), 1, x.size());
        nn::Matrix<double> zm = Eigen::Map<const nn::Matrix<double>>(z.data(), 1, z.size());
        const auto out = degrade<double>(xm, zm, t, sched);
        return std::vector<double>(out.data(), out.data() + out.size());
      },
      py::arg("x"), py::arg("z"), py::arg("t"), py::arg("schedule"));

  m.def("mae", [](const FloatArray& a, const FloatArray& b) { return mae(to_image(a), to_image(b)); });
  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b, double r) { return psnr(to_image(a), to_image(b), r); },
      py::arg("a"), py::arg("b"), py::arg("data_range") = 1.0);
  m.def(
      "ssim",
      [](const FloatArray& a, const FloatArray& b, double r) {
        SsimConfig c;
        c.data_range = r;
        return ssim(to_image(a), to_image(b), c);
      },
      py::arg("a"), py::arg("b"), py::arg("data_range") = 1.0);
  m.def("fid", [](const DoubleArray& a, const DoubleArray& b) { return fid(to_features(a), to_features(b)); });

  m.def("command_names", &cli::command_names);
  m.def("command_defaults", [](const std::string& c) { return to_python(cli::command_defaults(c)); });
  m.def(
      "resolve_config",
      [](const std::string& command, std::optional<std::string> preset, py::object file,
         std::map<std::string, std::string> flags) {
        std::optional<cli::Json> f;
        if (!file.is_none()) f = from_python(file);
        return to_python(cli::resolve_config(command, preset, f, flags));
      },
      py::arg("command"), py::arg("preset") = std::nullopt, py::arg("config") = py::none(),
      py::arg("flags") = std::map<std::string, std::string>{});
  m.def(
      "run_command",
      [](const std::string& command, py::object config, const std::string& out) {
        const cli::Json cfg = from_python(config);
        cli::Json report;
        {
          py::gil_scoped_release release;
          report = cli::run_command(command, cfg, out);
        }
        return to_python(report);
      },
      py::arg("command"), py::arg("config"), py::arg("out"));
}
