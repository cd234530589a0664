#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "octgan/errors.hpp"
#include "octgan/latent_edit.hpp"
#include "octgan/metrics.hpp"
#include "octgan/model.hpp"
#include "octgan/phantom.hpp"
#include "octgan/study.hpp"
#include "octgan/superres.hpp"
#include "octgan/wavelet.hpp"

namespace py = pybind11;
using namespace octgan;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Raster to_raster(const FloatArray &a) {
  if (a.ndim() != 2) {
    throw ShapeError("expected a 2-D image array");
  }
  return Raster(a.shape(0), a.shape(1), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Raster &r) {
  FloatArray out({r.rows(), r.cols()});
  std::copy(r.data().begin(), r.data().end(), out.mutable_data());
  return out;
}

std::vector<Raster> to_rasters(const FloatArray &a) {
  if (a.ndim() != 3) {
    throw ShapeError("expected an (N, H, W) image stack");
  }
  std::vector<Raster> out;
  const auto plane = a.shape(1) * a.shape(2);
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    out.emplace_back(a.shape(1), a.shape(2), std::vector<float>(a.data() + i * plane, a.data() + (i + 1) * plane));
  }
  return out;
}

FloatArray stack(const std::vector<Raster> &rs) {
  if (rs.empty()) {
    return FloatArray(std::vector<py::ssize_t>{0, 0, 0});
  }
  FloatArray out({static_cast<py::ssize_t>(rs.size()), rs[0].rows(), rs[0].cols()});
  auto *p = out.mutable_data();
  for (const auto &r : rs) {
    p = std::copy(r.data().begin(), r.data().end(), p);
  }
  return out;
}

torch::Tensor image_tensor(const DoubleArray &a) {
  if (a.ndim() != 2 || a.shape(0) % 2 || a.shape(1) % 2) {
    throw ShapeError("expected a 2-D array with even sides");
  }
  return torch::from_blob(const_cast<double *>(a.data()), {1, 1, a.shape(0), a.shape(1)}, torch::kFloat64).clone();
}

DoubleArray plane(const torch::Tensor &t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  DoubleArray out({c.size(-2), c.size(-1)});
  std::copy(c.data_ptr<double>(), c.data_ptr<double>() + c.numel(), out.mutable_data());
  return out;
}

// Thin stateful handle: the generator plus its cached directions.
struct Gan {
  GanModel model;
  std::vector<latent::LatentDirection> dirs;
  latent::LayerRange range{0, 0};

  const std::vector<latent::LatentDirection> &directions(int64_t lo, int64_t hi) {
    if (hi < 0) hi = model.config.num_ws();
    if (dirs.empty() || range.lo != lo || range.hi != hi) {
      range = {lo, hi};
      dirs = latent::factorize(model.generator, range);
    }
    return dirs;
  }
};

} // namespace

PYBIND11_MODULE(_octgan, m) {
  m.doc() = "Wavelet style GAN toolkit for anterior-segment OCT B-scans.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("dwt2", [](const DoubleArray &x) {
    const auto b = wavelet::dwt2(image_tensor(x));
    return py::make_tuple(plane(b.ll), plane(b.lh), plane(b.hl), plane(b.hh));
  }, "Orthonormal Haar analysis: (ll, lh, hl, hh).", py::arg("image"));
  m.def("iwt2", [](const DoubleArray &ll, const DoubleArray &lh, const DoubleArray &hl, const DoubleArray &hh) {
    auto band = [](const DoubleArray &a) {
      return torch::from_blob(const_cast<double *>(a.data()), {1, 1, a.shape(0), a.shape(1)}, torch::kFloat64).clone();
    };
    return plane(wavelet::iwt2({band(ll), band(lh), band(hl), band(hh)}));
  }, py::arg("ll"), py::arg("lh"), py::arg("hl"), py::arg("hh"));

  m.def("phantoms", [](int64_t n, int64_t size, uint64_t seed) {
    phantom::DatasetSpec spec;
    spec.n = n;
    spec.size = size;
    return stack(phantom::render_dataset(spec, seed).rasters());
  }, "Render n phantom B-scans as an (n, size, size) float array.", py::arg("n"), py::arg("size") = 64,
        py::arg("seed") = 0);

  m.def("frechet_distance", [](const Eigen::VectorXd &mu1, const Eigen::MatrixXd &s1, const Eigen::VectorXd &mu2,
                               const Eigen::MatrixXd &s2) {
    return metrics::frechet_distance({mu1, s1, 2}, {mu2, s2, 2});
  }, py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"), py::arg("sigma2"));
  m.def("fid", [](const FloatArray &a, const FloatArray &b, uint64_t seed) {
    metrics::EmbedderSpec spec;
    spec.seed = seed;
    return metrics::fid(to_rasters(a), to_rasters(b), metrics::FeatureEmbedder(spec));
  }, "FID under the fixed random-conv embedder.", py::arg("set_a"), py::arg("set_b"), py::arg("seed") = 0);
  m.def("perceptual_distance", [](const FloatArray &a, const FloatArray &b) {
    return metrics::perceptual_distance(to_raster(a), to_raster(b));
  }, py::arg("a"), py::arg("b"));

  m.def("binomial_test", &study::binomial_test, py::arg("k"), py::arg("n"), py::arg("p0") = 0.5);
  m.def("fleiss_kappa", &study::fleiss_kappa, py::arg("counts"));
  m.def("score_rater", [](const std::vector<std::string> &truth, const std::vector<std::string> &answers) {
    if (truth.size() != answers.size()) {
      throw ParameterError("truth and answers differ in length");
    }
    std::vector<study::Truth> t;
    study::Responses r;
    for (size_t k = 0; k < truth.size(); ++k) {
      t.push_back(study::truth_from_string(truth[k]));
      r[static_cast<int64_t>(k)] = study::truth_from_string(answers[k]);
    }
    return study::score_rater(t, r, "rater").to_json().dump();
  }, "Rater report as a JSON string.", py::arg("truth"), py::arg("answers"));

  py::class_<Gan>(m, "Generator")
      .def(py::init([](const std::filesystem::path &path) { return Gan{load_gan_model(path), {}, {0, 0}}; }),
           py::arg("checkpoint"))
      .def_property_readonly("resolution", [](const Gan &g) { return g.model.config.resolution; })
      .def_property_readonly("num_ws", [](const Gan &g) { return g.model.config.num_ws(); })
      .def("render", [](Gan &g, uint64_t seed, double psi) { return to_array(render_seed(g.model, seed, psi)); },
           py::arg("seed"), py::arg("psi") = 1.0)
      .def("eigenvalues", [](Gan &g, int64_t lo, int64_t hi) {
        std::vector<double> out;
        for (const auto &d : g.directions(lo, hi)) out.push_back(d.eigenvalue);
        return out;
      }, py::arg("lo") = 0, py::arg("hi") = -1)
      .def("edit", [](Gan &g, uint64_t seed, int64_t rank, double alpha, double psi, int64_t lo, int64_t hi) {
        const auto &dirs = g.directions(lo, hi);
        if (rank < 0 || rank >= static_cast<int64_t>(dirs.size())) {
          throw ParameterError("rank out of range");
        }
        const auto ws = latent_for_seed(g.model, seed, psi);
        return to_array(render_ws(g.model, latent::apply_edit(ws, dirs[static_cast<size_t>(rank)], alpha), seed));
      }, py::arg("seed"), py::arg("rank"), py::arg("alpha"), py::arg("psi") = 1.0, py::arg("lo") = 0,
           py::arg("hi") = -1);

  m.def("upsample", [](const FloatArray &image, int64_t factor, const std::string &kind) {
    return to_array(sr::upsample_classical(to_raster(image), factor, kind));
  }, py::arg("image"), py::arg("factor") = 2, py::arg("kind") = "bicubic");
  m.def("sr_upscale", [](const std::filesystem::path &checkpoint, const FloatArray &image) {
    return to_array(sr::sr_upscale(sr::load_sr_model(checkpoint), to_raster(image)));
  }, py::arg("checkpoint"), py::arg("image"));

  m.def("run_cli", [](const std::vector<std::string> &args) {
    std::vector<std::string> argv{"octgan"};
    argv.insert(argv.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code = 0;
    {
      py::gil_scoped_release release;
      code = cli::run_cli(argv, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, "Run the command line in-process; returns (exit_code, stdout, stderr).", py::arg("args"));
}
