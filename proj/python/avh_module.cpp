// Python bindings. Meshes cross the boundary as numpy arrays; grids as (H, W, C) float32 arrays.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "avh/baking.hpp"
#include "avh/confidence.hpp"
#include "avh/decoder.hpp"
#include "avh/inpaint.hpp"
#include "avh/io.hpp"
#include "avh/pipeline.hpp"
#include "avh/pose_select.hpp"
#include "avh/registration.hpp"
#include "avh/renderer.hpp"
#include "avh/skinning.hpp"

namespace py = pybind11;
using namespace avh;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

FloatGrid to_grid(const F32Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("expected an (H, W) or (H, W, C) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  FloatGrid g(w, h, c);
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

F32Array from_grid(const FloatGrid& g) {
  F32Array a({g.height, g.width, g.channels});
  std::copy(g.data.begin(), g.data.end(), a.mutable_data());
  return a;
}

std::vector<std::uint8_t> to_mask(const U8Array& a) { return {a.data(), a.data() + a.size()}; }

Theta to_theta(const std::vector<double>& v) {
  if (v.size() != static_cast<std::size_t>(kPoseValues)) {
    throw std::invalid_argument("pose needs " + std::to_string(kPoseValues) + " angles");
  }
  Theta t{};
  std::copy(v.begin(), v.end(), t.begin());
  return t;
}

Eigen::MatrixXd vertex_matrix(const std::vector<Vec3>& v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return m;
}

std::vector<Vec3> vertex_list(const Eigen::MatrixXd& m) {
  if (m.cols() != 3) throw std::invalid_argument("expected an (N, 3) array");
  std::vector<Vec3> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m.row(i).transpose();
  return v;
}

}  // namespace

PYBIND11_MODULE(_avh, m) {
  m.doc() = "Animatable virtual human pipeline: baking, confidence, inpainting, frame selection, decoder.";

  py::register_exception<MeshError>(m, "MeshError", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);

  py::class_<TriMesh>(m, "TriMesh")
      .def(py::init<>())
      .def_property(
          "vertices", [](const TriMesh& t) { return vertex_matrix(t.vertices); },
          [](TriMesh& t, const Eigen::MatrixXd& v) { t.vertices = vertex_list(v); })
      .def_property(
          "faces",
          [](const TriMesh& t) {
            Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(static_cast<Eigen::Index>(t.faces.size()), 3);
            for (std::size_t i = 0; i < t.faces.size(); ++i) {
              for (int k = 0; k < 3; ++k) f(static_cast<Eigen::Index>(i), k) = t.faces[i][k];
            }
            return f;
          },
          [](TriMesh& t, const Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>& f) {
            t.faces.resize(static_cast<std::size_t>(f.rows()));
            for (Eigen::Index i = 0; i < f.rows(); ++i) t.faces[static_cast<std::size_t>(i)] = {f(i, 0), f(i, 1), f(i, 2)};
          })
      .def_property_readonly("vertex_normals", [](const TriMesh& t) { return vertex_matrix(t.vertex_normals); })
      .def_property_readonly("has_uvs", &TriMesh::has_uvs)
      .def("validate", &TriMesh::validate)
      .def("__repr__", [](const TriMesh& t) {
        return "<TriMesh " + std::to_string(t.vertices.size()) + " vertices, " + std::to_string(t.faces.size()) +
               " faces>";
      });

  m.def("compute_normals", &compute_normals, py::arg("mesh"));
  m.def("read_obj", [](const std::filesystem::path& p) { return read_obj(p); }, py::arg("path"));
  m.def("write_obj", [](const TriMesh& mesh, const std::filesystem::path& p) { write_obj(mesh, p); }, py::arg("mesh"),
        py::arg("path"));
  m.def("read_pfm", [](const std::filesystem::path& p) { return from_grid(read_pfm(p)); }, py::arg("path"));
  m.def("write_pfm", [](const F32Array& a, const std::filesystem::path& p) { write_pfm(to_grid(a), p); },
        py::arg("grid"), py::arg("path"));
  m.def("subdivide", &subdivide, py::arg("mesh"), py::arg("levels") = 2);
  m.def(
      "apply_displacement",
      [](const TriMesh& mesh, const F32Array& d) { return apply_displacement(mesh, to_grid(d)); }, py::arg("mesh"),
      py::arg("displacement"));

  py::class_<SurfaceAccel>(m, "SurfaceAccel")
      .def(py::init<TriMesh>(), py::arg("mesh"))
      .def(
          "ray_cast",
          [](const SurfaceAccel& a, const Vec3& o, const Vec3& d, double max_dist) -> py::object {
            const auto h = a.ray_cast(o, d, max_dist);
            if (!h) return py::none();
            return py::make_tuple(h->face_index, h->distance, h->position);
          },
          py::arg("origin"), py::arg("direction"), py::arg("max_dist"),
          "Nearest hit as (face, distance, position), or None.")
      .def(
          "closest_distance",
          [](const SurfaceAccel& a, const Vec3& p) { return std::sqrt(a.closest_point(p).distance_sq); },
          py::arg("point"))
      .def_property_readonly("self_hit_epsilon", &SurfaceAccel::self_hit_epsilon);

  m.def(
      "find_match",
      [](const Vec3& r, const Vec3& n, const SurfaceAccel& scan, double max_dist) -> py::object {
        const auto match = find_match(r, n, scan, max_dist);
        if (!match) return py::none();
        return py::dict(py::arg("face") = match->target_face, py::arg("distance") = match->distance,
                        py::arg("point") = match->target_point,
                        py::arg("positive") = match->polarity == Polarity::positive);
      },
      py::arg("r"), py::arg("n"), py::arg("scan"), py::arg("max_dist"));

  m.def("face_visibility", &face_visibility, py::arg("accel"), py::arg("samples") = 64);
  m.def("normal_match_score", &normal_match_score, py::arg("n"), py::arg("m"));
  m.def("inverse_distance_score", py::overload_cast<double, double, double>(&inverse_distance_score),
        py::arg("distance"), py::arg("fit_diagonal"), py::arg("clip_fraction") = 1.0 / 50.0);
  m.def(
      "frame_quality",
      [](const F32Array& kappa) {
        const FrameQuality q = frame_quality(to_grid(kappa));
        return py::make_tuple(q.mean_confidence, q.keep);
      },
      py::arg("kappa"), "Mean confidence and the keep decision.");
  m.attr("FRAME_QUALITY_THRESHOLD") = kFrameQualityThreshold;

  m.def(
      "fmm_inpaint",
      [](const F32Array& image, const U8Array& known, double radius) {
        InpaintOptions o;
        o.radius = radius;
        return from_grid(fmm_inpaint(to_grid(image), to_mask(known), o));
      },
      py::arg("image"), py::arg("known"), py::arg("radius") = 3.0);

  m.def(
      "select_frames",
      [](const std::vector<std::vector<double>>& poses, int f, int validation, std::uint64_t seed) {
        std::vector<Theta> thetas;
        for (const auto& p : poses) thetas.push_back(to_theta(p));
        const FrameSelection s = select_frames(thetas, f, validation, {.seed = seed});
        return py::make_tuple(s.training, s.validation);
      },
      py::arg("poses"), py::arg("f"), py::arg("validation") = 0, py::arg("seed") = 0,
      "Training and validation frame indices.");

  py::class_<SkinnedTemplate>(m, "SkinnedTemplate")
      .def_readonly("rest_mesh", &SkinnedTemplate::rest_mesh)
      .def_property_readonly("shape_count", &SkinnedTemplate::shape_count);
  m.def("make_capsule_person", [] { return make_capsule_person(); });
  m.def("load_template", [](const std::filesystem::path& p) { return load_template(p); }, py::arg("manifest"));
  m.def(
      "pose_mesh",
      [](const SkinnedTemplate& t, const std::vector<double>& beta, const std::vector<double>& theta,
         const Vec3& translation) {
        Pose p;
        p.theta = to_theta(theta);
        p.global_translation = translation;
        return pose_mesh(t, Shape{beta}, p);
      },
      py::arg("template"), py::arg("beta"), py::arg("theta"), py::arg("translation") = Vec3::Zero());

  py::class_<DecoderConfig>(m, "DecoderConfig")
      .def(py::init([](int fc, int latent, int hidden, int out, double dmax) {
             DecoderConfig c{fc, latent, hidden, out, dmax};
             c.validate();
             return c;
           }),
           py::arg("fc_size") = 8, py::arg("latent_size") = 32, py::arg("hidden_size") = 256,
           py::arg("out_resolution") = 64, py::arg("displacement_max") = 0.05)
      .def_readonly("fc_size", &DecoderConfig::fc_size)
      .def_readonly("latent_size", &DecoderConfig::latent_size)
      .def_readonly("hidden_size", &DecoderConfig::hidden_size)
      .def_readonly("out_resolution", &DecoderConfig::out_resolution);
  m.def("param_count", &param_count, py::arg("config"));
  m.def(
      "param_report",
      [](const DecoderConfig& c) {
        py::dict d;
        for (const auto& b : param_report(c).blocks) d[py::str(b.name)] = b.count;
        return d;
      },
      py::arg("config"));

  py::class_<DecoderWeights>(m, "DecoderWeights")
      .def_readonly("config", &DecoderWeights::config)
      .def_property_readonly("parameter_count", [](const DecoderWeights& w) { return w.params.size(); });
  m.def("init_weights", &init_weights, py::arg("config"), py::arg("seed") = 0);
  m.def("load_weights", [](const std::filesystem::path& p) { return load_weights(p); }, py::arg("path"));
  m.def("save_weights", [](const DecoderWeights& w, const std::filesystem::path& p) { save_weights(w, p); },
        py::arg("weights"), py::arg("path"));
  m.def(
      "decode",
      [](const DecoderWeights& w, const std::vector<double>& theta) {
        const DecoderOutput o = forward(w, to_theta(theta));
        const int side = w.config.out_resolution;
        return py::make_tuple(from_grid(output_grid(o.color, side)), from_grid(output_grid(o.displacement, side)));
      },
      py::arg("weights"), py::arg("theta"), "Color and displacement maps for a pose.");

  m.def("make_synthetic_project", [](const std::filesystem::path& dir, int frames, int resolution, std::uint64_t seed) {
    SyntheticOptions o;
    o.frames = frames;
    o.bake_resolution = resolution;
    o.seed = seed;
    return make_synthetic_project(dir, o);
  }, py::arg("dir"), py::arg("frames") = 12, py::arg("resolution") = 64, py::arg("seed") = 7);
  m.attr("POSE_VALUES") = kPoseValues;
}
