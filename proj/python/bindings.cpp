#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rigfit/corpus_io.hpp"
#include "rigfit/fitting.hpp"
#include "rigfit/mesh_io.hpp"
#include "rigfit/rig_io.hpp"

namespace py = pybind11;
using namespace rigfit;

PYBIND11_MODULE(_rigfit, m) {
  m.doc() = "joint-based parametric face rig toolkit";

  py::register_exception<Error>(m, "RigfitError", PyExc_RuntimeError);

  py::class_<Mesh>(m, "Mesh")
      .def(py::init<>())
      .def_readwrite("vertices", &Mesh::vertices)
      .def_property_readonly("faces",
                             [](const Mesh& mesh) {
                               std::vector<std::array<int, 3>> f = mesh.faces;
                               return f;
                             })
      .def("vertex_count", &Mesh::vertex_count)
      .def("face_count", &Mesh::face_count)
      .def("bounding_box_diagonal", &Mesh::bounding_box_diagonal);

  py::class_<PointCloud>(m, "PointCloud")
      .def(py::init<>())
      .def_readwrite("points", &PointCloud::points)
      .def_property(
          "normals",
          [](const PointCloud& c) -> py::object {
            if (!c.normals) return py::none();
            return py::cast(*c.normals);
          },
          [](PointCloud& c, const VertexMatrix& n) { c.normals = n; })
      .def("point_count", &PointCloud::point_count);

  py::class_<ErrorReport>(m, "ErrorReport")
      .def_readonly("mean", &ErrorReport::mean)
      .def_readonly("rms", &ErrorReport::rms)
      .def_readonly("max", &ErrorReport::max)
      .def_readonly("stddev", &ErrorReport::stddev)
      .def_readonly("count", &ErrorReport::count)
      .def("__repr__", [](const ErrorReport& r) {
        return "ErrorReport(mean=" + std::to_string(r.mean) +
               ", rms=" + std::to_string(r.rms) +
               ", max=" + std::to_string(r.max) + ")";
      });

  py::class_<ToyRigConfig>(m, "ToyRigConfig")
      .def(py::init<>())
      .def_readwrite("subdivision", &ToyRigConfig::subdivision)
      .def_readwrite("joint_count", &ToyRigConfig::joint_count)
      .def_readwrite("symmetric", &ToyRigConfig::symmetric)
      .def_readwrite("expression_count", &ToyRigConfig::expression_count)
      .def_readwrite("seed", &ToyRigConfig::seed);

  py::class_<Rig>(m, "Rig")
      .def_property_readonly("mesh", [](const Rig& r) { return r.mesh; })
      .def_property_readonly(
          "joint_count",
          [](const Rig& r) { return r.skeleton.joint_count(); })
      .def_property_readonly(
          "pose_dim", [](const Rig& r) { return r.skeleton.free_dof_count(); })
      .def_property_readonly(
          "weight_param_count",
          [](const Rig& r) { return r.weights.class_count(); })
      .def_property_readonly(
          "expression_count",
          [](const Rig& r) { return r.expressions.shape_count(); })
      .def_property_readonly(
          "dense_weights", [](const Rig& r) { return r.weights.dense(); })
      .def("rest_pose",
           [](const Rig& r) { return r.skeleton.rest_packed(); })
      .def("pose_mesh",
           [](const Rig& r, const PoseParams& pose) {
             return r.pose_mesh(pose);
           })
      .def("pose_mesh",
           [](const Rig& r, const PoseParams& pose,
              const Eigen::VectorXd& coeffs) {
             return r.pose_mesh(pose, coeffs);
           });

  m.def("make_toy_rig", &make_toy_rig);
  m.def("load_rig", &load_rig);
  m.def("save_rig", &save_rig);
  m.def("load_mesh", &load_mesh);
  m.def("save_mesh", &save_mesh);
  m.def("load_point_cloud", &load_point_cloud);
  m.def("save_point_cloud", &save_point_cloud);

  m.def(
      "synth_scan",
      [](const Rig& rig, const PoseParams& pose, double noise_sigma,
         double dropout_fraction, int count, std::uint64_t seed) {
        Rng rng(seed);
        return synth_scan(rig, pose, noise_sigma, dropout_fraction, count, rng);
      },
      py::arg("rig"), py::arg("pose"), py::arg("noise_sigma") = 0.0,
      py::arg("dropout_fraction") = 0.0, py::arg("count") = 2000,
      py::arg("seed") = 1234);

  m.def("loss_vertex",
        [](const VertexMatrix& vp, const VertexMatrix& vg) {
          return loss_vertex(vp, vg);
        });
  m.def("scan_to_mesh_distance", &scan_to_mesh_distance);
  m.def("chamfer_distance", &chamfer_distance);
  m.def("point_to_point_error", &point_to_point_error);

  py::class_<LossWeights>(m, "LossWeights")
      .def(py::init<>())
      .def_readwrite("lambda_m", &LossWeights::lambda_m)
      .def_readwrite("lambda_x", &LossWeights::lambda_x)
      .def_readwrite("lambda_p", &LossWeights::lambda_p);

  py::class_<IcpThresholds>(m, "IcpThresholds")
      .def(py::init<>())
      .def_readwrite("max_distance", &IcpThresholds::max_distance)
      .def_readwrite("max_normal_angle_deg", &IcpThresholds::max_normal_angle_deg);

  py::class_<FitConfig>(m, "FitConfig")
      .def(py::init<>())
      .def_readwrite("loss_weights", &FitConfig::loss_weights)
      .def_readwrite("lambda_m_floor", &FitConfig::lambda_m_floor)
      .def_readwrite("icp", &FitConfig::icp)
      .def_readwrite("stage1_pose_lr", &FitConfig::stage1_pose_lr)
      .def_readwrite("stage1_weight_lr", &FitConfig::stage1_weight_lr)
      .def_readwrite("pose_iters", &FitConfig::pose_iters)
      .def_readwrite("z_iters", &FitConfig::z_iters)
      .def_readwrite("inner_cycles", &FitConfig::inner_cycles)
      .def_readwrite("expr_iters", &FitConfig::expr_iters)
      .def_readwrite("outer_cycles", &FitConfig::outer_cycles)
      .def_readwrite("pose_lr", &FitConfig::pose_lr)
      .def_readwrite("z_lr", &FitConfig::z_lr)
      .def_readwrite("expr_lr", &FitConfig::expr_lr)
      .def_readwrite("refresh_interval", &FitConfig::refresh_interval)
      .def_readwrite("stage1_cycles", &FitConfig::stage1_cycles)
      .def_readwrite("stage1_pose_iters", &FitConfig::stage1_pose_iters)
      .def_readwrite("stage1_weight_iters", &FitConfig::stage1_weight_iters)
      .def_readwrite("snapshots_per_fit", &FitConfig::snapshots_per_fit);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("pose", &FitResult::pose)
      .def_readonly("z", &FitResult::z)
      .def_readonly("expr_coeffs", &FitResult::expr_coeffs)
      .def_readonly("fitted_vertices", &FitResult::fitted_vertices)
      .def_readonly("report", &FitResult::report)
      .def_readonly("loss_curve", &FitResult::loss_curve);

  m.def(
      "fit_test_time",
      [](const Rig& rig, const PointCloud& cloud, const FitConfig& config) {
        return fit_test_time(rig, nullptr, cloud, config);
      },
      py::arg("rig"), py::arg("cloud"), py::arg("config") = FitConfig{});

  m.def("fit_stage1_linear",
        [](Rig& rig, const std::vector<VertexMatrix>& targets,
           const FitConfig& config) {
          const Stage1Result r = fit_stage1_linear(rig, targets, config);
          py::dict out;
          out["poses"] = r.poses;
          out["learned_weights"] = r.learned_weights;
          out["loss_log"] = r.loss_log;
          return out;
        });

  m.def("split_corpus", &split_corpus, py::arg("count"), py::arg("train"),
        py::arg("val"), py::arg("test"), py::arg("seed"));

  py::class_<CorpusSplit>(m, "CorpusSplit")
      .def_readonly("train", &CorpusSplit::train)
      .def_readonly("val", &CorpusSplit::val)
      .def_readonly("test", &CorpusSplit::test);
}
