#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "masq/dataset.hpp"
#include "masq/error.hpp"
#include "masq/experiments.hpp"
#include "masq/geom.hpp"
#include "masq/nn.hpp"
#include "masq/simenv.hpp"
#include "masq/train.hpp"

namespace py = pybind11;
using namespace masq;

namespace {

std::vector<Vec2> points(const Eigen::MatrixX2d& m) {
  std::vector<Vec2> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m(i, 0), m(i, 1));
  return out;
}

double scripted_score(const std::string& task, std::uint64_t seed, int stop_after) {
  const auto t = simenv::parse_task(task);
  simenv::Expert e(t, seed, {}, stop_after);
  return simenv::rollout(simenv::SceneConfig::defaults(t), [&](const simenv::EnvState& s) { return e.act(s); }, seed)
      .score;
}

py::dict dataset_summary(const std::filesystem::path& manifest) {
  const auto m = dataset::read_manifest(manifest);
  const auto clips = dataset::load_dataset(manifest, m);
  py::list ids;
  std::size_t frames = 0;
  for (const auto& c : clips) {
    ids.append(c.clip_id);
    frames += c.frames();
  }
  const auto agg = m.filter_aggregate();
  py::dict d;
  d["clip_ids"] = ids;
  d["frames"] = frames;
  d["horizon"] = m.horizon;
  d["feature_dim"] = m.feature_dim;
  d["embed_dim"] = m.embed_dim;
  d["kept_frames"] = agg.kept_frames;
  d["config"] = m.config;
  return d;
}

}  // namespace

PYBIND11_MODULE(_masq, m) {
  m.doc() = "Bindings for the robotization pipeline and co-training library";

  py::register_exception<Error>(m, "Error");
  py::register_exception<ChecksumMismatch>(m, "ChecksumMismatch", m.attr("Error"));
  py::register_exception<VersionMismatch>(m, "VersionMismatch", m.attr("Error"));
  py::register_exception<InvalidArgument>(m, "InvalidArgument", m.attr("Error"));
  py::register_exception<DegenerateConfiguration>(m, "DegenerateConfiguration", m.attr("Error"));

  py::class_<geom::CameraModel>(m, "CameraModel")
      .def_static("look_at", &geom::CameraModel::look_at, py::arg("eye"), py::arg("target"), py::arg("fx"),
                  py::arg("fy"), py::arg("width"), py::arg("height"))
      .def_readonly("fx", &geom::CameraModel::fx)
      .def_readonly("fy", &geom::CameraModel::fy)
      .def_readonly("cx", &geom::CameraModel::cx)
      .def_readonly("cy", &geom::CameraModel::cy)
      .def("project_world", [](const geom::CameraModel& c, const Vec3& p) { return geom::project_world(p, c); });

  m.def(
      "estimate_homography",
      [](const Eigen::MatrixX2d& src, const Eigen::MatrixX2d& dst) {
        const auto s = points(src), d = points(dst);
        return Mat3(geom::estimate_homography(s, d).matrix());
      },
      py::arg("src"), py::arg("dst"), "Normalized DLT from N x 2 point arrays; returns the 3 x 3 matrix.");
  m.def(
      "warp", [](const Mat3& h, const Vec2& p) { return geom::warp(geom::Homography(h), p); }, py::arg("h"),
      py::arg("point"));

  m.def(
      "embed_language",
      [](const std::string& text, int dim) {
        const auto v = dataset::embed_language(text, dim);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      },
      py::arg("text"), py::arg("dim") = 64);
  m.def("subsample_indices", &dataset::subsample_indices, py::arg("n"), py::arg("fraction"), py::arg("seed"));
  m.def("dataset_summary", &dataset_summary, py::arg("manifest"));

  m.def(
      "diffusion_schedule",
      [](int steps) {
        const nn::DiffusionSchedule s(steps);
        py::dict d;
        d["betas"] = s.betas;
        d["alphas"] = s.alphas;
        d["alpha_bars"] = s.alpha_bars;
        return d;
      },
      py::arg("steps") = 100);
  m.def("cosine_lr", &train::cosine_lr, py::arg("step"), py::arg("total"), py::arg("warmup"), py::arg("peak"));

  m.def("tasks", [] {
    std::vector<std::string> out;
    for (auto t : simenv::kTasks) out.emplace_back(simenv::task_name(t));
    return out;
  });
  m.def("scripted_score", &scripted_score, py::arg("task"), py::arg("seed"), py::arg("stop_after") = 3,
        "Score of the scripted expert that attempts the first `stop_after` subtasks.");
  m.def("experiment_defaults", [] { return experiments::ExperimentConfig::desk_defaults().to_map(); });
  m.def(
      "checkpoint_info",
      [](const std::filesystem::path& path) {
        nn::CheckpointMeta meta;
        const auto p = nn::load_checkpoint(path, &meta);
        py::dict d;
        d["step"] = meta.step;
        d["parameters"] = p.size();
        d["extra"] = meta.extra;
        d["model"] = p.config().to_map();
        return d;
      },
      py::arg("path"));
}
