// Copyright 2026 The pfrpn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <iostream>

#include "pfrpn/checkpoint.hpp"
#include "pfrpn/cli.hpp"

namespace py = pybind11;
using namespace pfrpn;

namespace {

using Box = std::array<double, 4>;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

BoxXYXY to_box(const Box& b) { return {b[0], b[1], b[2], b[3]}; }
Box from_box(const BoxXYXY& b) { return {b.x1, b.y1, b.x2, b.y2}; }

Image to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must have shape (H, W, 3)");
  Image img(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)), 3);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array from_image(const Image& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::dict scene_dict(const Scene& s) {
  py::dict d;
  d["id"] = s.id;
  d["image"] = from_image(s.image);
  std::vector<Box> boxes;
  for (const auto& b : s.annotation.boxes) boxes.push_back(from_box(b));
  d["boxes"] = boxes;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  for (std::size_t i = 0; i < r.budgets.size(); ++i) {
    const AverageRecall& a = r.recall[i];
    py::dict row;
    row["ar"] = a.ar;
    row["ar_small"] = a.ar_small;
    row["ar_medium"] = a.ar_medium;
    row["ar_large"] = a.ar_large;
    d[py::int_(r.budgets[i])] = row;
  }
  return d;
}

// A model together with the run config that shapes it and its data.
struct PyModel {
  cli::RunConfig config;
  Model model;

  PyModel(const std::string& config_json, const std::string& checkpoint)
      : config(cli::parse_config(config_json)),
        model(checkpoint.empty() ? Model(config.model, config.train.seed)
                                 : Model(config.model, load_checkpoint(checkpoint, config.model))) {}
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prompt-free region proposals on synthetic scenes";

  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("iou", [](const Box& a, const Box& b) { return iou(to_box(a), to_box(b)); });
  m.def("giou", [](const Box& a, const Box& b) { return giou(to_box(a), to_box(b)); });
  m.def("centerness_target", [](double x, double y, const Box& b) { return centerness_target({x, y}, to_box(b)); });
  m.def("hungarian_match", [](const Array& cost) {
    if (cost.ndim() != 2) throw std::invalid_argument("cost must be 2-D");
    const auto rows = static_cast<std::size_t>(cost.shape(0)), cols = static_cast<std::size_t>(cost.shape(1));
    const Tensor t = Tensor::matrix(rows, cols, std::vector<double>(cost.data(), cost.data() + cost.size()));
    return hungarian_match(t).pairs;
  }, "Minimum-cost (prediction, gt) pairs ordered by gt index.");
  m.def("default_config", [] { return cli::config_json(cli::RunConfig{}); });
  m.def("resolve_config", [](const std::string& json) { return cli::config_json(cli::parse_config(json)); });
  m.def("generate_scene", [](const std::string& config_json, std::size_t index) {
    return scene_dict(generate_scene(cli::parse_config(config_json).scene, index));
  });
  m.def("run_cli", [](const std::vector<std::string>& args) {
    py::gil_scoped_release release;
    return cli::run(args, std::cout, std::cerr);
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config_json") = "{}",
           py::arg("checkpoint") = "")
      .def("propose",
           [](const PyModel& self, const Array& image) {
             const ForwardResult fr = forward(self.model, to_image(image));
             std::vector<std::pair<Box, double>> out;
             for (const auto& p : fr.proposals) out.emplace_back(from_box(p.box), p.score);
             return out;
           })
      .def("train",
           [](PyModel& self) {
             const auto scenes = cli::training_scenes(self.config);
             std::vector<double> totals;
             py::gil_scoped_release release;
             for (const auto& e : train(self.model, scenes, self.config.train)) totals.push_back(e.mean.total);
             return totals;
           })
      .def("evaluate",
           [](const PyModel& self) {
             return report_dict(evaluate(self.model, cli::evaluation_scenes(self.config), self.config.budgets));
           })
      .def("save", [](const PyModel& self, const std::string& path) { save_checkpoint(self.model.params(), path); })
      .def_property_readonly("config_json", [](const PyModel& self) { return cli::config_json(self.config); });
}
