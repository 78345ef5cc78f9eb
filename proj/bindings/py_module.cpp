#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "promptseg/corpus.hpp"
#include "promptseg/inference.hpp"
#include "promptseg/losses.hpp"
#include "promptseg/matching.hpp"
#include "promptseg/model.hpp"
#include "promptseg/schedule.hpp"

namespace py = pybind11;
using namespace promptseg;

namespace {

BinaryMask mask_from_array(const py::array_t<uint8_t>& a) {
    if (a.ndim() != 2) throw py::value_error("mask must be 2-D");
    BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    auto r = a.unchecked<2>();
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) m.at(y, x) = r(y, x) ? 1 : 0;
    return m;
}

Grid grid_from_array(const py::array_t<double>& a) {
    if (a.ndim() != 2) throw py::value_error("grid must be 2-D");
    Grid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    auto r = a.unchecked<2>();
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) g.at(y, x) = r(y, x);
    return g;
}

CostMatrix cost_from_array(const py::array_t<double>& a) {
    if (a.ndim() != 2) throw py::value_error("cost must be 2-D");
    CostMatrix c(a.shape(0), std::vector<double>(a.shape(1)));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) c[i][j] = r(i, j);
    return c;
}

py::dict assignment_to_dict(const Assignment& a) {
    py::dict d;
    d["pairs"] = a.pairs;
    d["unmatched_queries"] = a.unmatched_queries;
    d["total_cost"] = a.total_cost;
    return d;
}

} // namespace

PYBIND11_MODULE(_promptseg, m) {
    m.doc() = "text-prompted set-prediction segmentation core";

    // geometry
    py::class_<NormBox>(m, "NormBox")
        .def(py::init<>())
        .def(py::init([](double cx, double cy, double w, double h) {
                 return NormBox{cx, cy, w, h};
             }),
             py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
        .def_readwrite("cx", &NormBox::cx)
        .def_readwrite("cy", &NormBox::cy)
        .def_readwrite("w", &NormBox::w)
        .def_readwrite("h", &NormBox::h);
    m.def("box_iou", &box_iou);
    m.def("box_giou", &box_giou);
    m.def("l1_box", &l1_box);
    m.def("box_from_mask",
          [](const py::array_t<uint8_t>& mask) { return box_from_mask(mask_from_array(mask)); });

    // matching
    m.def("focal_match_cost", &focal_match_cost, py::arg("p"), py::arg("alpha") = 0.25,
          py::arg("gamma") = 2.0);
    m.def("hungarian_assign",
          [](const py::array_t<double>& cost) {
              return assignment_to_dict(hungarian_assign(cost_from_array(cost)));
          });
    m.def("brute_force_assign",
          [](const py::array_t<double>& cost) {
              return assignment_to_dict(brute_force_assign(cost_from_array(cost)));
          });

    // losses
    m.def("focal_bce", &focal_bce, py::arg("p"), py::arg("y"), py::arg("alpha") = 0.25,
          py::arg("gamma") = 2.0);
    m.def("presence_loss", &presence_loss, py::arg("p"), py::arg("y"),
          py::arg("pos_weight") = 10.0);
    m.def("dice_loss",
          [](const py::array_t<double>& probs, const py::array_t<uint8_t>& gt, double eps) {
              return dice_loss(grid_from_array(probs), mask_from_array(gt), eps);
          },
          py::arg("probs"), py::arg("gt"), py::arg("eps") = 1.0);
    m.def("total_loss", &total_loss, py::arg("find_o2o"), py::arg("find_o2m"), py::arg("seg"),
          py::arg("lambda_o2m") = 2.0);

    // metrics
    m.def("dice", [](const py::array_t<uint8_t>& p, const py::array_t<uint8_t>& g) {
        return dice(mask_from_array(p), mask_from_array(g));
    });
    m.def("iou", [](const py::array_t<uint8_t>& p, const py::array_t<uint8_t>& g) {
        return iou(mask_from_array(p), mask_from_array(g));
    });

    // schedules
    m.def("llrd_rate",
          [](int layer, double eta_base, int layers, double gamma) {
              return llrd_rate(layer, LLRDSpec{eta_base, layers, gamma});
          },
          py::arg("layer"), py::arg("eta_base"), py::arg("layers") = 12, py::arg("gamma") = 0.85);
    m.def("lr_at_step",
          [](int64_t step, double base, int warmup) {
              ScheduleSpec s;
              s.warmup_steps = warmup;
              return lr_at_step(step, base, s);
          },
          py::arg("step"), py::arg("base"), py::arg("warmup") = 1000);

    // corpus utilities
    m.def("split_train_val",
          [](std::vector<std::string> ids, double frac, uint64_t seed) {
              return split_train_val(std::move(ids), SplitSpec{frac, seed});
          },
          py::arg("ids"), py::arg("train_fraction") = 0.85, py::arg("seed") = 42);
    m.def("canonicalize_concept", &canonicalize_concept);
    m.def("embed_concept", [](const std::string& c, int dim) { return embed_concept(c, dim).v; },
          py::arg("concept"), py::arg("dim") = 64);
}
