#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "canadv/attacks.hpp"
#include "canadv/can_codec.hpp"
#include "canadv/error.hpp"
#include "canadv/eval.hpp"
#include "canadv/nnet.hpp"
#include "canadv/pipeline.hpp"
#include "canadv/traffic.hpp"

namespace py = pybind11;
using namespace canadv;

namespace {

Payload payload_from(const py::bytes& data) {
    const std::string raw = data;
    if (raw.size() > 8) throw py::value_error("a CAN payload holds at most 8 bytes");
    Payload p{};
    std::copy(raw.begin(), raw.end(), p.begin());
    return p;
}

CommandResult run_command(const std::string& command, const std::string& config_path) {
    const auto cfg = load_run_config(config_path);
    using Runner = CommandResult (*)(const RunConfig&, const Logger&);
    const std::pair<const char*, Runner> runners[] = {
        {"gen", run_gen}, {"train", run_train}, {"attack", run_attack}, {"defend", run_defend}, {"eval", run_eval}};
    for (const auto& [name, runner] : runners) {
        if (command == name) {
            py::gil_scoped_release release;
            return runner(cfg, {});
        }
    }
    throw py::value_error("unknown command " + command);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "CAN bus FDIA detection core";

    const auto base = py::register_exception<Error>(m, "CanadvError");
    py::register_exception<ConfigError>(m, "ConfigError", base);

    py::enum_<Label>(m, "Label").value("Normal", Label::Normal).value("Attack", Label::Attack);

    m.def("parameter_count", &parameter_count, py::arg("input_dim"), py::arg("hidden_dim"));
    m.def("cid_to_mid", [](const std::string& cid) { return cid_to_mid(cid); }, py::arg("cid_hex"));
    m.def("signal_names", [] { return default_catalog().signal_names(); });
    m.def(
        "decode_frame",
        [](std::uint32_t can_id, const py::bytes& payload) {
            const auto p = payload_from(payload);
            const auto* msg = default_catalog().find_message(can_id);
            const auto dlc = static_cast<std::uint8_t>(msg ? msg->dlc : 8);
            return decode_frame(CanFrame{can_id, 0.0, dlc, p}, default_catalog());
        },
        py::arg("can_id"), py::arg("payload"), "Physical values of one frame, decoded with the built-in catalog.");
    m.def(
        "encode_frame",
        [](std::uint32_t can_id, const std::map<std::string, double>& values) {
            const auto* msg = default_catalog().find_message(can_id);
            if (!msg) throw py::key_error("unknown message id " + std::to_string(can_id));
            const auto p = encode_signals(values, *msg);
            return py::bytes(reinterpret_cast<const char*>(p.data()), static_cast<std::size_t>(msg->dlc));
        },
        py::arg("can_id"), py::arg("values"));

    py::class_<SampleWindow>(m, "Window")
        .def_readonly("x", &SampleWindow::x)
        .def_readonly("start_time", &SampleWindow::start_time)
        .def_readonly("label", &SampleWindow::label)
        .def_readonly("attack_begin", &SampleWindow::attack_begin)
        .def_readonly("attack_length", &SampleWindow::attack_length);

    m.def(
        "load_windows",
        [](const std::string& path) {
            auto file = load_windows(path);
            return py::make_tuple(file.names, file.units == Units::normalized, std::move(file.windows));
        },
        py::arg("path"), "Returns (signal names, normalized flag, windows).");

    m.def(
        "predict_probabilities",
        [](const std::string& checkpoint, const std::vector<Eigen::MatrixXd>& windows) {
            const auto model = load_checkpoint(checkpoint);
            std::vector<SampleWindow> ws(windows.size());
            for (std::size_t i = 0; i < windows.size(); ++i) ws[i].x = windows[i];
            return predict_probabilities(model, ws);
        },
        py::arg("checkpoint"), py::arg("windows"), "Attack probabilities for normalized windows.");

    py::class_<CommandResult>(m, "CommandResult")
        .def_readonly("artifacts", &CommandResult::artifacts)
        .def_readonly("warnings", &CommandResult::warnings);
    m.def("run", &run_command, py::arg("command"), py::arg("config_path"),
          "Run one pipeline command (gen, train, attack, defend, eval) from a JSON config.");
    m.def(
        "decode_trace",
        [](const std::string& trace, const std::string& out, const std::string& dbc) {
            return run_decode(dbc, trace, out).warnings;
        },
        py::arg("trace"), py::arg("out"), py::arg("dbc") = "", "Decode a raw trace CSV; returns warnings.");
}
