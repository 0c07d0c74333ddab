#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "geoaddr/checks.hpp"
#include "geoaddr/errors.hpp"
#include "geoaddr/geocode.hpp"

namespace py = pybind11;
using namespace geoaddr;

PYBIND11_MODULE(_geoaddr, m) {
    m.doc() = "Native core of geoaddr";

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run one CLI command; returns (exit_code, stdout, stderr).");

    m.def(
        "encode",
        [](double lat, double lon, int level) {
            const CellId c = cell_from_latlon(lat, lon, level);
            return py::make_tuple(encode_2lt3c(c).chars, c.face);
        },
        py::arg("lat"), py::arg("lon"), py::arg("level"), "Cell label at `level` as (chars, face).");

    m.def(
        "decode_center",
        [](const std::string& chars, int face, int level) {
            const LatLon p = cell_center(decode_2lt3c(LabelChars{chars, level}, face));
            return py::make_tuple(p.lat, p.lon);
        },
        py::arg("chars"), py::arg("face"), py::arg("level"), "Center (lat, lon) of a cell label.");

    m.def("haversine_km", [](double lat1, double lon1, double lat2, double lon2) {
        return haversine_km({lat1, lon1}, {lat2, lon2});
    });

    m.def(
        "verify",
        [](bool include_overfit) {
            std::vector<checks::CriterionResult> res;
            {
                py::gil_scoped_release release;
                res = checks::run_all(include_overfit);
            }
            py::list out;
            for (const auto& r : res) {
                py::dict d;
                d["id"] = r.id;
                d["name"] = r.name;
                d["pass"] = r.pass;
                d["detail"] = r.detail;
                d["seconds"] = r.seconds;
                out.append(d);
            }
            return out;
        },
        py::arg("include_overfit") = true);

    py::register_exception<Error>(m, "GeoaddrError", PyExc_RuntimeError);
}
