#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "moltkv/engine.hpp"
#include "moltkv/errors.hpp"
#include "moltkv/update_spec.hpp"

namespace py = pybind11;
using namespace moltkv;

namespace {

// Values are raw bytes on the C++ side; surface them as bytes, accept either.
std::string to_bytes(const py::object& o) {
  if (py::isinstance<py::bytes>(o)) return o.cast<std::string>();
  if (py::isinstance<py::str>(o)) return o.cast<std::string>();
  throw py::type_error("expected bytes or str");
}

py::object opt_bytes(const std::optional<Bytes>& v) {
  if (!v) return py::none();
  return py::bytes(*v);
}

}  // namespace

PYBIND11_MODULE(_moltkv, m) {
  m.doc() = "prefix-versioned key-value engine";

  py::register_exception<CommandError>(m, "CommandError");
  py::register_exception<ParseError>(m, "DocumentError");

  py::class_<MigrationStats>(m, "MigrationStats")
      .def_readonly("commands", &MigrationStats::commands)
      .def_readonly("lazy_migrations", &MigrationStats::lazy_migrations)
      .def_readonly("lazy_key_renames", &MigrationStats::lazy_key_renames)
      .def_readonly("lazy_value_updates", &MigrationStats::lazy_value_updates)
      .def_readonly("residue_deletes", &MigrationStats::residue_deletes)
      .def_readonly("eager_migrations", &MigrationStats::eager_migrations)
      .def_readonly("installs", &MigrationStats::installs);

  py::class_<Engine>(m, "Engine")
      .def(py::init([](const std::string& data_dir, bool bypass) {
             EngineConfig cfg;
             cfg.data_dir = data_dir;
             cfg.bypass = bypass;
             return new Engine(cfg);
           }),
           py::arg("data_dir") = std::string(), py::arg("bypass") = false)
      .def("open_session", &Engine::open_session)
      .def("close_session", &Engine::close_session)
      .def(
          "hello",
          [](Engine& e, uint64_t sid,
             const std::vector<std::pair<std::string, uint32_t>>& decls) {
            HelloResult h = e.hello(sid, decls);
            return py::make_tuple(h.ok, h.prefix, h.current);
          },
          py::arg("session"), py::arg("declarations"),
          "Returns (ok, offending_prefix, current_version).")
      .def(
          "get", [](Engine& e, const std::string& k) { return opt_bytes(e.get(k)); },
          py::arg("key"))
      .def(
          "set",
          [](Engine& e, const std::string& k, const py::object& v, const std::string& mode) {
            SetMode m = SetMode::Plain;
            if (mode == "nx")
              m = SetMode::Nx;
            else if (mode == "xx")
              m = SetMode::Xx;
            else if (!mode.empty())
              throw CommandError("mode must be '', 'nx' or 'xx'");
            return e.set(k, to_bytes(v), m);
          },
          py::arg("key"), py::arg("value"), py::arg("mode") = std::string())
      .def(
          "delete",
          [](Engine& e, const std::vector<std::string>& keys) { return e.del(keys); },
          py::arg("keys"))
      .def("exists", &Engine::exists, py::arg("key"))
      .def(
          "hset",
          [](Engine& e, const std::string& k, const std::string& f, const py::object& v) {
            return e.hset(k, f, to_bytes(v));
          },
          py::arg("key"), py::arg("field"), py::arg("value"))
      .def(
          "hget",
          [](Engine& e, const std::string& k, const std::string& f) {
            return opt_bytes(e.hget(k, f));
          },
          py::arg("key"), py::arg("field"))
      .def(
          "hgetall",
          [](Engine& e, const std::string& k) {
            py::dict d;
            for (auto& [f, v] : e.hgetall(k)) d[py::bytes(f)] = py::bytes(v);
            return d;
          },
          py::arg("key"))
      .def(
          "install",
          [](Engine& e, const std::string& document) {
            return e.install_update(parse_update_document(document)).disconnected;
          },
          py::arg("document"), "Parses and installs an update; returns kicked session ids.")
      .def("migrate_all",
           [](Engine& e) {
             EagerResult r = e.eager_migrate_all();
             if (!r.error.empty()) throw CommandError(r.error);
             return r.migrated;
           })
      .def("snapshot", &Engine::snapshot)
      .def("stats", &Engine::stats)
      .def("key_count", &Engine::key_count)
      .def("store_digest", &Engine::store_digest)
      .def("logical_version", &Engine::logical_version, py::arg("key"));
}
