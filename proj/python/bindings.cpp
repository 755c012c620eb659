#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "metapoi/categories.hpp"
#include "metapoi/config.hpp"
#include "metapoi/correlation.hpp"
#include "metapoi/errors.hpp"
#include "metapoi/eval.hpp"
#include "metapoi/pipeline.hpp"

namespace py = pybind11;
using namespace metapoi;

namespace {

py::dict report_dict(const EvalReport& r) {
  py::dict hr, ndcg;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    hr[py::int_(r.ks[i])] = r.hr[i];
    ndcg[py::int_(r.ks[i])] = r.ndcg[i];
  }
  py::dict d;
  d["variant"] = r.variant;
  d["hr"] = hr;
  d["ndcg"] = ndcg;
  d["count"] = r.count;
  d["fingerprint"] = r.fingerprint;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "metapoi C++ core";
  m.attr("__version__") = METAPOI_VERSION;

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<CheckinRecord>(m, "CheckinRecord")
      .def(py::init<>())
      .def_readwrite("user_id", &CheckinRecord::user_id)
      .def_readwrite("poi_id", &CheckinRecord::poi_id)
      .def_readwrite("category_id", &CheckinRecord::category_id)
      .def_property(
          "latitude", [](const CheckinRecord& r) { return r.coordinate.latitude; },
          [](CheckinRecord& r, double v) { r.coordinate.latitude = v; })
      .def_property(
          "longitude", [](const CheckinRecord& r) { return r.coordinate.longitude; },
          [](CheckinRecord& r, double v) { r.coordinate.longitude = v; })
      .def_readwrite("timestamp", &CheckinRecord::timestamp)
      .def_readwrite("tz_offset_minutes", &CheckinRecord::tz_offset_minutes);

  py::class_<CityDataset>(m, "CityDataset")
      .def_readonly("city_id", &CityDataset::city_id)
      .def_property_readonly("num_pois", &CityDataset::num_pois)
      .def_property_readonly("num_users", [](const CityDataset& c) { return c.users.size(); })
      .def_property_readonly("num_sequences", [](const CityDataset& c) { return c.sequences.size(); });

  m.def("category_index", [](const std::string& name) { return category_index(name); }, py::arg("name"));
  m.def(
      "haversine_km",
      [](double lat1, double lon1, double lat2, double lon2) { return haversine_km({lat1, lon1}, {lat2, lon2}); },
      py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"));
  m.def("discretize_time", &discretize_time, py::arg("timestamp"), py::arg("tz_offset_minutes") = 0);
  m.def("discretize_distance", &discretize_distance, py::arg("km"), py::arg("first_step") = false);
  m.def("parse_timestamp", [](const std::string& s) { return parse_timestamp(s); });
  m.def(
      "parse_checkins_text",
      [](const std::string& text) {
        ParseResult r = parse_checkins_text(text);
        return py::make_tuple(r.records, r.diagnostics);
      },
      py::arg("text"), "Returns (records, diagnostics) for delimited text with the default column names.");
  m.def("filter_sparse", &filter_sparse, py::arg("records"), py::arg("min_user") = 5, py::arg("min_poi") = 3);
  m.def("build_city_dataset", &build_city_dataset, py::arg("city_id"), py::arg("records"), py::arg("min_user") = 5,
        py::arg("min_poi") = 3);
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("split_sizes", [](const CityDataset& c) {
    return py::make_tuple(c.train().size(), c.validation().size(), c.test().size());
  });

  m.def(
      "pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); },
      py::arg("x"), py::arg("y"));
  m.def(
      "transition_distribution",
      [](const CityDataset& c, bool all_splits) {
        const auto d = transition_distribution(c, all_splits);
        return std::vector<double>(d.probs.begin(), d.probs.end());
      },
      py::arg("city"), py::arg("all_splits") = false);
  m.def(
      "correlation_weight",
      [](const CityDataset& aux, const CityDataset& target, double floor) {
        return correlation_weight(transition_distribution(aux), transition_distribution(target), floor);
      },
      py::arg("aux"), py::arg("target"), py::arg("floor") = 0.05);
  m.def(
      "correlation_matrix",
      [](const std::vector<CityDataset>& cities, const std::string& mode) {
        const auto cm = correlation_matrix(
            cities, mode == "poi" ? CorrelationMode::kPoiDistribution : CorrelationMode::kBehavioralTransition);
        return py::make_tuple(cm.city_ids, cm.values);
      },
      py::arg("cities"), py::arg("mode") = "behavior", "Returns (city_ids, matrix); mode is 'behavior' or 'poi'.");

  m.def(
      "rank_of_truth", [](const std::vector<double>& probs, int truth) { return rank_of_truth(probs, truth); },
      py::arg("probs"), py::arg("truth"));
  m.def(
      "hit_ratio_at_k", [](const std::vector<int>& ranks, int k) { return hit_ratio_at_k(ranks, k); },
      py::arg("ranks"), py::arg("k"));
  m.def(
      "ndcg_at_k", [](const std::vector<int>& ranks, int k) { return ndcg_at_k(ranks, k); }, py::arg("ranks"),
      py::arg("k"));
  m.def(
      "mostpop_ranking", [](const CityDataset& c) { return mostpop_ranking(c.train(), c.num_pois()); },
      py::arg("city"));

  m.def(
      "synthesize",
      [](const std::string& config_path, const std::optional<std::string>& out) {
        RunConfig c = load_run_config(config_path);
        if (out) c.out = *out;
        std::map<std::string, std::string> raws;
        for (const auto& city : synthesize(c).cities) raws[city.id] = city.raw.string();
        return raws;
      },
      py::arg("config_path"), py::arg("out") = py::none(), "Writes synthetic logs; returns {city: csv path}.");
  m.def(
      "run_pipeline",
      [](const std::string& config_path, const std::string& variant, const std::optional<std::string>& out,
         const std::optional<int> iters, const std::optional<std::uint64_t> seed) {
        RunConfig c = load_run_config(config_path);
        if (out) c.out = *out;
        if (iters) c.meta.iterations = *iters;
        if (seed) c.seed = *seed;
        c.validate();
        py::gil_scoped_release release;
        const auto cities = load_or_ingest(c);
        const PipelineResult r = run_pipeline(cities, c, parse_variant(variant));
        py::gil_scoped_acquire acquire;
        py::dict d;
        d["report"] = report_dict(r.report);
        d["mostpop"] = report_dict(r.mostpop);
        d["gammas"] = r.gammas;
        return d;
      },
      py::arg("config_path"), py::arg("variant") = "MERec", py::arg("out") = py::none(),
      py::arg("iters") = py::none(), py::arg("seed") = py::none());
}
