// metapoi: ingest -> analyze -> meta-train -> transfer -> train -> eval,
// plus pipeline / ablate / sweep / synth. Every command writes a manifest.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "metapoi/checkpoint.hpp"
#include "metapoi/config.hpp"
#include "metapoi/correlation.hpp"
#include "metapoi/errors.hpp"
#include "metapoi/eval.hpp"
#include "metapoi/hashing.hpp"
#include "metapoi/meta.hpp"
#include "metapoi/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metapoi;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> target;
  std::optional<std::string> order;
  std::optional<double> gamma_floor;
  std::optional<int> l;
  std::optional<int> n;
  std::optional<int> local_steps;
  std::optional<int> iters;
  std::optional<int> support;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--target", o.target, "target city id");
  cmd->add_option("--order", o.order, "meta-gradient order: first|second");
  cmd->add_option("--gamma-floor", o.gamma_floor, "lower clamp for correlation weights");
  cmd->add_option("-l", o.l, "leading layers to freeze (embedding = 1)");
  cmd->add_option("-n", o.n, "fresh recurrent layers appended after freezing");
  cmd->add_option("--local-steps", o.local_steps, "inner update steps");
  cmd->add_option("--iters", o.iters, "meta-training iterations");
  cmd->add_option("-N", o.support, "sequences per support/query set");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.target) c.target = *o.target;
  if (o.order) c.meta.order = parse_order(*o.order);
  if (o.gamma_floor) c.meta.gamma_floor = *o.gamma_floor;
  if (o.l) c.freeze.frozen_layers = *o.l;
  if (o.n) c.freeze.added_layers = *o.n;
  if (o.local_steps) c.meta.local_steps = *o.local_steps;
  if (o.iters) c.meta.iterations = *o.iters;
  if (o.support) c.meta.support_size = *o.support;
  return c;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_manifest(const RunConfig& c, const std::string& command, json extra = json::object()) {
  json m = {{"command", command},
            {"version", METAPOI_VERSION},
            {"config_hash", c.fingerprint()},
            {"seed", c.seed},
            {"config", c.to_json()}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  std::string name = command;
  std::replace(name.begin(), name.end(), '-', '_');
  write_file(c.out / (name + "_manifest.json"), m.dump(2) + "\n");
}

Architecture category_arch(const RunConfig& c) {
  Architecture a = c.arch;
  a.poi_layers = 0;
  a.num_pois = 0;
  return a;
}

std::string safe_name(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch == '/') ch = '_';
  }
  return out;
}

int cmd_ingest(const RunConfig& c) {
  std::vector<CityDataset> cities;
  json outputs = json::object();
  for (const auto& input : c.cities) {
    cities.push_back(ingest_city(input, c));
    const fs::path dir = input.dataset.empty() ? c.out / "datasets" / input.id : input.dataset;
    save_dataset(cities.back(), dir);
    outputs[input.id] = dir.string();
  }
  const std::string stats = stats_csv(cities);
  write_file(c.out / "stats.csv", stats);
  std::cout << stats;
  write_manifest(c, "ingest", {{"datasets", outputs}});
  return 0;
}

int cmd_analyze(const RunConfig& c) {
  const auto cities = load_or_ingest(c);
  const fs::path dir = c.out / "analysis";
  std::vector<CategoryDistribution> dists;
  for (const auto& city : cities) dists.push_back(poi_category_distribution(city));
  write_file(dir / "category_distribution.csv", category_distribution_csv(dists));

  const auto poi = correlation_matrix(cities, CorrelationMode::kPoiDistribution, true);
  const auto beh = correlation_matrix(cities, CorrelationMode::kBehavioralTransition, true);
  write_file(dir / "correlation_poi.csv", poi.to_csv());
  write_file(dir / "correlation_poi.json", poi.to_json());
  write_file(dir / "correlation_behavior.csv", beh.to_csv());
  write_file(dir / "correlation_behavior.json", beh.to_json());

  json pairs = json::object();
  if (cities.size() >= 2) {
    std::size_t hi_a = 0, hi_b = 1, lo_a = 0, lo_b = 1;
    for (std::size_t i = 0; i < cities.size(); ++i) {
      for (std::size_t j = i + 1; j < cities.size(); ++j) {
        if (beh.values[i][j] > beh.values[hi_a][hi_b]) hi_a = i, hi_b = j;
        if (beh.values[i][j] < beh.values[lo_a][lo_b]) lo_a = i, lo_b = j;
      }
    }
    auto emit = [&](const char* tag, std::size_t a, std::size_t b) {
      for (std::size_t k : {a, b}) {
        const auto top = top_transitions(transition_distribution(cities[k], true), 10);
        write_file(dir / (std::string("top10_") + tag + "_" + cities[k].city_id + ".csv"), top_transitions_csv(top));
      }
      pairs[tag] = {{"cities", {cities[a].city_id, cities[b].city_id}}, {"pearson", beh.values[a][b]}};
    };
    emit("most", hi_a, hi_b);
    emit("least", lo_a, lo_b);
  }
  std::cout << beh.to_csv();
  const GammaTable gammas = correlation_gammas(cities, c.target, c.meta.gamma_floor, c.meta.use_correlation);
  write_manifest(c, "analyze", {{"gammas", gammas}, {"extreme_pairs", pairs}});
  return 0;
}

int cmd_synth(const RunConfig& c) {
  const RunConfig filled = synthesize(c);
  json raws = json::object();
  for (const auto& city : filled.cities) raws[city.id] = city.raw.string();
  std::cout << raws.dump(2) << "\n";
  write_manifest(c, "synth", {{"raw", raws}});
  return 0;
}

MetaConfig stage_meta_config(const RunConfig& c) {
  MetaConfig mc = c.meta;
  mc.seed = derive_seed(c.seed, "meta");
  return mc;
}

int cmd_meta_train(const RunConfig& c) {
  const auto cities = load_or_ingest(c);
  MetaResult r = meta_train(cities, c.target, stage_meta_config(c), category_arch(c));
  save_checkpoint(r.state, c.out / "meta", {{"stage", "meta"}, {"gammas", r.gammas}});
  write_file(c.out / "meta" / "loss_trace.csv", r.trace_csv());
  write_manifest(c, "meta-train",
                 {{"gammas", r.gammas},
                  {"sampled_with_replacement", r.sampled_with_replacement},
                  {"final_query_loss", r.trace.empty() ? 0.0 : r.trace.back().total}});
  for (const auto& [city, g] : r.gammas) std::cout << city << " gamma=" << g << "\n";
  return 0;
}

int cmd_transfer(const RunConfig& c) {
  const auto cities = load_or_ingest(c);
  const ModelState meta_model = load_checkpoint(c.out / "meta");
  ModelState extended = freeze_and_extend(meta_model, c.freeze, derive_seed(c.seed, "extend"));
  FineTuneResult ft = fine_tune(extended, target_city(cities, c.target), c.freeze, derive_seed(c.seed, "finetune"));
  save_checkpoint(ft.state, c.out / "transfer", {{"stage", "transfer"}, {"finetune_loss", ft.epoch_loss}});
  write_manifest(c, "transfer", {{"finetune_loss", ft.epoch_loss}});
  return 0;
}

int cmd_train(const RunConfig& c, const std::string& from, bool no_category) {
  const auto cities = load_or_ingest(c);
  std::optional<ModelState> channel;
  if (!no_category) channel = load_checkpoint(from.empty() ? c.out / "transfer" : fs::path(from));
  TargetTrainResult r = train_target_model(channel ? &*channel : nullptr, target_city(cities, c.target), c.arch,
                                           c.train, derive_seed(c.seed, "target"));
  save_checkpoint(r.state, c.out / "target",
                  {{"stage", "target"},
                   {"epoch_loss", r.epoch_loss},
                   {"validation_hr10", r.validation_hr10},
                   {"best_epoch", r.best_epoch}});
  write_manifest(c, "train", {{"epoch_loss", r.epoch_loss}, {"best_epoch", r.best_epoch}});
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& from) {
  const auto cities = load_or_ingest(c);
  const CityDataset& target = target_city(cities, c.target);
  const ModelState model = load_checkpoint(from.empty() ? c.out / "target" : fs::path(from));
  const EvalReport report = evaluate(model, target.test(), c.ks, "model");
  const EvalReport pop = evaluate_ranking(mostpop_ranking(target.train(), target.num_pois()), target.test(), c.ks);
  write_file(c.out / "eval" / "report.json", report.to_json());
  write_file(c.out / "eval" / "report.csv", report.to_csv());
  write_file(c.out / "eval" / "mostpop.json", pop.to_json());
  std::cout << report.to_csv() << pop.to_csv();
  write_manifest(c, "eval", {{"report", json::parse(report.to_json())}});
  return 0;
}

int cmd_pipeline(const RunConfig& c) {
  const auto cities = load_or_ingest(c);
  const fs::path stages = c.out / "stages";
  PipelineResult r = run_pipeline(cities, c, Variant::kFull, &stages);
  write_file(c.out / "report.json", r.report.to_json());
  write_file(c.out / "report.csv", r.report.to_csv());
  write_file(c.out / "mostpop.json", r.mostpop.to_json());
  std::cout << r.report.to_csv() << r.mostpop.to_csv();
  write_manifest(c, "pipeline",
                 {{"gammas", r.gammas},
                  {"resumed_stages", r.resumed_stages},
                  {"sampled_with_replacement", r.meta && r.meta->sampled_with_replacement},
                  {"report", json::parse(r.report.to_json())}});
  return 0;
}

int cmd_ablate(const RunConfig& c, const std::vector<std::string>& names) {
  const auto cities = load_or_ingest(c);
  std::vector<Variant> variants;
  if (names.empty()) variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
  for (const auto& n : names) variants.push_back(parse_variant(n));
  std::vector<EvalReport> reports;
  std::optional<EvalReport> pop;
  for (Variant v : variants) {
    const fs::path stages = c.out / "ablate" / safe_name(variant_name(v));
    PipelineResult r = run_pipeline(cities, c, v, &stages);
    reports.push_back(r.report);
    pop = r.mostpop;
  }
  if (pop) reports.push_back(*pop);
  const std::string csv = ablation_csv(reports, c.seed);
  write_file(c.out / "ablation.csv", csv);
  std::cout << csv;
  write_manifest(c, "ablate");
  return 0;
}

int cmd_sweep(const RunConfig& c, const std::string& param, std::vector<int> values) {
  const SweepParam p = parse_sweep_param(param);
  if (values.empty()) {
    values = p == SweepParam::kLocalSteps ? std::vector<int>{1, 2, 3, 4, 5} : std::vector<int>{1, 2, 3, 4};
  }
  const auto cities = load_or_ingest(c);
  const auto rows = sensitivity_sweep(p, values, cities, c);
  const std::string csv = sweep_csv(rows, c.seed);
  write_file(c.out / ("sweep_" + std::string(sweep_param_name(p)) + ".csv"), csv);
  std::cout << csv;
  json seconds = json::array();
  for (const auto& r : rows) seconds.push_back({{"value", r.value}, {"seconds", r.seconds}});
  write_manifest(c, "sweep", {{"param", sweep_param_name(p)}, {"timing", seconds}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"correlation-weighted meta-learning for next-POI recommendation"};
  app.require_subcommand(1);
  Overrides o;
  std::string from;
  bool no_category = false;
  std::vector<std::string> variants;
  std::string sweep_param = "local_steps";
  std::vector<int> sweep_values;

  auto* ingest = app.add_subcommand("ingest", "parse, filter, sequence and split every city");
  auto* analyze = app.add_subcommand("analyze", "category distributions and cross-city correlations");
  auto* synth = app.add_subcommand("synth", "generate synthetic check-in logs from the config's synth block");
  auto* meta = app.add_subcommand("meta-train", "category-level meta-training over all cities");
  auto* transfer = app.add_subcommand("transfer", "freeze, extend and fine-tune on the target city");
  auto* train = app.add_subcommand("train", "train the POI channel and decoder on the target city");
  auto* eval = app.add_subcommand("eval", "HR@K / NDCG@K of a trained model and MostPop");
  auto* pipeline = app.add_subcommand("pipeline", "all stages end to end, checkpointed and resumable");
  auto* ablate = app.add_subcommand("ablate", "run the ablation variants");
  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over local steps or frozen layers");
  for (auto* cmd : {ingest, analyze, synth, meta, transfer, train, eval, pipeline, ablate, sweep}) add_common(cmd, o);
  train->add_option("--from", from, "category channel checkpoint (default OUT/transfer)");
  train->add_flag("--no-category", no_category, "train without a category channel");
  eval->add_option("--from", from, "model checkpoint (default OUT/target)");
  ablate->add_option("--variant", variants, "MERec, w/o-cor, w/o-frz, w/o-cor-frz, w/o-cat (default all)");
  sweep->add_option("--param", sweep_param, "local_steps or l");
  sweep->add_option("--values", sweep_values, "values to sweep")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig config;
  try {
    config = resolve(o);
    if (!synth->parsed()) config.validate();
    if (ingest->parsed()) return cmd_ingest(config);
    if (analyze->parsed()) return cmd_analyze(config);
    if (synth->parsed()) return cmd_synth(config);
    if (meta->parsed()) return cmd_meta_train(config);
    if (transfer->parsed()) return cmd_transfer(config);
    if (train->parsed()) return cmd_train(config, from, no_category);
    if (eval->parsed()) return cmd_eval(config, from);
    if (pipeline->parsed()) return cmd_pipeline(config);
    if (ablate->parsed()) return cmd_ablate(config, variants);
    if (sweep->parsed()) return cmd_sweep(config, sweep_param, sweep_values);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const MetaTrainingDiverged& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    try {
      save_checkpoint(e.last_finite, config.out / "last_finite", {{"iteration", e.iteration}});
      std::cerr << "last finite parameters written to " << (config.out / "last_finite").string() << "\n";
    } catch (const std::exception&) {
    }
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
