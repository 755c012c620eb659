#include "metapoi/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "metapoi/checkpoint.hpp"
#include "metapoi/errors.hpp"
#include "metapoi/hashing.hpp"

namespace metapoi {

namespace {

namespace fs = std::filesystem;

bool uses_correlation(Variant v) { return v == Variant::kFull || v == Variant::kNoFreeze; }
bool uses_transfer(Variant v) { return v == Variant::kFull || v == Variant::kNoCorrelation; }

std::optional<ModelState> try_resume(const fs::path* stage_dir, const std::string& stage, const std::string& key,
                                     nlohmann::json* extra) {
  if (!stage_dir || !fs::exists(*stage_dir / stage / "manifest.json")) return std::nullopt;
  nlohmann::json e;
  ModelState s = load_checkpoint(*stage_dir / stage, &e);
  if (e.value("stage_key", std::string()) != key) return std::nullopt;
  if (extra) *extra = e;
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "MERec";
    case Variant::kNoCorrelation:
      return "w/o-cor";
    case Variant::kNoFreeze:
      return "w/o-frz";
    case Variant::kNoCorrelationFreeze:
      return "w/o-cor-frz";
    case Variant::kNoCategory:
      return "w/o-cat";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  if (name == "full") return Variant::kFull;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

void check_freeze_contract(std::span<const StageSnapshot> snapshots) {
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    for (const auto& [name, hash] : snapshots[i].frozen) {
      for (std::size_t j = i + 1; j < snapshots.size(); ++j) {
        const auto it = snapshots[j].frozen.find(name);
        if (it == snapshots[j].frozen.end() || it->second != hash) {
          throw NumericalError("frozen tensor '" + name + "' changed between stages '" + snapshots[i].stage +
                               "' and '" + snapshots[j].stage + "'");
        }
      }
    }
  }
}

const CityDataset& target_city(std::span<const CityDataset> cities, const std::string& id) {
  for (const auto& c : cities) {
    if (c.city_id == id) return c;
  }
  throw ConfigError("target city '" + id + "' not loaded");
}

PipelineResult run_pipeline(std::span<const CityDataset> cities, const RunConfig& config, Variant variant,
                            const fs::path* stage_dir) {
  const CityDataset& target = target_city(cities, config.target);
  const std::string key = config.fingerprint() + "/" + std::string(variant_name(variant));
  PipelineResult out;
  out.variant = variant;

  Architecture cat_arch = config.arch;
  cat_arch.poi_layers = 0;
  cat_arch.num_pois = 0;

  if (variant != Variant::kNoCategory) {
    MetaConfig mc = config.meta;
    mc.seed = derive_seed(config.seed, "meta");
    mc.use_correlation = config.meta.use_correlation && uses_correlation(variant);
    nlohmann::json extra;
    if (auto resumed = try_resume(stage_dir, "meta", key, &extra)) {
      MetaResult m;
      m.state = std::move(*resumed);
      m.gammas = extra.at("gammas").get<GammaTable>();
      m.sampled_with_replacement = extra.value("sampled_with_replacement", false);
      out.meta = std::move(m);
      out.resumed_stages.push_back("meta");
    } else {
      out.meta = meta_train(cities, config.target, mc, cat_arch);
      if (stage_dir) {
        save_checkpoint(out.meta->state, *stage_dir / "meta",
                        {{"stage", "meta"},
                         {"stage_key", key},
                         {"gammas", out.meta->gammas},
                         {"sampled_with_replacement", out.meta->sampled_with_replacement}});
        write_text(*stage_dir / "meta" / "loss_trace.csv", out.meta->trace_csv());
      }
    }
    out.gammas = out.meta->gammas;
    out.snapshots.push_back({"meta", frozen_tensor_hashes(out.meta->state)});

    if (uses_transfer(variant)) {
      if (auto resumed = try_resume(stage_dir, "transfer", key, &extra)) {
        out.category_channel = std::move(*resumed);
        out.finetune_loss = extra.value("finetune_loss", std::vector<double>{});
        out.resumed_stages.push_back("transfer");
      } else {
        ModelState extended = freeze_and_extend(out.meta->state, config.freeze, derive_seed(config.seed, "extend"));
        out.snapshots.push_back({"extend", frozen_tensor_hashes(extended)});
        FineTuneResult ft = fine_tune(extended, target, config.freeze, derive_seed(config.seed, "finetune"));
        out.category_channel = std::move(ft.state);
        out.finetune_loss = std::move(ft.epoch_loss);
        if (stage_dir) {
          save_checkpoint(*out.category_channel, *stage_dir / "transfer",
                          {{"stage", "transfer"}, {"stage_key", key}, {"finetune_loss", out.finetune_loss}});
        }
      }
      out.snapshots.push_back({"finetune", frozen_tensor_hashes(*out.category_channel)});
    } else {
      out.category_channel = out.meta->state;
    }
  }

  nlohmann::json extra;
  if (auto resumed = try_resume(stage_dir, "target", key, &extra)) {
    out.target.state = std::move(*resumed);
    out.target.epoch_loss = extra.value("epoch_loss", std::vector<double>{});
    out.target.validation_hr10 = extra.value("validation_hr10", std::vector<double>{});
    out.target.best_epoch = extra.value("best_epoch", 0);
    out.resumed_stages.push_back("target");
  } else {
    out.target = train_target_model(out.category_channel ? &*out.category_channel : nullptr, target, config.arch,
                                     config.train, derive_seed(config.seed, "target"));
    if (stage_dir) {
      save_checkpoint(out.target.state, *stage_dir / "target",
                      {{"stage", "target"},
                       {"stage_key", key},
                       {"epoch_loss", out.target.epoch_loss},
                       {"validation_hr10", out.target.validation_hr10},
                       {"best_epoch", out.target.best_epoch}});
    }
  }
  out.snapshots.push_back({"target", frozen_tensor_hashes(out.target.state)});
  check_freeze_contract(out.snapshots);

  out.report = evaluate(out.target.state, target.test(), config.ks, std::string(variant_name(variant)));
  out.mostpop = evaluate_ranking(mostpop_ranking(target.train(), target.num_pois()), target.test(), config.ks);
  return out;
}

SweepParam parse_sweep_param(std::string_view name) {
  if (name == "local_steps" || name == "local-steps") return SweepParam::kLocalSteps;
  if (name == "l" || name == "frozen_layers" || name == "frozen-layers") return SweepParam::kFrozenLayers;
  throw ConfigError("sweep parameter must be 'local_steps' or 'l'");
}

std::string_view sweep_param_name(SweepParam p) { return p == SweepParam::kLocalSteps ? "local_steps" : "l"; }

std::vector<SweepRow> sensitivity_sweep(SweepParam param, const std::vector<int>& values,
                                        std::span<const CityDataset> cities, const RunConfig& config) {
  std::vector<SweepRow> rows;
  for (int v : values) {
    RunConfig c = config;
    if (param == SweepParam::kLocalSteps) c.meta.local_steps = v;
    else c.freeze.frozen_layers = v;
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    PipelineResult r = run_pipeline(cities, c, Variant::kFull);
    const auto t1 = std::chrono::steady_clock::now();
    rows.push_back({std::string(sweep_param_name(param)), v, std::move(r.report),
                    std::chrono::duration<double>(t1 - t0).count()});
  }
  return rows;
}

std::string ablation_csv(std::span<const EvalReport> reports, std::uint64_t seed) {
  std::ostringstream out;
  out.precision(17);
  out << "variant,K,metric,value,seed\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      out << r.variant << ',' << r.ks[i] << ",HR," << r.hr[i] << ',' << seed << '\n';
      out << r.variant << ',' << r.ks[i] << ",NDCG," << r.ndcg[i] << ',' << seed << '\n';
    }
  }
  return out.str();
}

std::string sweep_csv(std::span<const SweepRow> rows, std::uint64_t seed) {
  std::ostringstream out;
  out.precision(17);
  out << "param,value,K,metric,metric_value,seed\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.report.ks.size(); ++i) {
      out << row.param << ',' << row.value << ',' << row.report.ks[i] << ",HR," << row.report.hr[i] << ',' << seed
          << '\n';
      out << row.param << ',' << row.value << ',' << row.report.ks[i] << ",NDCG," << row.report.ndcg[i] << ','
          << seed << '\n';
    }
  }
  return out.str();
}

CityDataset ingest_city(const CityInput& input, const RunConfig& config) {
  if (input.raw.empty()) throw ConfigError("city '" + input.id + "' has no raw check-in path");
  if (!fs::exists(input.raw)) throw DataError("missing check-in file " + input.raw.string());
  ParseResult parsed = parse_checkins(input.raw, config.schema);
  return build_city_dataset(input.id, std::move(parsed.records), config.min_user, config.min_poi);
}

std::vector<CityDataset> load_or_ingest(const RunConfig& config) {
  std::vector<CityDataset> cities;
  for (const auto& c : config.cities) {
    const fs::path dir = c.dataset.empty() ? config.out / "datasets" / c.id : c.dataset;
    if (fs::exists(dir / "sequences.tsv")) {
      cities.push_back(load_dataset(dir));
      if (cities.back().city_id != c.id) throw DataError("dataset in " + dir.string() + " is not city '" + c.id + "'");
    } else if (!c.raw.empty()) {
      cities.push_back(ingest_city(c, config));
      save_dataset(cities.back(), dir);
    } else {
      throw DataError("no dataset or raw log for city '" + c.id + "'");
    }
  }
  return cities;
}

RunConfig synthesize(const RunConfig& config) {
  if (!config.synth) throw ConfigError("config has no 'synth' block");
  const SyntheticSpec spec = synthetic_spec_from_json(*config.synth);
  RunConfig out = config;
  for (const auto& city : spec.cities) {
    const fs::path path = config.out / "raw" / (city.city_id + ".csv");
    write_checkins_csv(generate_city(city, derive_seed(spec.seed, city.city_id)), path);
    auto it = std::find_if(out.cities.begin(), out.cities.end(), [&](const CityInput& c) { return c.id == city.city_id; });
    if (it == out.cities.end()) {
      out.cities.push_back({city.city_id, path, {}});
    } else {
      it->raw = path;
    }
  }
  return out;
}

std::string stats_csv(std::span<const CityDataset> cities) {
  std::ostringstream out;
  out.precision(6);
  out << "city,users,pois,checkins,density_percent,sequences,train,val,test\n";
  for (const auto& c : cities) {
    out << c.city_id << ',' << c.stats.users << ',' << c.stats.pois << ',' << c.stats.checkins << ','
        << 100.0 * c.stats.density << ',' << c.sequences.size() << ',' << c.train().size() << ','
        << c.validation().size() << ',' << c.test().size() << '\n';
  }
  return out.str();
}

}  // namespace metapoi
