#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metapoi/config.hpp"
#include "metapoi/correlation.hpp"
#include "metapoi/data.hpp"
#include "metapoi/eval.hpp"
#include "metapoi/meta.hpp"
#include "metapoi/synth.hpp"

namespace metapoi {

enum class Variant { kFull, kNoCorrelation, kNoFreeze, kNoCorrelationFreeze, kNoCategory };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::kFull, Variant::kNoCorrelation, Variant::kNoFreeze,
                                           Variant::kNoCorrelationFreeze, Variant::kNoCategory};

/// Hashes of the frozen tensors at one stage boundary.
struct StageSnapshot {
  std::string stage;
  std::map<std::string, std::uint64_t> frozen;
};

struct PipelineResult {
  Variant variant = Variant::kFull;
  GammaTable gammas;
  std::optional<MetaResult> meta;
  std::optional<ModelState> category_channel;  // after transfer (or the meta model for w/o-frz)
  std::vector<double> finetune_loss;
  TargetTrainResult target;
  EvalReport report;
  EvalReport mostpop;
  std::vector<StageSnapshot> snapshots;
  std::vector<std::string> resumed_stages;
};

/// Throws NumericalError when a tensor frozen at an earlier boundary has
/// changed by a later one.
void check_freeze_contract(std::span<const StageSnapshot> snapshots);

/// meta-train -> freeze/extend -> fine-tune -> target training -> evaluation,
/// with the stages skipped or replaced as `variant` requires. When
/// `stage_dir` is given every stage is checkpointed there and reloaded on a
/// later call with the same config.
PipelineResult run_pipeline(std::span<const CityDataset> cities, const RunConfig& config, Variant variant,
                            const std::filesystem::path* stage_dir = nullptr);

const CityDataset& target_city(std::span<const CityDataset> cities, const std::string& id);

struct SweepRow {
  std::string param;
  int value = 0;
  EvalReport report;
  double seconds = 0.0;
};

enum class SweepParam { kLocalSteps, kFrozenLayers };
SweepParam parse_sweep_param(std::string_view name);
std::string_view sweep_param_name(SweepParam p);

/// One full pipeline per value with a shared seed.
std::vector<SweepRow> sensitivity_sweep(SweepParam param, const std::vector<int>& values,
                                        std::span<const CityDataset> cities, const RunConfig& config);

/// Long format: variant,K,metric,value,seed
std::string ablation_csv(std::span<const EvalReport> reports, std::uint64_t seed);
/// Long format: param,value,K,metric,metric_value,seed
std::string sweep_csv(std::span<const SweepRow> rows, std::uint64_t seed);

/// Parse, filter, sequence and split one configured city.
CityDataset ingest_city(const CityInput& input, const RunConfig& config);

/// Loads serialized datasets, ingesting raw logs (into out/datasets) when a
/// city has no dataset directory yet.
std::vector<CityDataset> load_or_ingest(const RunConfig& config);

/// Writes one CSV per city from the `synth` block of the config and returns
/// the config with raw paths filled in.
RunConfig synthesize(const RunConfig& config);

/// users, pois, checkins, density and split sizes per city.
std::string stats_csv(std::span<const CityDataset> cities);

}  // namespace metapoi
