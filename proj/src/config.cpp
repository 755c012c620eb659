#include "metapoi/config.hpp"

#include <fstream>

#include "metapoi/errors.hpp"
#include "metapoi/hashing.hpp"

namespace metapoi {

std::string_view order_name(MetaOrder order) { return order == MetaOrder::kFirst ? "first" : "second"; }

MetaOrder parse_order(std::string_view name) {
  if (name == "first" || name == "first-order") return MetaOrder::kFirst;
  if (name == "second" || name == "second-order") return MetaOrder::kSecond;
  throw ConfigError("order must be 'first' or 'second', got '" + std::string(name) + "'");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["cities"] = nlohmann::json::array();
  for (const auto& c : cities) {
    j["cities"].push_back({{"id", c.id}, {"raw", c.raw.generic_string()}, {"dataset", c.dataset.generic_string()}});
  }
  j["target"] = target;
  j["schema"] = {{"user", schema.user},
                 {"poi", schema.poi},
                 {"category", schema.category},
                 {"latitude", schema.latitude},
                 {"longitude", schema.longitude},
                 {"timestamp", schema.timestamp},
                 {"tz_offset", schema.tz_offset},
                 {"delimiter", schema.delimiter == '\0' ? std::string("auto") : std::string(1, schema.delimiter)},
                 {"category_aliases", schema.category_aliases},
                 {"skip_unknown_categories", schema.skip_unknown_categories}};
  j["filter"] = {{"min_user", min_user}, {"min_poi", min_poi}};
  j["model"] = {{"embed_dim", arch.embed_dim}, {"hidden", arch.hidden}, {"cat_layers", arch.cat_layers}};
  j["meta"] = {{"alpha", meta.alpha},
               {"beta", meta.beta},
               {"N", meta.support_size},
               {"iters", meta.iterations},
               {"city_batch", meta.city_batch},
               {"local_steps", meta.local_steps},
               {"order", order_name(meta.order)},
               {"gamma_floor", meta.gamma_floor},
               {"use_correlation", meta.use_correlation}};
  j["freeze"] = {{"l", freeze.frozen_layers},
                 {"n", freeze.added_layers},
                 {"keep_discarded", freeze.keep_discarded},
                 {"finetune_epochs", freeze.finetune_epochs},
                 {"finetune_lr", freeze.finetune_lr},
                 {"batch_size", freeze.batch_size}};
  j["train"] = {{"epochs", train.epochs},
                {"lr", train.lr},
                {"batch_size", train.batch_size},
                {"patience", train.patience},
                {"all_prefix", train.all_prefix},
                {"poi_layers", train.poi_layers}};
  j["eval"] = {{"ks", ks}};
  j["out"] = out.generic_string();
  j["seed"] = seed;
  if (synth) j["synth"] = *synth;
  return j;
}

std::string RunConfig::fingerprint() const {
  nlohmann::json j = to_json();
  j.erase("out");
  return hex64(fnv1a(j.dump()));
}

void RunConfig::validate() const {
  if (cities.empty()) throw ConfigError("no cities configured");
  bool found = false;
  for (const auto& c : cities) found |= c.id == target;
  if (!found) throw ConfigError("target city '" + target + "' is not among the configured cities");
  if (!(meta.alpha > 0.0) || !(meta.beta > 0.0)) throw ConfigError("alpha and beta must be > 0");
  if (meta.support_size < 1) throw ConfigError("N must be >= 1");
  if (meta.iterations < 1) throw ConfigError("Iter must be >= 1");
  if (meta.local_steps < 1) throw ConfigError("local_steps must be >= 1");
  if (freeze.frozen_layers < 1 || freeze.frozen_layers > arch.cat_layers + 1) {
    throw ConfigError("l must lie in [1, " + std::to_string(arch.cat_layers + 1) + "]");
  }
  if (freeze.added_layers < 0) throw ConfigError("n must be >= 0");
  if (ks.empty()) throw ConfigError("eval K list is empty");
  for (int k : ks) {
    if (k < 1) throw ConfigError("K must be >= 1");
  }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("cities")) {
      for (const auto& jc : j["cities"]) {
        CityInput in;
        in.id = jc.at("id").get<std::string>();
        in.raw = jc.value("raw", std::string());
        in.dataset = jc.value("dataset", std::string());
        c.cities.push_back(std::move(in));
      }
    }
    c.target = j.value("target", std::string());
    if (j.contains("schema")) {
      const auto& s = j["schema"];
      c.schema.user = s.value("user", c.schema.user);
      c.schema.poi = s.value("poi", c.schema.poi);
      c.schema.category = s.value("category", c.schema.category);
      c.schema.latitude = s.value("latitude", c.schema.latitude);
      c.schema.longitude = s.value("longitude", c.schema.longitude);
      c.schema.timestamp = s.value("timestamp", c.schema.timestamp);
      c.schema.tz_offset = s.value("tz_offset", c.schema.tz_offset);
      const auto delim = s.value("delimiter", std::string("auto"));
      if (delim == "tab" || delim == "\t") c.schema.delimiter = '\t';
      else if (delim == "comma" || delim == ",") c.schema.delimiter = ',';
      else if (delim != "auto") throw ConfigError("delimiter must be auto, tab or comma");
      if (s.contains("category_aliases")) c.schema.category_aliases = s["category_aliases"].get<std::map<std::string, int>>();
      c.schema.skip_unknown_categories = s.value("skip_unknown_categories", false);
    }
    if (j.contains("filter")) {
      c.min_user = j["filter"].value("min_user", c.min_user);
      c.min_poi = j["filter"].value("min_poi", c.min_poi);
    }
    if (j.contains("model")) {
      c.arch.embed_dim = j["model"].value("embed_dim", c.arch.embed_dim);
      c.arch.hidden = j["model"].value("hidden", c.arch.hidden);
      c.arch.cat_layers = j["model"].value("cat_layers", c.arch.cat_layers);
    }
    if (j.contains("meta")) {
      const auto& m = j["meta"];
      c.meta.alpha = m.value("alpha", c.meta.alpha);
      c.meta.beta = m.value("beta", c.meta.beta);
      c.meta.support_size = m.value("N", c.meta.support_size);
      c.meta.iterations = m.value("iters", c.meta.iterations);
      c.meta.city_batch = m.value("city_batch", c.meta.city_batch);
      c.meta.local_steps = m.value("local_steps", c.meta.local_steps);
      c.meta.order = parse_order(m.value("order", std::string("first")));
      c.meta.gamma_floor = m.value("gamma_floor", c.meta.gamma_floor);
      c.meta.use_correlation = m.value("use_correlation", c.meta.use_correlation);
    }
    if (j.contains("freeze")) {
      const auto& f = j["freeze"];
      c.freeze.frozen_layers = f.value("l", c.freeze.frozen_layers);
      c.freeze.added_layers = f.value("n", c.freeze.added_layers);
      c.freeze.keep_discarded = f.value("keep_discarded", c.freeze.keep_discarded);
      c.freeze.finetune_epochs = f.value("finetune_epochs", c.freeze.finetune_epochs);
      c.freeze.finetune_lr = f.value("finetune_lr", c.freeze.finetune_lr);
      c.freeze.batch_size = f.value("batch_size", c.freeze.batch_size);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.patience = t.value("patience", c.train.patience);
      c.train.all_prefix = t.value("all_prefix", c.train.all_prefix);
      c.train.poi_layers = t.value("poi_layers", c.train.poi_layers);
    }
    if (j.contains("eval")) c.ks = j["eval"].value("ks", c.ks);
    c.out = j.value("out", std::string("run"));
    c.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("synth")) c.synth = j["synth"];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace metapoi
