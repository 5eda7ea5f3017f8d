#include "covdistill/experiment.hpp"

#include <fstream>
#include <set>

#include "covdistill/config_json.hpp"
#include "covdistill/digest.hpp"

namespace covdistill {

using nlohmann::json;

namespace {

struct DerivedSeeds {
  std::uint64_t generator, teacher, split, init, shuffle;
};

DerivedSeeds derive_seeds(std::uint64_t seed) {
  return {Rng::derive(seed, "generator"), Rng::derive(seed, "teacher"), Rng::derive(seed, "split"),
          Rng::derive(seed, "init"), Rng::derive(seed, "shuffle")};
}

void set_path(json& root, const std::string& dotted, const json& value) {
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorKind::Config, "malformed override key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  const auto d = derive_seeds(seed);
  c.generator.seed = d.generator;
  c.generator.signal_strength = kDeskSignalStrength;
  c.teacher.seed = d.teacher;
  c.split_seed = d.split;
  c.model.init_seed = d.init;
  c.train.shuffle_seed = d.shuffle;
  return c;
}

json ExperimentConfig::to_json() const {
  json parts = json::array();
  for (const auto& p : split_parts) parts.push_back({{"name", p.name}, {"proportion", p.proportion}});
  return json{{"seed", seed},
              {"taxonomy", {{"path", taxonomy_path}, {"profile", taxonomy_profile}}},
              {"generator", generator},
              {"teacher", teacher},
              {"splits", {{"seed", split_seed}, {"parts", parts}}},
              {"model", model},
              {"train", train},
              {"ablation", ablation},
              {"bench", {{"reps", bench.reps}, {"batch_size", bench.batch_size}, {"n_scenes", bench_scenes}}},
              {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "experiment config must be a JSON object");
  static const std::set<std::string> known{"seed",  "taxonomy", "generator", "teacher", "splits",
                                           "model", "train",    "ablation",  "bench",   "output_dir"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error(ErrorKind::Config, "unknown experiment key '" + k + "'");
  }
  try {
    ExperimentConfig c = defaults(j.value("seed", std::uint64_t{2024}));
    if (auto it = j.find("taxonomy"); it != j.end()) {
      for (const auto& [k, v] : it->items()) {
        if (k != "path" && k != "profile") throw Error(ErrorKind::Config, "unknown taxonomy key '" + k + "'");
      }
      c.taxonomy_path = it->value("path", c.taxonomy_path);
      c.taxonomy_profile = it->value("profile", c.taxonomy_profile);
    }
    // Explicitly pinned child seeds win over derived ones; from_json keeps
    // the current value when a key is absent.
    if (j.contains("generator")) j.at("generator").get_to(c.generator);
    if (j.contains("teacher")) j.at("teacher").get_to(c.teacher);
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("ablation")) j.at("ablation").get_to(c.ablation);
    if (auto it = j.find("splits"); it != j.end()) {
      for (const auto& [k, v] : it->items()) {
        if (k != "seed" && k != "parts") throw Error(ErrorKind::Config, "unknown splits key '" + k + "'");
      }
      c.split_seed = it->value("seed", c.split_seed);
      if (it->contains("parts")) {
        c.split_parts.clear();
        for (const auto& p : it->at("parts")) {
          c.split_parts.push_back({p.at("name").get<std::string>(), p.at("proportion").get<double>()});
        }
      }
    }
    if (auto it = j.find("bench"); it != j.end()) {
      for (const auto& [k, v] : it->items()) {
        if (k != "reps" && k != "batch_size" && k != "n_scenes") {
          throw Error(ErrorKind::Config, "unknown bench key '" + k + "'");
        }
      }
      c.bench.reps = it->value("reps", c.bench.reps);
      c.bench.batch_size = it->value("batch_size", c.bench.batch_size);
      c.bench_scenes = it->value("n_scenes", c.bench_scenes);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides) {
  json j = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::Io, "cannot open config " + file->string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Config, file->string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_path(j, key, value);
  }
  return from_json(j);
}

std::uint64_t ExperimentConfig::digest() const { return json_digest(to_json()); }

Taxonomy ExperimentConfig::taxonomy() const {
  return taxonomy_path.empty() ? Taxonomy::builtin(taxonomy_profile) : Taxonomy::load(taxonomy_path, taxonomy_profile);
}

void ExperimentConfig::validate(const Taxonomy& tax) const {
  generator.validate(tax.label_count());
  model.validate();
  train.validate();
  ablation.validate();
  if (model.embed_dim != generator.embed_dim) {
    throw Error(ErrorKind::Config, "model.embed_dim " + std::to_string(model.embed_dim) + " differs from generator.embed_dim " +
                                       std::to_string(generator.embed_dim));
  }
  if (model.n_labels != tax.label_count()) {
    throw Error(ErrorKind::Config, "model.n_labels " + std::to_string(model.n_labels) + " differs from the taxonomy's " +
                                       std::to_string(tax.label_count()) + " labels");
  }
  for (const auto& g : tax.active_groups()) teacher.target(g);
  std::set<std::string> names;
  for (const auto& p : split_parts) names.insert(p.name);
  for (const char* needed : {"surrogate_train", "surrogate_val", "surrogate_test"}) {
    if (!names.count(needed)) throw Error(ErrorKind::Config, std::string("split part '") + needed + "' missing");
  }
}

Corpus build_corpus(const ExperimentConfig& cfg) { return build_corpus(cfg, cfg.taxonomy()); }

Corpus build_corpus(const ExperimentConfig& cfg, const Taxonomy& tax) {
  cfg.validate(tax);
  Corpus c{tax, resolve_prevalence(cfg.generator, tax.label_count()), {}, {}, {}};
  c.teacher = calibrate_teacher(cfg.teacher, tax, c.prevalence);
  c.scenes = generate(cfg.generator, tax);
  apply_teacher(c.scenes, c.teacher);
  c.split = split(c.scenes.size(), cfg.split_parts, cfg.split_seed);
  return c;
}

DatasetHeader dataset_header(const ExperimentConfig& cfg, const Taxonomy& tax) {
  DatasetHeader h;
  h.embed_dim = cfg.generator.embed_dim;
  h.n_labels = tax.label_count();
  h.taxonomy_digest = hex64(tax.digest());
  h.generator_digest = hex64(config_digest(cfg.generator));
  h.teacher_digest = hex64(config_digest(cfg.teacher));
  return h;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["config_digest"] = m.config_digest;
  j["tool_version"] = m.tool_version;
  j["inputs"] = json::object();
  j["outputs"] = json::object();
  for (const auto& p : m.inputs) j["inputs"][p.generic_string()] = hex64(file_digest(p));
  for (const auto& p : m.outputs) j["outputs"][p.generic_string()] = hex64(file_digest(p));
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace covdistill
