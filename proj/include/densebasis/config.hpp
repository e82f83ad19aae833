#pragma once

// JSON run configuration (schema 1). Every section is optional and falls back
// to library defaults; unknown keys are rejected at every level so typos
// surface as errors instead of silently using a default.

#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "densebasis/evaluation.hpp"

namespace densebasis {

using Json = nlohmann::ordered_json;

constexpr int kConfigSchema = 1;

/// Everything a command may need: an experiment plus file plumbing.
struct RunConfig {
  std::uint64_t seed = 1;
  ExperimentConfig experiment;
  MatrixFormat format = MatrixFormat::dmat;
  std::string dataset;  // manifest path; empty means generate from `cohort`
  std::string out;      // output directory or file, command dependent

  /// Experiment with the top-level seed applied to cohort and training.
  ExperimentConfig resolved_experiment() const { return experiment.with_seed(seed); }
};

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw InvalidInput("config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidInput("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_field(const Json& obj, const char* key, T& into, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidInput("config: '" + where + "." + key + "' has the wrong type");
  }
}

// Integer fields: refuse 3.5 and negative counts instead of truncating.
inline void read_index(const Json& obj, const char* key, Index& into, const std::string& where) {
  if (!obj.contains(key)) return;
  const Json& v = obj.at(key);
  if (!v.is_number_integer()) throw InvalidInput("config: '" + where + "." + key + "' must be an integer");
  into = v.get<Index>();
}

inline void read_int(const Json& obj, const char* key, int& into, const std::string& where) {
  Index tmp = into;
  read_index(obj, key, tmp, where);
  into = static_cast<int>(tmp);
}

}  // namespace detail

inline Json to_json(const CohortConfig& c) {
  return Json{{"n_patients", c.n_patients},
              {"windows_per_patient", c.windows_per_patient},
              {"ambient_dim", c.ambient_dim},
              {"latent_dim", c.latent_dim},
              {"n_clusters", c.n_clusters},
              {"drift_rate", c.drift_rate},
              {"noise_sigma", c.noise_sigma},
              {"missing_rate", c.missing_rate},
              {"cluster_separation", c.cluster_separation},
              {"latent_decay", c.latent_decay},
              {"seed", c.seed}};
}

inline CohortConfig cohort_config_from_json(const Json& j, CohortConfig c = {}, bool allow_seed = true) {
  const std::string w = "cohort";
  if (allow_seed)
    detail::reject_unknown(j, {"n_patients", "windows_per_patient", "ambient_dim", "latent_dim", "n_clusters",
                               "drift_rate", "noise_sigma", "missing_rate", "cluster_separation", "latent_decay",
                               "seed"},
                           w);
  else
    detail::reject_unknown(j, {"n_patients", "windows_per_patient", "ambient_dim", "latent_dim", "n_clusters",
                               "drift_rate", "noise_sigma", "missing_rate", "cluster_separation", "latent_decay"},
                           w);
  detail::read_index(j, "n_patients", c.n_patients, w);
  detail::read_index(j, "windows_per_patient", c.windows_per_patient, w);
  detail::read_index(j, "ambient_dim", c.ambient_dim, w);
  detail::read_index(j, "latent_dim", c.latent_dim, w);
  detail::read_index(j, "n_clusters", c.n_clusters, w);
  detail::read_field(j, "drift_rate", c.drift_rate, w);
  detail::read_field(j, "noise_sigma", c.noise_sigma, w);
  detail::read_field(j, "missing_rate", c.missing_rate, w);
  detail::read_field(j, "cluster_separation", c.cluster_separation, w);
  detail::read_field(j, "latent_decay", c.latent_decay, w);
  if (allow_seed) detail::read_field(j, "seed", c.seed, w);
  return c;
}

inline Json to_json(const TrainConfig& t) {
  return Json{{"lambda_sub", t.weights.lambda_sub},
              {"lambda_orth", t.weights.lambda_orth},
              {"lambda_spec", t.weights.lambda_spec},
              {"k_sub", t.k_sub},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"learning_rate", t.learning_rate},
              {"moment_decays", Json::array({t.moment_decays.first, t.moment_decays.second})},
              {"running_cov_decay", t.running_cov_decay},
              {"unroll_iters", t.unroll_iters}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig t = {}) {
  const std::string w = "train";
  detail::reject_unknown(j, {"lambda_sub", "lambda_orth", "lambda_spec", "k_sub", "batch_size", "epochs",
                             "learning_rate", "moment_decays", "running_cov_decay", "unroll_iters"},
                         w);
  detail::read_field(j, "lambda_sub", t.weights.lambda_sub, w);
  detail::read_field(j, "lambda_orth", t.weights.lambda_orth, w);
  detail::read_field(j, "lambda_spec", t.weights.lambda_spec, w);
  detail::read_index(j, "k_sub", t.k_sub, w);
  detail::read_index(j, "batch_size", t.batch_size, w);
  detail::read_int(j, "epochs", t.epochs, w);
  detail::read_field(j, "learning_rate", t.learning_rate, w);
  if (j.contains("moment_decays")) {
    const Json& m = j.at("moment_decays");
    if (!m.is_array() || m.size() != 2 || !m[0].is_number() || !m[1].is_number())
      throw InvalidInput("config: 'train.moment_decays' must be an array of two numbers");
    t.moment_decays = {m[0].get<double>(), m[1].get<double>()};
  }
  detail::read_field(j, "running_cov_decay", t.running_cov_decay, w);
  detail::read_int(j, "unroll_iters", t.unroll_iters, w);
  return t;
}

inline Json to_json(const ProbeOptions& p) {
  return Json{{"lambda_grid", p.lambda_grid},
              {"train_fraction", p.train_fraction},
              {"validation_fraction", p.validation_fraction},
              {"kmeans_restarts", p.kmeans_restarts},
              {"shuffle_labels", p.shuffle_labels}};
}

inline ProbeOptions probe_options_from_json(const Json& j, ProbeOptions p = {}) {
  const std::string w = "probe";
  detail::reject_unknown(j, {"lambda_grid", "train_fraction", "validation_fraction", "kmeans_restarts", "shuffle_labels"},
                         w);
  detail::read_field(j, "lambda_grid", p.lambda_grid, w);
  detail::read_field(j, "train_fraction", p.train_fraction, w);
  detail::read_field(j, "validation_fraction", p.validation_fraction, w);
  detail::read_int(j, "kmeans_restarts", p.kmeans_restarts, w);
  detail::read_field(j, "shuffle_labels", p.shuffle_labels, w);
  for (double l : p.lambda_grid) require(std::isfinite(l) && l > 0.0, "config: probe.lambda_grid entries must be > 0");
  require(p.train_fraction > 0.0 && p.train_fraction < 1.0, "config: probe.train_fraction must lie in (0, 1)");
  require(p.validation_fraction > 0.0 && p.validation_fraction < 1.0,
          "config: probe.validation_fraction must lie in (0, 1)");
  require(p.kmeans_restarts >= 1, "config: probe.kmeans_restarts must be >= 1");
  return p;
}

/// Resolved configuration, every field spelled out.
inline Json to_json(const RunConfig& rc) {
  const ExperimentConfig& e = rc.experiment;
  Json cohort = to_json(e.cohort);
  cohort.erase("seed");  // the top-level seed owns it
  Json j{{"schema", kConfigSchema},
         {"seed", rc.seed},
         {"cohort", cohort},
         {"encoder",
          {{"kind", encoder_kind_name(e.encoder_kind)}, {"hidden_dim", e.hidden_dim}, {"embedding_dim", e.embedding_dim}}},
         {"train", to_json(e.train)},
         {"probe", to_json(e.probe)},
         {"eval_k", e.eval_k},
         {"format", format_name(rc.format)},
         {"dataset", rc.dataset},
         {"out", rc.out}};
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::reject_unknown(j, {"schema", "seed", "cohort", "encoder", "train", "probe", "eval_k", "format", "dataset", "out"},
                         "top level");
  if (!j.contains("schema")) throw InvalidInput("config: missing 'schema'");
  if (!j.at("schema").is_number_integer() || j.at("schema").get<int>() != kConfigSchema)
    throw InvalidInput("config: unsupported schema " + j.at("schema").dump() + " (expected 1)");

  RunConfig rc;
  ExperimentConfig& e = rc.experiment;
  detail::read_field(j, "seed", rc.seed, "config");
  if (j.contains("cohort")) e.cohort = cohort_config_from_json(j.at("cohort"), e.cohort, false);
  if (j.contains("encoder")) {
    const Json& enc = j.at("encoder");
    detail::reject_unknown(enc, {"kind", "hidden_dim", "embedding_dim"}, "encoder");
    if (enc.contains("kind")) {
      if (!enc.at("kind").is_string()) throw InvalidInput("config: 'encoder.kind' must be a string");
      e.encoder_kind = parse_encoder_kind(enc.at("kind").get<std::string>());
    }
    detail::read_index(enc, "hidden_dim", e.hidden_dim, "encoder");
    detail::read_index(enc, "embedding_dim", e.embedding_dim, "encoder");
  }
  if (j.contains("train")) e.train = train_config_from_json(j.at("train"), e.train);
  if (j.contains("probe")) e.probe = probe_options_from_json(j.at("probe"), e.probe);
  detail::read_index(j, "eval_k", e.eval_k, "config");
  if (j.contains("format")) {
    if (!j.at("format").is_string()) throw InvalidInput("config: 'format' must be a string");
    rc.format = parse_format(j.at("format").get<std::string>());
  }
  detail::read_field(j, "dataset", rc.dataset, "config");
  detail::read_field(j, "out", rc.out, "config");
  rc.resolved_experiment().validate();
  return rc;
}

inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(source + ": invalid JSON: " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path);
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write to '" + path + "' failed");
}

}  // namespace densebasis
