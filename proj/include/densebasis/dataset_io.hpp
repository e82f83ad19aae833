#pragma once

// Cohort export: one matrix file per array plus manifest.json listing dims,
// seed, the generating config and the file inventory. Ground-truth frames and
// latents are not exported.

#include <filesystem>
#include <map>

#include "densebasis/config.hpp"

namespace densebasis {

constexpr const char* kManifestName = "manifest.json";

namespace detail {

template <typename T>
Matrix column_of(const std::vector<T>& v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = static_cast<double>(v[i]);
  return m;
}

inline std::vector<int> int_labels(const Matrix& m, const std::string& what) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    if (!(v == std::floor(v)) || v < 0.0 || v > 1e6) throw FormatError(what + ": expected non-negative integer labels");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace detail

/// Writes the dataset into `dir` (created if needed); returns the manifest path.
inline std::string export_dataset(const CohortDataset& ds, const std::string& dir, MatrixFormat format) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string ext = format == MatrixFormat::csv ? ".csv" : ".dmat";
  const std::vector<std::pair<std::string, Matrix>> arrays = {
      {"observations", ds.observations},
      {"missing_mask", ds.missing_mask},
      {"labels_binary", detail::column_of(ds.labels_binary)},
      {"labels_cluster", detail::column_of(ds.labels_cluster)},
      {"labels_continuous", detail::column_of(ds.labels_continuous)},
  };
  Json files = Json::object();
  for (const auto& [name, m] : arrays) {
    write_matrix((fs::path(dir) / (name + ext)).string(), m, format);
    files[name] = name + ext;
  }
  Json manifest{{"schema", kConfigSchema},
                {"kind", "densebasis-cohort"},
                {"n_patients", ds.n_patients()},
                {"windows_per_patient", ds.windows()},
                {"ambient_dim", ds.ambient_dim()},
                {"seed", ds.config.seed},
                {"format", format_name(format)},
                {"config", to_json(ds.config)},
                {"files", files}};
  const std::string path = (fs::path(dir) / kManifestName).string();
  write_json_file(path, manifest);
  return path;
}

/// Loads a dataset written by export_dataset. Paths in the manifest are
/// relative to the manifest's directory.
inline CohortDataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  Json m;
  try {
    m = read_json_file(manifest_path);
  } catch (const InvalidInput& e) {
    throw FormatError(e.what());
  }
  try {
    detail::reject_unknown(m, {"schema", "kind", "n_patients", "windows_per_patient", "ambient_dim", "seed", "format",
                               "config", "files"},
                           "manifest");
  } catch (const InvalidInput& e) {
    throw FormatError(e.what());
  }
  for (const char* key : {"schema", "kind", "n_patients", "windows_per_patient", "ambient_dim", "config", "files"})
    if (!m.contains(key)) throw FormatError(manifest_path + ": manifest lacks '" + key + "'");
  if (!m.at("schema").is_number_integer() || m.at("schema") != kConfigSchema || m.at("kind") != "densebasis-cohort" ||
      !m.at("files").is_object())
    throw FormatError(manifest_path + ": not a schema-1 densebasis cohort manifest");

  CohortDataset ds;
  try {
    ds.config = cohort_config_from_json(m.at("config"));
    ds.config.validate();
  } catch (const std::exception& e) {
    throw FormatError(manifest_path + ": bad config block: " + e.what());
  }
  const auto n = ds.config.n_patients, w = ds.config.windows_per_patient, d = ds.config.ambient_dim;
  if (m.at("n_patients") != n || m.at("windows_per_patient") != w || m.at("ambient_dim") != d)
    throw FormatError(manifest_path + ": header dims disagree with the config block");

  const fs::path base = fs::path(manifest_path).parent_path();
  const Json& files = m.at("files");
  auto load = [&](const char* name, Index rows, Index cols) {
    if (!files.contains(name) || !files.at(name).is_string())
      throw FormatError(manifest_path + ": file inventory lacks '" + name + "'");
    Matrix x = read_matrix((base / files.at(name).get<std::string>()).string());
    if (x.rows() != rows || x.cols() != cols)
      throw FormatError(std::string(name) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                        shape_str(x));
    return x;
  };
  ds.observations = load("observations", n * w, d);
  ds.missing_mask = load("missing_mask", n * w, d);
  ds.labels_binary = detail::int_labels(load("labels_binary", n, 1), "labels_binary");
  ds.labels_cluster = detail::int_labels(load("labels_cluster", n, 1), "labels_cluster");
  const Matrix cont = load("labels_continuous", n, 1);
  ds.labels_continuous.assign(cont.data(), cont.data() + cont.size());
  for (int b : ds.labels_binary)
    if (b > 1) throw FormatError("labels_binary: values must be 0 or 1");
  return ds;
}

}  // namespace densebasis
