#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "densebasis/dataset_io.hpp"
#include "densebasis/reports.hpp"

using namespace densebasis;
namespace fs = std::filesystem;

namespace {

Json parse(const std::string& s) { return parse_json_text(s, "test"); }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("densebasis_cfg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CohortDataset small_cohort() {
  CohortConfig c;
  c.n_patients = 12;
  c.windows_per_patient = 3;
  c.ambient_dim = 6;
  c.latent_dim = 2;
  c.n_clusters = 2;
  c.missing_rate = 0.1;
  c.seed = 17;
  return generate(c);
}

}  // namespace

TEST(RunConfig, MinimalDocumentUsesDefaults) {
  const RunConfig rc = run_config_from_json(parse(R"({"schema": 1})"));
  EXPECT_EQ(rc.seed, 1u);
  EXPECT_EQ(rc.format, MatrixFormat::dmat);
  const ExperimentConfig def;
  EXPECT_EQ(rc.experiment.train.epochs, def.train.epochs);
  EXPECT_EQ(rc.experiment.cohort.n_patients, def.cohort.n_patients);
}

TEST(RunConfig, FieldsAreRead) {
  const RunConfig rc = run_config_from_json(parse(R"({
    "schema": 1, "seed": 9, "format": "csv", "eval_k": 4,
    "cohort": {"n_patients": 50, "noise_sigma": 0.2},
    "encoder": {"kind": "linear", "embedding_dim": 8},
    "train": {"epochs": 3, "lambda_sub": 0.5, "k_sub": 4},
    "probe": {"lambda_grid": [0.5], "shuffle_labels": true}})"));
  EXPECT_EQ(rc.seed, 9u);
  EXPECT_EQ(rc.format, MatrixFormat::csv);
  EXPECT_EQ(rc.experiment.eval_k, 4);
  EXPECT_EQ(rc.experiment.cohort.n_patients, 50);
  EXPECT_EQ(rc.experiment.cohort.noise_sigma, 0.2);
  EXPECT_EQ(rc.experiment.encoder_kind, EncoderKind::linear);
  EXPECT_EQ(rc.experiment.embedding_dim, 8);
  EXPECT_EQ(rc.experiment.train.epochs, 3);
  EXPECT_EQ(rc.experiment.train.weights.lambda_sub, 0.5);
  EXPECT_EQ(rc.experiment.probe.lambda_grid, std::vector<double>{0.5});
  EXPECT_TRUE(rc.experiment.probe.shuffle_labels);
  EXPECT_EQ(rc.resolved_experiment().cohort.seed, 9u);
  EXPECT_EQ(rc.resolved_experiment().train.seed, 9u);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
  for (const char* doc : {R"({"schema": 1, "sead": 3})", R"({"schema": 1, "cohort": {"n_patient": 3}})",
                          R"({"schema": 1, "train": {"lr": 0.1}})", R"({"schema": 1, "encoder": {"depth": 2}})",
                          R"({"schema": 1, "probe": {"folds": 5}})", R"({"schema": 1, "cohort": {"seed": 4}})"})
    EXPECT_THROW(run_config_from_json(parse(doc)), InvalidInput) << doc;
}

TEST(RunConfig, RejectsSchemaProblems) {
  EXPECT_THROW(run_config_from_json(parse(R"({})")), InvalidInput);
  EXPECT_THROW(run_config_from_json(parse(R"({"schema": 2})")), InvalidInput);
  EXPECT_THROW(run_config_from_json(parse(R"({"schema": "1"})")), InvalidInput);
  EXPECT_THROW(run_config_from_json(parse(R"([1, 2])")), InvalidInput);
  EXPECT_THROW(parse("{not json"), InvalidInput);
}

TEST(RunConfig, RejectsWrongTypesAndValues) {
  for (const char* doc : {R"({"schema": 1, "seed": "x"})", R"({"schema": 1, "cohort": {"n_patients": 3.5}})",
                          R"({"schema": 1, "train": {"learning_rate": "fast"}})",
                          R"({"schema": 1, "encoder": {"kind": "transformer"}})", R"({"schema": 1, "format": "npy"})",
                          R"({"schema": 1, "eval_k": 100})", R"({"schema": 1, "cohort": {"missing_rate": 1.5}})",
                          R"({"schema": 1, "probe": {"train_fraction": 1.0}})", R"({"schema": 1, "cohort": 5})"})
    EXPECT_THROW(run_config_from_json(parse(doc)), InvalidInput) << doc;
}

TEST(RunConfig, ResolvedEchoRoundTrips) {
  const RunConfig rc = run_config_from_json(parse(R"({"schema": 1, "seed": 4, "train": {"epochs": 7}})"));
  const Json echo = to_json(rc);
  EXPECT_EQ(echo.at("schema"), 1);
  EXPECT_FALSE(echo.at("cohort").contains("seed"));
  const RunConfig back = run_config_from_json(echo);
  EXPECT_EQ(to_json(back).dump(), echo.dump());
  EXPECT_EQ(back.experiment.train.epochs, 7);
}

TEST(RunConfig, FileLoading) {
  const fs::path dir = scratch("load");
  const std::string path = (dir / "run.json").string();
  write_json_file(path, to_json(RunConfig{}));
  EXPECT_EQ(to_json(load_run_config(path)).dump(), to_json(RunConfig{}).dump());
  EXPECT_THROW(load_run_config((dir / "absent.json").string()), InvalidInput);
}

class DatasetRoundTrip : public ::testing::TestWithParam<MatrixFormat> {};

TEST_P(DatasetRoundTrip, ExportThenLoadIsExact) {
  const CohortDataset ds = small_cohort();
  const fs::path dir = scratch(std::string("ds_") + format_name(GetParam()));
  const std::string manifest = export_dataset(ds, dir.string(), GetParam());
  EXPECT_EQ(fs::path(manifest).filename(), "manifest.json");
  const CohortDataset back = load_dataset(manifest);
  EXPECT_EQ(back.observations, ds.observations);
  EXPECT_EQ(back.missing_mask, ds.missing_mask);
  EXPECT_EQ(back.labels_binary, ds.labels_binary);
  EXPECT_EQ(back.labels_cluster, ds.labels_cluster);
  EXPECT_EQ(back.labels_continuous, ds.labels_continuous);
  EXPECT_EQ(back.config.seed, 17u);
  EXPECT_EQ(back.windows(), 3);
}

INSTANTIATE_TEST_SUITE_P(Formats, DatasetRoundTrip, ::testing::Values(MatrixFormat::csv, MatrixFormat::dmat));

TEST(DatasetIo, ManifestIsRelocatable) {
  const fs::path dir = scratch("reloc");
  export_dataset(small_cohort(), (dir / "a").string(), MatrixFormat::dmat);
  fs::rename(dir / "a", dir / "b");
  EXPECT_EQ(load_dataset((dir / "b" / "manifest.json").string()).observations, small_cohort().observations);
}

TEST(DatasetIo, RejectsCorruptedManifests) {
  const fs::path dir = scratch("corrupt");
  const std::string manifest = export_dataset(small_cohort(), dir.string(), MatrixFormat::dmat);
  const Json good = read_json_file(manifest);
  auto expect_reject = [&](Json m, const char* why) {
    write_json_file(manifest, m);
    EXPECT_THROW(load_dataset(manifest), FormatError) << why;
  };
  Json m = good;
  m["extra"] = 1;
  expect_reject(m, "unknown key");
  m = good;
  m["schema"] = 2;
  expect_reject(m, "schema");
  m = good;
  m.erase("files");
  expect_reject(m, "missing files");
  m = good;
  m["n_patients"] = 13;
  expect_reject(m, "dims disagree");
  m = good;
  m["files"]["observations"] = "labels_binary.dmat";
  expect_reject(m, "wrong shape");
  m = good;
  m["files"].erase("labels_cluster");
  expect_reject(m, "inventory");
  m = good;
  m["kind"] = "other";
  expect_reject(m, "kind");
  {
    std::ofstream out(manifest);
    out << "{";
  }
  EXPECT_THROW(load_dataset(manifest), FormatError);
  EXPECT_THROW(load_dataset((dir / "nope.json").string()), FormatError);
}

TEST(DatasetIo, RejectsBadLabelFiles) {
  const fs::path dir = scratch("labels");
  const CohortDataset ds = small_cohort();
  const std::string manifest = export_dataset(ds, dir.string(), MatrixFormat::csv);
  Matrix lab = Matrix::Zero(12, 1);
  lab(3, 0) = 0.5;
  write_matrix((dir / "labels_cluster.csv").string(), lab, MatrixFormat::csv);
  EXPECT_THROW(load_dataset(manifest), FormatError);
  lab(3, 0) = 2.0;
  write_matrix((dir / "labels_cluster.csv").string(), lab, MatrixFormat::csv);
  EXPECT_NO_THROW(load_dataset(manifest));
  write_matrix((dir / "labels_binary.csv").string(), lab, MatrixFormat::csv);
  EXPECT_THROW(load_dataset(manifest), FormatError);
}

TEST(Reports, ProbeReportLayout) {
  ProbeResult p;
  p.auroc = 0.75;
  p.ari = 0.2;
  p.rmse = 1.5;
  p.split_seed = 3;
  p.n_train = 7;
  p.n_test = 3;
  const Json j = to_json(p);
  EXPECT_EQ(j.at("metrics").at("auroc").at("value"), 0.75);
  EXPECT_EQ(j.at("metrics").at("rmse").at("task"), "synthetic continuous target, ridge probe");
  EXPECT_EQ(j.at("split_seed"), 3);
  EXPECT_EQ(j.at("shuffled_labels"), false);
  p.rmse = std::nan("");
  EXPECT_THROW(to_json(p), NumericalFailure);
}

TEST(Reports, HistoryAndGeometry) {
  std::vector<EpochLoss> h(2);
  h[1].total = 2.5;
  h[1].batches = 4;
  const Json j = to_json(h);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[1].at("epoch"), 1);
  EXPECT_EQ(j[1].at("total"), 2.5);
  EXPECT_EQ(j[1].at("batches"), 4);

  const GeometrySummary g = geometry_summary(EmbeddingMatrix(Matrix::Identity(3, 3)));
  const Json gj = to_json(g, 2);
  EXPECT_EQ(gj.at("top_eigenvalues").size(), 2u);
  EXPECT_NEAR(gj.at("effective_rank").get<double>(), 3.0, 1e-12);
}
