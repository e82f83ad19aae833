// densebasis command-line tool.
//
// Exit codes: 0 ok, 1 unexpected, 2 usage/parse/input, 3 numeric (NaN or
// failed numerics), 4 training aborted, 5 gradient check over threshold.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "densebasis/densebasis.hpp"

namespace db = densebasis;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitParse = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitTraining = 4;
constexpr int kExitGradcheck = 5;

constexpr const char* kSyntheticTag = "desk-scale synthetic";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string format;
  std::optional<long> k;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration (schema 1)");
  cmd->add_option("--seed", o.seed, "seed overriding the configuration");
  cmd->add_option("--format", o.format, "matrix format: csv or dmat")->check(CLI::IsMember({"csv", "dmat"}));
  cmd->add_option("--k", o.k, "subspace dimension / number of eigenvalues reported");
  cmd->add_option("--out", o.out, "output path");
}

db::RunConfig resolve_config(const CommonOptions& o) {
  db::RunConfig rc = o.config.empty() ? db::RunConfig{} : db::load_run_config(o.config);
  if (o.seed) rc.seed = *o.seed;
  if (!o.format.empty()) rc.format = db::parse_format(o.format);
  if (!o.out.empty()) rc.out = o.out;
  rc.resolved_experiment().validate();
  return rc;
}

db::Matrix read_input(const std::string& path, const std::string& format) {
  if (!fs::exists(path)) throw db::InvalidInput("no such file: '" + path + "'");
  return format.empty() ? db::read_matrix(path) : db::read_matrix(path, db::parse_format(format));
}

void emit(const db::Json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << '\n' << report.dump(2) << '\n';
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    db::write_json_file(out, report);
    std::cout << "report written to " << out << '\n';
  }
}

// ---- audit ----------------------------------------------------------------

int cmd_audit(const std::string& input, const CommonOptions& o, std::optional<double> floor) {
  const db::Matrix raw = read_input(input, o.format);
  const db::EmbeddingMatrix z(raw);
  const long k = o.k.value_or(std::min<long>(8, z.n_cols()));
  if (k < 1) throw db::InvalidInput("--k must be >= 1");
  if (floor && !(*floor > 0.0)) throw db::InvalidInput("--floor must be positive");
  const db::GeometrySummary g = db::geometry_summary(z, floor);

  std::printf("Geometry audit: %s\n", input.c_str());
  std::printf("  %-20s %ld\n  %-20s %ld\n", "rows (N)", static_cast<long>(g.n_rows), "dim (d)", static_cast<long>(g.n_cols));
  std::printf("  %-20s %.6f\n  %-20s %.6g\n  %-20s %.6f\n", "effective rank", g.effective_rank, "condition number",
              g.condition_number, "spectral entropy", g.spectral_entropy);
  std::printf("  top eigenvalues:");
  for (long i = 0; i < std::min<long>(k, static_cast<long>(g.eigenvalues.size())); ++i)
    std::printf(" %.6g", g.eigenvalues[static_cast<std::size_t>(i)]);
  std::printf("\n");

  db::Json cfg{{"input", input}, {"format", o.format.empty() ? db::format_name(db::format_from_path(input)) : o.format},
               {"k", k}};
  cfg["floor"] = floor ? db::Json(*floor) : db::Json(nullptr);
  emit(db::Json{{"command", "audit"}, {"config", cfg}, {"geometry", db::to_json(g, k)}}, o.out);
  return kExitOk;
}

// ---- subspace -------------------------------------------------------------

int cmd_subspace(const std::string& path_a, const std::string& path_b, const CommonOptions& o) {
  const db::EmbeddingMatrix a(read_input(path_a, o.format));
  const db::EmbeddingMatrix b(read_input(path_b, o.format));
  if (a.n_cols() != b.n_cols())
    throw db::InvalidInput("dimension mismatch: " + std::to_string(a.n_cols()) + " vs " + std::to_string(b.n_cols()) +
                           " columns");
  const long k = o.k.value_or(1);
  if (k < 1 || k > a.n_cols()) throw db::InvalidInput("--k must lie in [1, " + std::to_string(a.n_cols()) + "]");
  const auto pa = db::principal_subspace(a, k);
  const auto pb = db::principal_subspace(b, k);
  const double dist = db::projection_distance(pa.basis, pb.basis);
  const double normalized = dist / (2.0 * static_cast<double>(k));
  const auto angles = db::principal_angles(pa.basis, pb.basis);

  std::printf("Subspace comparison (k=%ld)\n", k);
  std::printf("  %-24s %.9f\n  %-24s %.9f\n", "projection distance", dist, "normalized (/2k)", normalized);
  std::printf("  principal angles (rad):");
  for (double t : angles) std::printf(" %.6f", t);
  std::printf("\n");
  if (pa.degenerate_gap || pb.degenerate_gap)
    std::printf("  warning: eigengap at k is degenerate; the subspace is not uniquely defined\n");

  db::Json cfg{{"a", path_a}, {"b", path_b}, {"k", k}};
  emit(db::Json{{"command", "subspace"},
                {"config", cfg},
                {"projection_distance", dist},
                {"normalized_distance", normalized},
                {"principal_angles", angles},
                {"degenerate_gap", {pa.degenerate_gap, pb.degenerate_gap}}},
       o.out);
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

db::CohortDataset dataset_for(const db::RunConfig& rc) {
  if (!rc.dataset.empty()) return db::load_dataset(rc.dataset);
  return db::generate(rc.resolved_experiment().cohort);
}

int cmd_train(const CommonOptions& o) {
  db::RunConfig rc = resolve_config(o);
  if (rc.out.empty()) rc.out = "densebasis-run";
  const db::ExperimentConfig e = rc.resolved_experiment();
  const db::CohortDataset ds = dataset_for(rc);
  if (ds.ambient_dim() != e.cohort.ambient_dim && rc.dataset.empty())
    throw db::InvalidInput("dataset ambient_dim does not match config");
  db::EncoderShape shape = e.encoder_shape();
  shape.input_dim = ds.ambient_dim();

  fs::create_directories(rc.out);
  const fs::path dir(rc.out);
  db::write_json_file((dir / "config.resolved.json").string(), db::to_json(rc));

  const db::Encoder init = db::Encoder::initialized(shape, e.init_seed());
  const db::TrainResult result = db::train(init, ds, e.train);

  db::save_checkpoint((dir / "checkpoint.dbck").string(), result.encoder);
  db::write_json_file((dir / "history.json").string(),
                      db::Json{{"seed", rc.seed}, {"history", db::to_json(result.history)}});
  const std::string manifest = rc.dataset.empty() ? db::export_dataset(ds, (dir / "dataset").string(), rc.format) : rc.dataset;

  std::printf("Training (%s cohort, seed %llu): %d epochs\n", kSyntheticTag, static_cast<unsigned long long>(rc.seed),
              e.train.epochs);
  std::printf("  %-6s %12s %12s %12s %12s\n", "epoch", "total", "spec", "sub", "orth");
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    if (i != 0 && i + 1 != result.history.size() && i % 10 != 9) continue;
    const auto& h = result.history[i];
    std::printf("  %-6zu %12.6f %12.6f %12.6f %12.6f\n", i + 1, h.total, h.spec_term, h.sub_term, h.orth_term);
  }
  std::printf("  checkpoint: %s\n  dataset:    %s\n", (dir / "checkpoint.dbck").c_str(), manifest.c_str());
  return kExitOk;
}

// ---- probe ----------------------------------------------------------------

int cmd_probe(const std::string& checkpoint, const std::string& manifest, bool shuffle, const CommonOptions& o) {
  const db::RunConfig rc = resolve_config(o);
  db::ExperimentConfig e = rc.resolved_experiment();
  if (shuffle) e.probe.shuffle_labels = true;
  const db::Encoder enc = db::load_checkpoint(checkpoint);
  const db::CohortDataset ds = db::load_dataset(manifest);
  if (ds.ambient_dim() != enc.input_dim())
    throw db::InvalidInput("dimension mismatch: dataset has " + std::to_string(ds.ambient_dim()) +
                           " features, encoder expects " + std::to_string(enc.input_dim()));
  const std::uint64_t split_seed = o.seed ? *o.seed : e.split_seed();
  const db::ProbeResult p = db::probe_suite(enc, ds, split_seed, e.probe);

  std::printf("Frozen linear probes (%s)%s\n", kSyntheticTag, shuffle ? " [shuffled labels]" : "");
  std::printf("  %-8s %-8s %-8s\n  %-8.4f %-8.4f %-8.4f\n", "AUROC", "ARI", "RMSE", p.auroc, p.ari, p.rmse);

  db::Json cfg{{"checkpoint", checkpoint}, {"dataset", manifest}, {"split_seed", split_seed},
               {"probe", db::to_json(e.probe)}};
  emit(db::Json{{"command", "probe"}, {"config", cfg}, {"result", db::to_json(p)}}, o.out);
  return kExitOk;
}

// ---- ablate ---------------------------------------------------------------

int cmd_ablate(const CommonOptions& o) {
  const db::RunConfig rc = resolve_config(o);
  const db::ExperimentConfig e = rc.resolved_experiment();
  const db::CohortDataset ds = dataset_for(rc);
  std::vector<db::VariantRun> runs;
  for (db::Variant v : db::kAllVariants) runs.push_back(db::run_variant(e, ds, v));

  std::printf("Ablation of objective components (%s, seed %llu)\n", kSyntheticTag,
              static_cast<unsigned long long>(rc.seed));
  std::printf("  %-20s %14s %8s\n", "Variant", "Eff. rank", "AUROC");
  db::Json rows = db::Json::array();
  for (const auto& r : runs) {
    std::printf("  %-20s %14.4f %8.4f\n", db::variant_name(r.variant), r.eval.geometry.effective_rank, r.eval.probe.auroc);
    rows.push_back({{"variant", db::variant_name(r.variant)},
                    {"effective_rank", r.eval.geometry.effective_rank},
                    {"condition_number", r.eval.geometry.condition_number},
                    {"auroc", r.eval.probe.auroc},
                    {"ari", r.eval.probe.ari},
                    {"rmse", r.eval.probe.rmse},
                    {"adjacent_distance", r.eval.adjacent_distance}});
  }
  emit(db::Json{{"command", "ablate"}, {"label", kSyntheticTag}, {"config", db::to_json(rc)}, {"rows", rows}}, o.out);
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const std::string& loss, long n, long d, bool degenerate, double tol, const CommonOptions& o) {
  const db::LossId id = db::parse_loss_id(loss);
  const long k = o.k.value_or(2);
  const std::uint64_t seed = o.seed.value_or(1);
  if (n < 2 || d < 1) throw db::InvalidInput("gradcheck: need --n >= 2 and --d >= 1");
  if (id == db::LossId::sub && (k < 1 || k > d)) throw db::InvalidInput("gradcheck: --k must lie in [1, d]");

  std::vector<db::Matrix> inputs;
  if (degenerate) {
    // Z with Z^T Z / N = I exactly: every eigengap is zero.
    db::Matrix z(2 * d, d);
    z << db::Matrix::Identity(d, d), db::Matrix::Identity(d, d);
    z *= std::sqrt(static_cast<double>(d));
    inputs.assign(id == db::LossId::sub ? 2 : 1, z);
    n = 2 * d;
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (int m = 0; m < (id == db::LossId::sub ? 2 : 1); ++m) {
      db::Matrix z(n, d);
      for (long j = 0; j < d; ++j)
        for (long i = 0; i < n; ++i) z(i, j) = normal(rng) * (1.0 + 0.5 * static_cast<double>(j));
      inputs.push_back(z);
    }
  }
  db::SubspaceLossOptions opts;
  opts.k = k;
  const db::GradcheckResult r = db::gradcheck(id, inputs, 1e-6, opts);
  const bool pass = r.excluded || r.max_rel_error < tol;

  std::printf("Gradient check: %s (N=%ld, d=%ld%s)\n", db::loss_name(id), n, d,
              id == db::LossId::sub ? (", k=" + std::to_string(k)).c_str() : "");
  if (r.excluded)
    std::printf("  skipped: degenerate eigengap at k, gradient undefined (flagged, not a failure)\n");
  else
    std::printf("  max relative error %.3e over %zu entries (threshold %.0e): %s\n", r.max_rel_error, r.entries_checked,
                tol, pass ? "PASS" : "FAIL");

  db::Json cfg{{"loss", db::loss_name(id)}, {"n", n}, {"d", d}, {"k", k}, {"seed", seed},
               {"degenerate", degenerate}, {"threshold", tol}};
  emit(db::Json{{"command", "gradcheck"},
                {"config", cfg},
                {"max_rel_error", r.max_rel_error},
                {"entries_checked", r.entries_checked},
                {"excluded", r.excluded},
                {"pass", pass}},
       o.out);
  return pass ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"densebasis: geometry audits, training, probes and ablations for dense embeddings"};
  app.require_subcommand(1);

  CommonOptions audit_o, sub_o, train_o, probe_o, ablate_o, grad_o;

  auto* audit = app.add_subcommand("audit", "effective rank, condition number and spectrum of a matrix");
  std::string audit_in;
  std::optional<double> floor;
  audit->add_option("matrix", audit_in, "matrix file (.csv or .dmat)")->required();
  audit->add_option("--floor", floor, "eigenvalue floor for the condition number");
  add_common(audit, audit_o);

  auto* subspace = app.add_subcommand("subspace", "distance between the top-k subspaces of two matrices");
  std::string sub_a, sub_b;
  subspace->add_option("a", sub_a, "first matrix")->required();
  subspace->add_option("b", sub_b, "second matrix")->required();
  add_common(subspace, sub_o);

  auto* trainc = app.add_subcommand("train", "train an encoder; writes checkpoint, history and dataset");
  add_common(trainc, train_o);

  auto* probe = app.add_subcommand("probe", "frozen linear probes on a checkpoint and dataset");
  std::string probe_ckpt, probe_manifest;
  bool shuffle = false;
  probe->add_option("checkpoint", probe_ckpt, "encoder checkpoint")->required();
  probe->add_option("dataset", probe_manifest, "dataset manifest.json")->required();
  probe->add_flag("--shuffle-labels", shuffle, "permute labels (chance-level control)");
  add_common(probe, probe_o);

  auto* ablate = app.add_subcommand("ablate", "train the four objective variants and compare");
  add_common(ablate, ablate_o);

  auto* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradient of one loss");
  std::string loss;
  long gn = 8, gd = 5;
  bool degenerate = false;
  double tol = 1e-5;
  grad->add_option("loss", loss, "spec, orth or sub")->required()->check(CLI::IsMember({"spec", "orth", "sub"}));
  grad->add_option("--n", gn, "rows");
  grad->add_option("--d", gd, "columns");
  grad->add_option("--tol", tol, "relative error threshold");
  grad->add_flag("--degenerate", degenerate, "use an input whose covariance is exactly I");
  add_common(grad, grad_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitParse;
  }

  try {
    if (*audit) return cmd_audit(audit_in, audit_o, floor);
    if (*subspace) return cmd_subspace(sub_a, sub_b, sub_o);
    if (*trainc) return cmd_train(train_o);
    if (*probe) return cmd_probe(probe_ckpt, probe_manifest, shuffle, probe_o);
    if (*ablate) return cmd_ablate(ablate_o);
    if (*grad) return cmd_gradcheck(loss, gn, gd, degenerate, tol, grad_o);
  } catch (const db::AbortStep& e) {
    std::cerr << "error: " << e.what() << " (epoch " << e.epoch() << ", batch " << e.batch() << ")\n";
    return kExitTraining;
  } catch (const db::NonFiniteInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const db::NumericalFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const db::DegenerateSpectrum& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const db::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitUnexpected;
}
