#pragma once

// JSON reports emitted by the CLI. Field order is fixed so identical runs
// produce byte-identical files.

#include <vector>

#include "densebasis/config.hpp"

namespace densebasis {

inline Json to_json(const ProbeResult& p) {
  for (double v : {p.auroc, p.ari, p.rmse})
    if (!std::isfinite(v)) throw NumericalFailure("probe report contains a non-finite metric");
  return Json{{"metrics",
               {{"auroc", {{"value", p.auroc}, {"task", "binary label, logistic probe"}, {"regularization", p.logistic_l2}}},
                {"ari", {{"value", p.ari}, {"task", "cluster label, k-means"}, {"n_clusters", p.n_clusters}}},
                {"rmse",
                 {{"value", p.rmse}, {"task", "synthetic continuous target, ridge probe"}, {"regularization", p.ridge_lambda}}}}},
              {"split_seed", p.split_seed},
              {"n_train", p.n_train},
              {"n_test", p.n_test},
              {"shuffled_labels", p.shuffled_labels}};
}

inline Json to_json(const std::vector<EpochLoss>& history) {
  Json arr = Json::array();
  for (std::size_t e = 0; e < history.size(); ++e) {
    const EpochLoss& h = history[e];
    arr.push_back({{"epoch", e},
                   {"total", h.total},
                   {"spec", h.spec_term},
                   {"sub", h.sub_term},
                   {"orth", h.orth_term},
                   {"batches", h.batches},
                   {"unreliable_sub_batches", h.unreliable_sub_batches}});
  }
  return arr;
}

inline Json to_json(const GeometrySummary& g, Index top_k) {
  std::vector<double> top(g.eigenvalues.begin(),
                          g.eigenvalues.begin() + std::min<std::ptrdiff_t>(top_k, static_cast<std::ptrdiff_t>(g.eigenvalues.size())));
  return Json{{"n", g.n_rows},
              {"d", g.n_cols},
              {"effective_rank", g.effective_rank},
              {"condition_number", g.condition_number},
              {"spectral_entropy", g.spectral_entropy},
              {"top_eigenvalues", top}};
}

}  // namespace densebasis
