// Generates a small cohort, trains an encoder briefly and compares the
// geometry of its embeddings against an untrained encoder.

#include <cstdio>

#include "densebasis/densebasis.hpp"

int main() {
  using namespace densebasis;
  ExperimentConfig cfg;
  cfg.cohort.n_patients = 120;
  cfg.train.epochs = 20;
  cfg = cfg.with_seed(3);

  const CohortDataset ds = generate(cfg.cohort);
  const Encoder init = Encoder::initialized(cfg.encoder_shape(), cfg.init_seed());
  const TrainResult trained = train(init, ds, cfg.train);

  for (const auto& [name, enc] : {std::pair<const char*, const Encoder*>{"untrained", &init}, {"trained", &trained.encoder}}) {
    const auto g = geometry_summary(EmbeddingMatrix(patient_embeddings(*enc, ds)));
    std::printf("%-10s effective rank %6.3f   condition number %10.3f\n", name, g.effective_rank, g.condition_number);
  }
  std::printf("loss: first epoch %.4f, last epoch %.4f\n", trained.history.front().total, trained.history.back().total);
  return 0;
}
