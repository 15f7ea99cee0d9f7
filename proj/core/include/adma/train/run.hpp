#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adma/eval/evaluator.hpp"
#include "adma/train/trainer.hpp"

namespace adma::train {

struct EvalPoint {
  std::size_t step = 0;
  double proxy_ser = 0.0;
  double proxy_sim = 0.0;
};

/// One line of the metrics CSV; proxy fields are empty on steps without evaluation.
struct MetricsRow {
  LossBreakdown losses;
  std::optional<EvalPoint> eval;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,l_cfm,l_text,l_speech,l_total,lr,proxy_ser,proxy_sim,wall_ms";

std::string format_metrics_row(const MetricsRow& row);
/// Parses a metrics CSV written by run_training (header checked).
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Owns the corpus-derived caches and the evolving state of one run.
class Trainer {
 public:
  Trainer(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg);
  /// Continues from a checkpoint written by save().
  Trainer(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg,
          const std::filesystem::path& checkpoint);

  LossBreakdown step();
  /// Proxy metrics of the EMA weights on the held-out pairs.
  [[nodiscard]] EvalPoint evaluate() const;
  [[nodiscard]] eval::EvalReport evaluate_report() const;
  void save(const std::filesystem::path& path) const;

  [[nodiscard]] const TrainState& state() const noexcept { return state_; }
  [[nodiscard]] const TrainConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const model::ModelConfig& model_config() const noexcept { return mcfg_; }
  /// corpus + model + train keys of this run.
  [[nodiscard]] io::Config full_config() const;

 private:
  const corpus::Corpus* corpus_;
  model::ModelConfig mcfg_;
  TrainConfig cfg_;
  TargetCache targets_;
  TrainState state_;
};

/// Steps at which run_training evaluates: every eval_interval, the half-budget
/// step and the last step.
bool is_eval_step(std::size_t step, const TrainConfig& cfg);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::size_t checkpoint_interval = 0;
  std::size_t stop_at = 0;        // 0: total_updates
  std::filesystem::path resume_from;
  std::function<void(const MetricsRow&)> on_row;
};

struct RunRecord {
  std::vector<MetricsRow> rows;
  std::vector<EvalPoint> evals;
  std::vector<corpus::TemporalMask> first_masks;  // first 10 items drawn, in draw order
  double wall_seconds = 0.0;
};

/// Trains, evaluates and (with out_dir) writes metrics.csv, config.cfg, masks.csv,
/// model.bin (raw weights), ema.bin and checkpoint-<step>.bin files.
RunRecord run_training(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const RunOptions& opts = {});

struct ExperimentResult {
  RunRecord baseline;
  RunRecord adma;
  bool masks_identical = false;
  double baseline_half_ser = 0.0;
  double baseline_final_ser = 0.0;
  double adma_half_ser = 0.0;
  double adma_final_ser = 0.0;
};

/// Baseline (flow matching only) against A-DMA (all three losses) with the same
/// seeds, corpus and initialisation. With out_dir: baseline/, adma/, paired.csv, summary.txt.
ExperimentResult run_experiment(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& base,
                                const std::filesystem::path& out_dir = {});

/// step,baseline_proxy_ser,adma_proxy_ser,baseline_proxy_sim,adma_proxy_sim over the shared eval steps.
void write_paired_csv(const std::filesystem::path& path, const std::vector<EvalPoint>& baseline,
                      const std::vector<EvalPoint>& adma);

}  // namespace adma::train
