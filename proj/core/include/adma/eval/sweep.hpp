#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/model/model.hpp"
#include "adma/train/trainer.hpp"

namespace adma::eval {

enum class SweepAxis { text_tap, speech_tap, dual_taps, loss_variant, target_selection };
SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

/// text_tap/speech_tap: {2,4,6,8}; dual_taps: {2:4, 4:7, 6:8, 8:8};
/// loss_variant: {neg_cos, l1, logsig_cos}; target_selection: {last, avg}.
std::vector<std::string> default_sweep_values(SweepAxis axis);

/// One axis varies; every run shares base model/train configs, seeds and corpus.
/// Runs train with both alignment losses enabled.
struct SweepSpec {
  SweepAxis axis = SweepAxis::dual_taps;
  std::vector<std::string> values;
  model::ModelConfig model;
  train::TrainConfig train;
};

/// Applies one axis value to copies of the base configs; throws ConfigError on
/// malformed values or taps outside [1, num_layers].
void apply_sweep_value(SweepAxis axis, const std::string& value, model::ModelConfig& mcfg, train::TrainConfig& tcfg);

struct SweepRow {
  std::string axis;
  std::string value;
  std::size_t text_tap = 0;
  std::size_t speech_tap = 0;
  std::string loss_variant;
  std::string target_selection;
  std::uint64_t seed = 0;
  bool ok = false;
  double proxy_ser = 0.0;
  double proxy_sim = 0.0;
  double l_total = 0.0;  // last logged step
  std::string error;     // set when !ok
};

inline constexpr const char* kSweepHeader =
    "axis,value,text_tap,speech_tap,loss_variant,target_selection,seed,status,proxy_ser,proxy_sim,l_total,error";

/// Trains and evaluates one sweep row; failures are caught and recorded in the row.
/// With out_dir, the run's files go to out_dir (see train::run_training).
SweepRow run_sweep_row(const corpus::Corpus& corpus, const SweepSpec& spec, const std::string& value,
                       const std::filesystem::path& out_dir = {});

/// Runs every value in order (jobs > 1 runs rows concurrently, each in its own
/// row-<i> directory); rows come back in value order whatever the job count.
std::vector<SweepRow> run_sweep(const corpus::Corpus& corpus, const SweepSpec& spec,
                                const std::filesystem::path& out_dir = {}, std::size_t jobs = 1,
                                const std::function<void(const SweepRow&)>& on_row = {});

std::string format_sweep_row(const SweepRow& row);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace adma::eval
