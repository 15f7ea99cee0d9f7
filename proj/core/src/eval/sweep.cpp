#include "adma/eval/sweep.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "adma/error.hpp"
#include "adma/train/run.hpp"

namespace adma::eval {

namespace {

std::size_t parse_tap(const std::string& s, std::size_t layers) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("sweep: tap '" + s + "' is not an integer");
  if (v < 1 || v > layers) {
    throw ConfigError("sweep: tap " + s + " outside [1, " + std::to_string(layers) + "]");
  }
  return v;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_safe(std::string s) {
  for (auto& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "text_tap") return SweepAxis::text_tap;
  if (name == "speech_tap") return SweepAxis::speech_tap;
  if (name == "dual_taps") return SweepAxis::dual_taps;
  if (name == "loss_variant") return SweepAxis::loss_variant;
  if (name == "target_selection") return SweepAxis::target_selection;
  throw ConfigError("unknown sweep axis '" + name +
                    "' (expected text_tap, speech_tap, dual_taps, loss_variant or target_selection)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::text_tap: return "text_tap";
    case SweepAxis::speech_tap: return "speech_tap";
    case SweepAxis::dual_taps: return "dual_taps";
    case SweepAxis::loss_variant: return "loss_variant";
    case SweepAxis::target_selection: return "target_selection";
  }
  return "?";
}

std::vector<std::string> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::text_tap:
    case SweepAxis::speech_tap: return {"2", "4", "6", "8"};
    case SweepAxis::dual_taps: return {"2:4", "4:7", "6:8", "8:8"};
    case SweepAxis::loss_variant: return {"neg_cos", "l1", "logsig_cos"};
    case SweepAxis::target_selection: return {"last", "avg"};
  }
  return {};
}

void apply_sweep_value(SweepAxis axis, const std::string& value, model::ModelConfig& mcfg, train::TrainConfig& tcfg) {
  switch (axis) {
    case SweepAxis::text_tap: mcfg.text_tap = parse_tap(value, mcfg.num_layers); break;
    case SweepAxis::speech_tap: mcfg.speech_tap = parse_tap(value, mcfg.num_layers); break;
    case SweepAxis::dual_taps: {
      const auto colon = value.find(':');
      if (colon == std::string::npos) throw ConfigError("sweep: dual_taps value '" + value + "' is not text:speech");
      mcfg.text_tap = parse_tap(value.substr(0, colon), mcfg.num_layers);
      mcfg.speech_tap = parse_tap(value.substr(colon + 1), mcfg.num_layers);
      break;
    }
    case SweepAxis::loss_variant: tcfg.speech_variant = align::parse_speech_variant(value); break;
    case SweepAxis::target_selection: tcfg.target_selection = align::parse_target_selection(value); break;
  }
}

SweepRow run_sweep_row(const corpus::Corpus& corpus, const SweepSpec& spec, const std::string& value,
                       const std::filesystem::path& out_dir) {
  SweepRow row;
  row.axis = sweep_axis_name(spec.axis);
  row.value = value;
  row.seed = spec.train.seed;
  model::ModelConfig mcfg = spec.model;
  train::TrainConfig tcfg = spec.train;
  tcfg.enable_text = true;
  tcfg.enable_speech = true;
  try {
    apply_sweep_value(spec.axis, value, mcfg, tcfg);
    row.text_tap = mcfg.text_tap;
    row.speech_tap = mcfg.speech_tap;
    row.loss_variant = align::speech_variant_name(tcfg.speech_variant);
    row.target_selection = align::target_selection_name(tcfg.target_selection);
    train::RunOptions opts;
    opts.out_dir = out_dir;
    const auto rec = train::run_training(corpus, mcfg, tcfg, opts);
    if (rec.evals.empty()) throw std::logic_error("sweep: run produced no evaluation");
    row.proxy_ser = rec.evals.back().proxy_ser;
    row.proxy_sim = rec.evals.back().proxy_sim;
    row.l_total = rec.rows.empty() ? 0.0 : rec.rows.back().losses.l_total;
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

std::vector<SweepRow> run_sweep(const corpus::Corpus& corpus, const SweepSpec& spec, const std::filesystem::path& out_dir,
                                std::size_t jobs, const std::function<void(const SweepRow&)>& on_row) {
  const auto& values = spec.values.empty() ? default_sweep_values(spec.axis) : spec.values;
  std::vector<SweepRow> rows(values.size());
  auto row_dir = [&](std::size_t i) {
    return out_dir.empty() ? std::filesystem::path{} : out_dir / ("row-" + std::to_string(i));
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      rows[i] = run_sweep_row(corpus, spec, values[i], row_dir(i));
      if (on_row) on_row(rows[i]);
    }
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::mutex report;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(jobs, values.size()); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < values.size(); i = next++) {
        rows[i] = run_sweep_row(corpus, spec, values[i], row_dir(i));
        if (on_row) {
          std::lock_guard lock(report);
          on_row(rows[i]);
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  return rows;
}

std::string format_sweep_row(const SweepRow& r) {
  std::string s = r.axis + "," + r.value + "," + std::to_string(r.text_tap) + "," + std::to_string(r.speech_tap) + "," +
                  r.loss_variant + "," + r.target_selection + "," + std::to_string(r.seed) + "," +
                  (r.ok ? "ok" : "failed") + ",";
  if (r.ok) s += g17(r.proxy_ser) + "," + g17(r.proxy_sim) + "," + g17(r.l_total) + ",";
  else s += ",,," + csv_safe(r.error);
  return s;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kSweepHeader << "\n";
  for (const auto& r : rows) out << format_sweep_row(r) << "\n";
}

}  // namespace adma::eval
