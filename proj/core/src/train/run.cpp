#include "adma/train/run.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adma/error.hpp"

namespace adma::train {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": cannot parse number '" + s + "'");
  }
}

const EvalPoint* find_eval(const std::vector<EvalPoint>& evals, std::size_t step) {
  for (const auto& e : evals) {
    if (e.step == step) return &e;
  }
  return nullptr;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  const auto& l = row.losses;
  std::string s = std::to_string(l.step) + "," + g17(l.l_cfm) + "," + g17(l.l_text) + "," + g17(l.l_speech) + "," +
                  g17(l.l_total) + "," + g17(l.lr) + ",";
  if (row.eval) s += g17(row.eval->proxy_ser) + "," + g17(row.eval->proxy_sim);
  else s += ",";
  s += "," + g17(row.wall_ms);
  return s;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(path.string() + ": missing metrics header '" + std::string(kMetricsHeader) + "'");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) throw FormatError(path.string() + ": expected 9 fields in '" + line + "'");
    MetricsRow r;
    r.losses.step = static_cast<std::size_t>(parse_double(f[0], path));
    r.losses.l_cfm = parse_double(f[1], path);
    r.losses.l_text = parse_double(f[2], path);
    r.losses.l_speech = parse_double(f[3], path);
    r.losses.l_total = parse_double(f[4], path);
    r.losses.lr = parse_double(f[5], path);
    if (!f[6].empty()) r.eval = EvalPoint{r.losses.step, parse_double(f[6], path), parse_double(f[7], path)};
    r.wall_ms = parse_double(f[8], path);
    rows.push_back(r);
  }
  return rows;
}

Trainer::Trainer(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg)
    : corpus_(&corpus), mcfg_(mcfg), cfg_(cfg), state_(make_train_state(mcfg, cfg)) {
  if (mcfg_.vocab != corpus.config.vocab_size + 1 || mcfg_.feature_dim != corpus.config.feature_dim) {
    throw ConfigError("model vocab/feature_dim (" + std::to_string(mcfg_.vocab) + ", " +
                      std::to_string(mcfg_.feature_dim) + ") do not match the corpus (" +
                      std::to_string(corpus.config.vocab_size + 1) + ", " +
                      std::to_string(corpus.config.feature_dim) + ")");
  }
  if (cfg_.enable_speech) targets_ = build_target_cache(corpus, cfg_);
}

Trainer::Trainer(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                 const std::filesystem::path& checkpoint)
    : Trainer(corpus, mcfg, cfg) {
  state_ = load_checkpoint(checkpoint, mcfg, cfg);
}

LossBreakdown Trainer::step() { return train_step(state_, *corpus_, targets_, cfg_); }

eval::EvalReport Trainer::evaluate_report() const {
  return eval::evaluate(state_.ema, *corpus_, eval::EvalConfig{cfg_.sampler, cfg_.seed, -1.0});
}

EvalPoint Trainer::evaluate() const {
  const auto r = evaluate_report();
  return {state_.step, r.proxy_ser, r.proxy_sim};
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, state_, full_config()); }

io::Config Trainer::full_config() const {
  io::Config c;
  corpus::write_corpus_config(corpus_->config, c);
  model::write_model_config(mcfg_, c);
  write_train_config(cfg_, c);
  return c;
}

bool is_eval_step(std::size_t step, const TrainConfig& cfg) {
  if (step == cfg.total_updates || step == cfg.total_updates / 2) return true;
  return cfg.eval_interval > 0 && step % cfg.eval_interval == 0;
}

RunRecord run_training(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const RunOptions& opts) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  Trainer tr = opts.resume_from.empty() ? Trainer(corpus, mcfg, cfg) : Trainer(corpus, mcfg, cfg, opts.resume_from);
  const std::size_t stop = opts.stop_at == 0 ? cfg.total_updates : std::min(opts.stop_at, cfg.total_updates);

  RunRecord rec;
  for (std::size_t s = tr.state().step + 1; s <= stop && rec.first_masks.size() < 10; ++s) {
    for (auto& d : draw_batch(corpus, cfg, s)) {
      if (rec.first_masks.size() < 10) rec.first_masks.push_back(d.mask);
    }
  }

  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    write_text(opts.out_dir / "config.cfg", tr.full_config().to_text());
    metrics.open(opts.out_dir / "metrics.csv", std::ios::binary);
    if (!metrics) throw std::runtime_error("cannot write " + (opts.out_dir / "metrics.csv").string());
    metrics << kMetricsHeader << "\n";
  }

  while (tr.state().step < stop) {
    MetricsRow row;
    row.losses = tr.step();
    const std::size_t step = row.losses.step;
    if (is_eval_step(step, cfg)) {
      row.eval = tr.evaluate();
      rec.evals.push_back(*row.eval);
    }
    if (cfg.log_wall_time) row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (metrics.is_open()) metrics << format_metrics_row(row) << "\n" << std::flush;
    if (opts.on_row) opts.on_row(row);
    rec.rows.push_back(row);
    const bool periodic = opts.checkpoint_interval > 0 && step % opts.checkpoint_interval == 0;
    const bool early_stop = step == stop && stop < cfg.total_updates;
    if (!opts.out_dir.empty() && (periodic || early_stop)) {
      tr.save(opts.out_dir / ("checkpoint-" + std::to_string(step) + ".bin"));
    }
  }

  if (!opts.out_dir.empty()) {
    model::save_model(opts.out_dir / "model.bin", tr.state().model);
    model::save_model(opts.out_dir / "ema.bin", tr.state().ema);
    std::string masks = "item,num_frames,start,length\n";
    for (std::size_t i = 0; i < rec.first_masks.size(); ++i) {
      const auto& m = rec.first_masks[i];
      std::size_t start = 0;
      while (start < m.size() && m[start] == 0) ++start;
      masks += std::to_string(i) + "," + std::to_string(m.size()) + "," + std::to_string(start) + "," +
               std::to_string(corpus::mask_count(m)) + "\n";
    }
    write_text(opts.out_dir / "masks.csv", masks);
  }
  rec.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return rec;
}

void write_paired_csv(const std::filesystem::path& path, const std::vector<EvalPoint>& baseline,
                      const std::vector<EvalPoint>& adma) {
  std::string out = "step,baseline_proxy_ser,adma_proxy_ser,baseline_proxy_sim,adma_proxy_sim\n";
  for (const auto& b : baseline) {
    const auto* a = find_eval(adma, b.step);
    if (!a) continue;
    out += std::to_string(b.step) + "," + g17(b.proxy_ser) + "," + g17(a->proxy_ser) + "," + g17(b.proxy_sim) + "," +
           g17(a->proxy_sim) + "\n";
  }
  write_text(path, out);
}

ExperimentResult run_experiment(const corpus::Corpus& corpus, const model::ModelConfig& mcfg, const TrainConfig& base,
                                const std::filesystem::path& out_dir) {
  TrainConfig baseline_cfg = base;
  baseline_cfg.enable_text = false;
  baseline_cfg.enable_speech = false;
  TrainConfig adma_cfg = base;
  adma_cfg.enable_text = true;
  adma_cfg.enable_speech = true;

  ExperimentResult res;
  RunOptions opts;
  if (!out_dir.empty()) opts.out_dir = out_dir / "baseline";
  res.baseline = run_training(corpus, mcfg, baseline_cfg, opts);
  if (!out_dir.empty()) opts.out_dir = out_dir / "adma";
  res.adma = run_training(corpus, mcfg, adma_cfg, opts);
  res.masks_identical = res.baseline.first_masks == res.adma.first_masks;

  const std::size_t half = base.total_updates / 2;
  const std::size_t last = base.total_updates;
  auto ser = [](const RunRecord& r, std::size_t step) {
    const auto* e = find_eval(r.evals, step);
    if (!e) throw std::logic_error("run_experiment: no evaluation at step " + std::to_string(step));
    return e->proxy_ser;
  };
  res.baseline_half_ser = ser(res.baseline, half);
  res.baseline_final_ser = ser(res.baseline, last);
  res.adma_half_ser = ser(res.adma, half);
  res.adma_final_ser = ser(res.adma, last);

  if (!out_dir.empty()) {
    write_paired_csv(out_dir / "paired.csv", res.baseline.evals, res.adma.evals);
    io::Config s;
    s.set("half_step", std::to_string(half));
    s.set("final_step", std::to_string(last));
    s.set("baseline_half_proxy_ser", g17(res.baseline_half_ser));
    s.set("baseline_final_proxy_ser", g17(res.baseline_final_ser));
    s.set("adma_half_proxy_ser", g17(res.adma_half_ser));
    s.set("adma_final_proxy_ser", g17(res.adma_final_ser));
    s.set("adma_half_le_baseline_final", res.adma_half_ser <= res.baseline_final_ser ? "true" : "false");
    s.set("adma_final_le_baseline_final", res.adma_final_ser <= res.baseline_final_ser ? "true" : "false");
    s.set("masks_identical", res.masks_identical ? "true" : "false");
    write_text(out_dir / "summary.txt", s.to_text());
  }
  return res;
}

}  // namespace adma::train
