#include "adma/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "adma/align/ctc.hpp"
#include "adma/error.hpp"
#include "adma/eval/evaluator.hpp"
#include "adma/eval/sweep.hpp"
#include "adma/numerics/grad_check.hpp"
#include "adma/train/gradient_suite.hpp"
#include "adma/train/run.hpp"

namespace adma::cli {

namespace {

using json = nlohmann::json;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus_dir;
};

struct Setup {
  corpus::CorpusConfig corpus;
  model::ModelConfig model;
  train::TrainConfig train;
};

struct SamplerFlags {
  std::optional<std::string> solver;
  std::optional<std::size_t> nfe;
  std::optional<double> sway;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("ADMA_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const auto v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("ADMA_SEED='") + s + "' is not an unsigned integer");
  return v;
}

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "run seed (falls back to ADMA_SEED)");
  auto* out = app->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

void add_sampler(CLI::App* app, SamplerFlags& s) {
  app->add_option("--solver", s.solver, "euler or midpoint");
  app->add_option("--nfe", s.nfe, "ODE steps");
  app->add_option("--sway", s.sway, "sway coefficient in [-1, 1]");
}

// --seed, then ADMA_SEED, then the config. The corpus seed stays as configured.
Setup load_setup(const Common& c, const SamplerFlags* sampler = nullptr) {
  io::Config cfg;
  if (!c.config.empty()) cfg = io::Config::load(c.config);
  cfg.require_known(train::known_config_keys());
  Setup s;
  s.corpus = corpus::corpus_config_from(cfg);
  s.corpus.validate();
  model::ModelConfig mbase;
  mbase.vocab = s.corpus.vocab_size + 1;
  mbase.feature_dim = s.corpus.feature_dim;
  s.model = model::model_config_from(cfg, mbase);
  s.train = train::train_config_from(cfg);
  if (const auto seed = c.seed ? c.seed : env_seed()) s.train.seed = *seed;
  if (sampler) {
    if (sampler->solver) s.train.sampler.solver = flow::parse_solver(*sampler->solver);
    if (sampler->nfe) s.train.sampler.nfe_steps = *sampler->nfe;
    if (sampler->sway) s.train.sampler.sway = *sampler->sway;
  }
  s.train.validate();
  return s;
}

corpus::Corpus load_or_build(const Common& c, const Setup& s) {
  if (!c.corpus_dir.empty()) return corpus::load_corpus(c.corpus_dir);
  return corpus::build_corpus(s.corpus);
}

std::string join(const corpus::TokenSeq& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + std::to_string(t[i]);
  return s;
}

json report_json(const eval::EvalReport& r) {
  json j;
  j["proxy_ser"] = r.proxy_ser;
  j["proxy_sim"] = r.proxy_sim;
  j["num_utterances"] = r.num_utterances;
  j["sampler"] = {{"solver", flow::solver_name(r.sampler.solver)},
                  {"nfe_steps", r.sampler.nfe_steps},
                  {"sway", r.sampler.sway}};
  j["warnings"] = r.warnings;
  j["pairs"] = json::array();
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    j["pairs"].push_back({{"prompt", r.pairs[i].prompt},
                          {"target", r.pairs[i].target},
                          {"speaker", r.pairs[i].speaker},
                          {"decoded", r.scores[i].decoded},
                          {"edits", r.scores[i].edits},
                          {"target_length", r.scores[i].target_length},
                          {"sim", r.scores[i].sim}});
  }
  return j;
}

std::filesystem::path metrics_path(const std::string& p) {
  std::filesystem::path path(p);
  return std::filesystem::is_directory(path) ? path / "metrics.csv" : path;
}

std::vector<train::EvalPoint> evals_of(const std::vector<train::MetricsRow>& rows) {
  std::vector<train::EvalPoint> out;
  for (const auto& r : rows) {
    if (r.eval) out.push_back(*r.eval);
  }
  return out;
}

void print_eval_row(std::ostream& out, const train::MetricsRow& r) {
  char line[200];
  std::snprintf(line, sizeof line, "step %6zu  l_total %.5f  l_cfm %.5f  proxy_ser %.4f  proxy_sim %.4f\n",
                r.losses.step, r.losses.l_total, r.losses.l_cfm, r.eval->proxy_ser, r.eval->proxy_sim);
  out << line << std::flush;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  numerics::tune_allocator();
  CLI::App app{"Flow-matching infilling trainer with text and speech alignment losses", "adma"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;
  SamplerFlags sampler;

  auto* corpus_cmd = app.add_subcommand("corpus", "synthetic corpus tools");
  corpus_cmd->require_subcommand(1);
  auto* gen = corpus_cmd->add_subcommand("gen", "generate a corpus directory (--seed sets corpus.seed)");
  add_common(gen, common, true);

  auto* train_cmd = app.add_subcommand("train", "train one run, or the baseline/A-DMA pair with --experiment");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--corpus", common.corpus_dir, "corpus directory from `corpus gen`");
  bool experiment = false;
  std::string resume;
  std::size_t stop_at = 0;
  std::size_t checkpoint_interval = 0;
  train_cmd->add_flag("--experiment", experiment, "train baseline and A-DMA under identical seeds");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-at", stop_at, "stop after this update and write a checkpoint");
  train_cmd->add_option("--checkpoint-interval", checkpoint_interval, "write checkpoint-<step>.bin every N updates");

  std::string model_path;
  double mask_ratio = -1.0;
  auto* sample_cmd = app.add_subcommand("sample", "infill every held-out pair and write the features");
  add_common(sample_cmd, common, true);
  add_sampler(sample_cmd, sampler);
  sample_cmd->add_option("--corpus", common.corpus_dir, "corpus directory");
  sample_cmd->add_option("--model", model_path, "model file (ema.bin)")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--mask-ratio", mask_ratio, "generated share of frames (default: mask-range midpoint)");

  auto* eval_cmd = app.add_subcommand("eval", "proxy SER/SIM of a model on the held-out pairs");
  add_common(eval_cmd, common, false);
  add_sampler(eval_cmd, sampler);
  eval_cmd->add_option("--corpus", common.corpus_dir, "corpus directory");
  eval_cmd->add_option("--model", model_path, "model file (ema.bin)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--mask-ratio", mask_ratio, "generated share of frames (default: mask-range midpoint)");

  std::string axis;
  std::vector<std::string> values;
  std::size_t jobs = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "train one A-DMA run per axis value and tabulate proxy metrics");
  add_common(sweep_cmd, common, true);
  sweep_cmd->add_option("--corpus", common.corpus_dir, "corpus directory");
  sweep_cmd->add_option("--axis", axis, "text_tap, speech_tap, dual_taps, loss_variant or target_selection")
      ->required();
  sweep_cmd->add_option("--values", values, "comma-separated values (default: the axis defaults)")->delimiter(',');
  sweep_cmd->add_option("--jobs", jobs, "rows trained concurrently")->check(CLI::PositiveNumber);

  std::string profile = "tiny";
  double eps = 1e-5;
  double tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  grad_cmd->add_option("--profile", profile, "model profile")->check(CLI::IsMember({"tiny"}));
  grad_cmd->add_option("--eps", eps, "central-difference step");
  grad_cmd->add_option("--tol", tol, "relative error tolerance");
  grad_cmd->add_option("--seed", common.seed, "parameter seed (falls back to ADMA_SEED)");

  std::size_t max_T = 6;
  std::size_t max_U = 3;
  std::size_t max_K = 3;
  std::size_t instances = 500;
  auto* ctc_cmd = app.add_subcommand("ctc-oracle", "CTC dynamic program against exhaustive enumeration");
  ctc_cmd->add_option("--max-T", max_T, "longest frame count");
  ctc_cmd->add_option("--max-U", max_U, "longest target");
  ctc_cmd->add_option("--max-K", max_K, "largest content vocabulary");
  ctc_cmd->add_option("--instances", instances, "random instances");
  ctc_cmd->add_option("--seed", common.seed, "instance seed (falls back to ADMA_SEED)");

  std::string baseline_metrics;
  std::string adma_metrics;
  auto* plot_cmd = app.add_subcommand("plotdata", "paired proxy-metric CSV from two runs' metrics");
  plot_cmd->add_option("--baseline", baseline_metrics, "baseline metrics.csv or run directory")->required();
  plot_cmd->add_option("--adma", adma_metrics, "A-DMA metrics.csv or run directory")->required();
  plot_cmd->add_option("--out", common.out, "output CSV (or directory for paired.csv)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kValidation;
  }

  try {
    if (gen->parsed()) {
      io::Config cfg;
      if (!common.config.empty()) cfg = io::Config::load(common.config);
      cfg.require_known(train::known_config_keys());
      auto cc = corpus::corpus_config_from(cfg);
      if (const auto seed = common.seed ? common.seed : env_seed()) cc.seed = *seed;
      cc.validate();
      const auto corpus = corpus::build_corpus(cc);
      corpus::save_corpus(corpus, common.out);
      out << "wrote " << corpus.train.size() << " train and " << corpus.eval.size() << " held-out utterances to "
          << common.out << "\n";
      return kOk;
    }

    if (train_cmd->parsed()) {
      const auto s = load_setup(common);
      const auto corpus = load_or_build(common, s);
      if (experiment) {
        const auto res = train::run_experiment(corpus, s.model, s.train, common.out);
        char line[240];
        std::snprintf(line, sizeof line,
                      "baseline proxy_ser half %.4f final %.4f\nadma     proxy_ser half %.4f final %.4f\n"
                      "masks identical: %s\n",
                      res.baseline_half_ser, res.baseline_final_ser, res.adma_half_ser, res.adma_final_ser,
                      res.masks_identical ? "yes" : "no");
        out << line;
        return kOk;
      }
      train::RunOptions opts;
      opts.out_dir = common.out;
      opts.resume_from = resume;
      opts.stop_at = stop_at;
      opts.checkpoint_interval = checkpoint_interval;
      opts.on_row = [&](const train::MetricsRow& r) {
        if (r.eval) print_eval_row(out, r);
      };
      const auto rec = train::run_training(corpus, s.model, s.train, opts);
      out << "trained " << rec.rows.size() << " updates in " << rec.wall_seconds << " s; output in " << common.out
          << "\n";
      return kOk;
    }

    if (sample_cmd->parsed() || eval_cmd->parsed()) {
      const auto s = load_setup(common, &sampler);
      const auto corpus = load_or_build(common, s);
      const auto m = model::load_model(model_path);
      const auto report = eval::evaluate(m, corpus, {s.train.sampler, s.train.seed, mask_ratio});
      for (const auto& w : report.warnings) err << "warning: " << w << "\n";
      char line[160];
      std::snprintf(line, sizeof line, "proxy_ser %.6f  proxy_sim %.6f  over %zu pairs\n", report.proxy_ser,
                    report.proxy_sim, report.num_utterances);
      out << line;
      if (!common.out.empty()) {
        const std::filesystem::path dir(common.out);
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "eval.json") << report_json(report).dump(2) << "\n";
        if (sample_cmd->parsed()) {
          std::ofstream csv(dir / "samples.csv");
          csv << "pair,prompt,target,speaker,file,target_tokens,decoded_tokens,edits,sim\n";
          for (std::size_t i = 0; i < report.pairs.size(); ++i) {
            const std::string file = "sample-" + std::to_string(i) + ".mat";
            corpus::write_matrix(dir / file, report.generated[i]);
            const auto& p = report.pairs[i];
            const auto& sc = report.scores[i];
            csv << i << "," << p.prompt << "," << p.target << "," << p.speaker << "," << file << ","
                << join(corpus.eval[p.target].tokens) << "," << join(sc.decoded) << "," << sc.edits << ","
                << io::format_double(sc.sim) << "\n";
          }
        }
      }
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      const auto s = load_setup(common);
      const auto corpus = load_or_build(common, s);
      eval::SweepSpec spec;
      spec.axis = eval::parse_sweep_axis(axis);
      spec.values = values;
      spec.model = s.model;
      spec.train = s.train;
      std::filesystem::create_directories(common.out);
      const auto rows = eval::run_sweep(corpus, spec, common.out, jobs, [&](const eval::SweepRow& r) {
        out << eval::format_sweep_row(r) << "\n" << std::flush;
      });
      eval::write_sweep_csv(std::filesystem::path(common.out) / "sweep.csv", rows);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.ok ? 0 : 1;
      if (failed) err << failed << " of " << rows.size() << " sweep rows failed\n";
      return failed == rows.size() ? kRuntime : kOk;
    }

    if (grad_cmd->parsed()) {
      const auto seed = common.seed ? common.seed : env_seed();
      const auto report = train::run_gradient_suite(eps, tol, seed.value_or(0));
      out << train::format_suite(report);
      return report.passed ? kOk : kValidation;
    }

    if (ctc_cmd->parsed()) {
      const auto seed = common.seed ? common.seed : env_seed();
      const auto rep = align::ctc_oracle_check(instances, max_T, max_U, max_K, seed.value_or(0));
      char line[200];
      std::snprintf(line, sizeof line, "instances %zu (infeasible %zu)  max |DP - brute force| = %.3e\n",
                    rep.instances, rep.infeasible, rep.max_abs_diff);
      out << line;
      return rep.max_abs_diff < 1e-9 ? kOk : kValidation;
    }

    if (plot_cmd->parsed()) {
      const auto base = evals_of(train::read_metrics_csv(metrics_path(baseline_metrics)));
      const auto adma = evals_of(train::read_metrics_csv(metrics_path(adma_metrics)));
      std::filesystem::path dest(common.out);
      if (std::filesystem::is_directory(dest)) dest /= "paired.csv";
      train::write_paired_csv(dest, base, adma);
      out << "wrote " << dest.string() << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kValidation;
  } catch (const DomainError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  err << app.help();
  return kValidation;
}

int cli_main(int argc, const char* const* argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace adma::cli
