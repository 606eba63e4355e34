#include "pauc/cli.hpp"

#include "pauc/embeddings.hpp"
#include "pauc/errors.hpp"
#include "pauc/eval.hpp"
#include "pauc/metriclearn.hpp"
#include "pauc/model_file.hpp"
#include "pauc/preprocess.hpp"
#include "pauc/scoring.hpp"
#include "pauc/synth.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace pauc::cli {

namespace {

// ---------------------------------------------------------------------------
// synth

struct SynthConfig {
  std::string out_dir;
  std::size_t dim = 20;
  std::size_t train_speakers = 500;
  std::size_t train_utts = 8;
  std::size_t eval_speakers = 200;
  std::size_t eval_utts = 4;
  double phi_b_min = 0.5;
  double phi_b_max = 2.0;
  double phi_w_scale = 1.0;
};

void cmd_synth(const SynthConfig& c, std::uint64_t seed) {
  SynthSpec train = default_train_spec(seed);
  train.dim = c.dim;
  train.n_speakers = c.train_speakers;
  train.utts_per_speaker = c.train_utts;
  train.phi_b = linspace_diagonal(c.dim, c.phi_b_min, c.phi_b_max);
  train.phi_w = c.phi_w_scale * Eigen::MatrixXd::Identity(c.dim, c.dim);

  SynthSpec held_out = train;
  held_out.seed = seed + kEvalSeedOffset;
  held_out.n_speakers = c.eval_speakers;
  held_out.utts_per_speaker = c.eval_utts;
  held_out.prefix = "evl";

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  const EmbeddingSet train_set = generate(train);
  const EmbeddingSet eval_set = generate(held_out);
  const TrialList trials = enroll_test_trials(eval_set);
  if (c.eval_speakers < 2) spdlog::warn("synth: a single held-out speaker gives no nontarget trials");
  if (c.eval_utts < 2) spdlog::warn("synth: one utterance per held-out speaker gives no test utterances");

  write_embeddings(train_set, dir / "train.emb");
  write_embeddings(eval_set, dir / "eval.emb");
  write_trials(trials, dir / "trials.txt");
  write_oracle_metric(oracle_metric(train), dir / "oracle.model");
  spdlog::info("synth: wrote {} training and {} held-out embeddings, {} trials to {}", train_set.size(),
               eval_set.size(), trials.entries.size(), dir.string());
}

// ---------------------------------------------------------------------------
// prep

struct PrepConfig {
  std::string chain;
  std::string fit;
  std::vector<std::string> apply;
  std::string out_dir;
  int plda_iters = 10;
};

struct Stage {
  std::string kind;  // mean, lda, lnorm, plda
  long arg = 0;
};

std::vector<Stage> parse_chain(const std::string& chain) {
  std::vector<Stage> stages;
  std::stringstream ss(chain);
  std::string item;
  while (std::getline(ss, item, ',')) {
    Stage st;
    const auto colon = item.find(':');
    st.kind = item.substr(0, colon);
    if (colon != std::string::npos) {
      try {
        st.arg = std::stol(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw DataError("chain stage '" + item + "' has a non-integer argument");
      }
    }
    if (st.kind == "lda") {
      if (colon == std::string::npos) throw DataError("chain stage 'lda' needs an output dimension, e.g. lda:150");
    } else if (st.kind == "plda") {
    } else if (st.kind == "lnorm" || st.kind == "mean") {
      if (colon != std::string::npos) throw DataError("chain stage '" + st.kind + "' takes no argument");
    } else {
      throw DataError("unknown chain stage '" + item + "' (expected mean, lda:N, lnorm, plda[:iters])");
    }
    stages.push_back(st);
  }
  if (stages.empty()) throw DataError("empty preprocessing chain");
  return stages;
}

void cmd_prep(const PrepConfig& c) {
  const auto stages = parse_chain(c.chain);
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);

  EmbeddingSet fit = read_embeddings(c.fit);
  std::vector<std::string> apply_paths = c.apply.empty() ? std::vector<std::string>{c.fit} : c.apply;
  std::vector<EmbeddingSet> outputs;
  for (const auto& p : apply_paths) outputs.push_back(read_embeddings(p));

  std::map<std::string, int> seen;
  for (const auto& st : stages) {
    const int n = seen[st.kind]++;
    const std::string model_name = st.kind + (n ? std::to_string(n + 1) : "") + ".model";
    if (st.kind == "lnorm") {
      fit = length_normalize(fit);
      for (auto& o : outputs) o = length_normalize(o);
    } else if (st.kind == "mean" || st.kind == "lda") {
      const LdaTransform t = st.kind == "mean" ? fit_mean(fit) : fit_lda(fit, st.arg);
      write_lda(t, dir / model_name);
      fit = apply_lda(t, fit);
      for (auto& o : outputs) o = apply_lda(t, o);
    } else {
      PldaOptions opt;
      opt.n_iters = st.arg > 0 ? static_cast<int>(st.arg) : c.plda_iters;
      const PldaModel m = fit_plda(fit, opt);
      write_plda(m, dir / model_name);
      fit = plda_latent(m, fit);
      for (auto& o : outputs) o = plda_latent(m, o);
    }
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const fs::path out = dir / fs::path(apply_paths[i]).filename();
    if (fs::exists(out) && fs::equivalent(out, apply_paths[i])) {
      throw DataError("refusing to overwrite input '" + apply_paths[i] + "'; choose another --out-dir");
    }
    write_embeddings(outputs[i], out);
  }
}

// ---------------------------------------------------------------------------
// train / score / calibrate / evaluate

struct TrainConfig {
  std::string trainer = "pauc";
  std::string train;
  std::string out;
  HyperParams hyper;
};

void cmd_train(const TrainConfig& c) {
  const EmbeddingSet set = read_embeddings(c.train);
  c.hyper.validate();
  const MetricModel model = c.trainer == "triplet" ? train_triplet_metric(set, c.hyper)
                                                   : train_pauc_metric(set, c.hyper);
  write_metric(model, c.out);
  spdlog::info("train: {} after {} iterations, training pAUC {:.4f}", model_kind(model.trainer),
               model.history.size(), model.train_pauc());
}

struct ScoreConfig {
  std::string model;
  bool cosine = false;
  std::vector<std::string> embeddings;
  std::string trials;
  std::string out;
};

ScoringBackend load_backend(const ScoreConfig& c) {
  if (c.cosine) return {CosineBackend{}};
  if (c.model.empty()) throw DataError("score needs --model or --cosine");
  const std::string kind = peek_model_kind(c.model);
  if (kind == "plda") return {PldaBackend{read_plda(c.model)}};
  return {MahalanobisBackend{read_metric(c.model).m}};
}

void cmd_score(const ScoreConfig& c) {
  const ScoringBackend backend = load_backend(c);
  EmbeddingSet all;
  bool first = true;
  for (const auto& p : c.embeddings) {
    EmbeddingSet part = read_embeddings(p);
    if (first) {
      all = EmbeddingSet(part.dim());
      first = false;
    }
    for (const auto& r : part.records()) all.add(r.utt_id, r.speaker_id, r.vector);
  }
  const TrialList trials = read_trials(c.trials);
  write_scores(score_trials(backend, all, trials), c.out);
}

struct CalibrateConfig {
  std::string train_scores;
  std::string model_in;
  std::string model_out;
  std::string apply;
  std::string out;
  double prior = 0.01;
};

void cmd_calibrate(const CalibrateConfig& c) {
  CalibrationModel model;
  if (!c.model_in.empty()) {
    model = read_calibration(c.model_in);
  } else {
    if (c.train_scores.empty()) throw DataError("calibrate needs --train-scores or --model");
    model = fit_calibration(read_scores(c.train_scores), c.prior);
  }
  if (!c.model_out.empty()) write_calibration(model, c.model_out);
  const std::string input = c.apply.empty() ? c.train_scores : c.apply;
  if (!c.out.empty()) {
    if (input.empty()) throw DataError("calibrate needs --apply to produce calibrated scores");
    write_scores(apply_calibration(model, read_scores(input)), c.out);
  }
  spdlog::info("calibrate: scale {} offset {}", model.scale, model.offset);
}

struct EvaluateConfig {
  std::string scores;
  EvaluateOptions options;
  std::string roc_out;
  std::string det_out;
  std::string report_out;
};

std::string format_report(const MetricsReport& r, const EvaluateOptions& o) {
  char buf[256];
  std::string s;
  auto line = [&](const char* fmt, auto... v) {
    std::snprintf(buf, sizeof(buf), fmt, v...);
    s += buf;
  };
  line("EER            %8.4f %%\n", 100.0 * r.eer);
  line("minDCF         %8.4f   (P_tar=%g)\n", r.min_dcf, o.dcf.p_target);
  line("pAUC[0,0.01]   %8.4f\n", r.pauc_0_001);
  const std::string band = "pAUC[" + format_real(o.alpha) + "," + format_real(o.beta) + "]";
  line("%-15s%8.4f\n", band.c_str(), r.pauc_custom);
  line("AUC            %8.4f\n", r.auc);
  line("AP             %8.4f %%\n", 100.0 * r.ap);
  line("actDCF         %8.4f\n", r.act_dcf);
  line("Cllr           %8.4f bits\n", r.cllr);
  s += "eer=" + format_real(r.eer) + "\n";
  s += "min_dcf=" + format_real(r.min_dcf) + "\n";
  s += "pauc_0_001=" + format_real(r.pauc_0_001) + "\n";
  s += "pauc_custom=" + format_real(r.pauc_custom) + "\n";
  s += "auc=" + format_real(r.auc) + "\n";
  s += "ap=" + format_real(r.ap) + "\n";
  s += "act_dcf=" + format_real(r.act_dcf) + "\n";
  s += "cllr=" + format_real(r.cllr) + "\n";
  return s;
}

void cmd_evaluate(const EvaluateConfig& c) {
  const ScoreSet scores = read_scores(c.scores);
  const MetricsReport r = evaluate(scores, c.options);
  const std::string text = format_report(r, c.options);
  std::cout << text;
  if (!c.report_out.empty()) {
    std::ofstream out(c.report_out);
    if (!(out << text)) throw DataError("cannot write report to '" + c.report_out + "'");
  }
  if (!c.roc_out.empty()) write_curve(roc_curve(scores), c.roc_out);
  if (!c.det_out.empty()) write_det(det_curve(scores), c.det_out);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Expands `--config FILE` into the flags it names. Values already given on
// the command line win; keys that are not options of the subcommand are
// rejected as usage errors.
std::vector<std::string> with_config_file(CLI::App& app, std::vector<std::string> args) {
  std::string path;
  std::size_t sub_pos = 0;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (sub_pos == 0 && !args[i].empty() && args[i][0] != '-') sub_pos = i;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || sub_pos == 0) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args[sub_pos]);
  if (sub == nullptr) return args;

  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::vector<std::string> extra;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw CLI::ParseError(where + ": expected key=value", CLI::ExitCodes::ConversionError);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr || key == "config" || key == "help") {
      throw CLI::ParseError(where + ": unknown key '" + key + "' for " + sub->get_name(),
                            CLI::ExitCodes::ExtrasError);
    }
    if (given_on_command_line(args, flag)) continue;
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") {
        extra.push_back(flag);
      } else if (value != "false" && value != "0") {
        throw CLI::ParseError(where + ": flag '" + key + "' expects true or false", CLI::ExitCodes::ConversionError);
      }
      continue;
    }
    std::stringstream values(value);
    std::string v;
    while (values >> v) {
      extra.push_back(flag);
      extra.push_back(v);
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("paucmetric");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv(kLogLevelEnv)) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace

int run(int argc, char** argv) {
  if (!spdlog::get("paucmetric")) setup_logging();

  CLI::App app{"Partial-AUC metric learning back-end for speaker verification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");
  std::uint64_t seed = 0;

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Flat key=value file; command-line flags take precedence");
  };

  SynthConfig synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic embeddings, trials and the analytic metric");
  s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  s->add_option("--dim", synth.dim, "Embedding dimension")->capture_default_str();
  s->add_option("--train-speakers", synth.train_speakers)->capture_default_str();
  s->add_option("--train-utts", synth.train_utts, "Utterances per training speaker")->capture_default_str();
  s->add_option("--eval-speakers", synth.eval_speakers)->capture_default_str();
  s->add_option("--eval-utts", synth.eval_utts, "Utterances per held-out speaker")->capture_default_str();
  s->add_option("--phi-b-min", synth.phi_b_min, "Smallest between-speaker variance")->capture_default_str();
  s->add_option("--phi-b-max", synth.phi_b_max, "Largest between-speaker variance")->capture_default_str();
  s->add_option("--phi-w-scale", synth.phi_w_scale, "Within-speaker variance")->capture_default_str();
  s->add_option("--seed", seed)->capture_default_str();
  add_config(s);

  PrepConfig prep;
  auto* p = app.add_subcommand("prep", "Fit and apply a preprocessing chain");
  p->add_option("--chain", prep.chain, "Comma-separated stages: mean, lda:N, lnorm, plda[:iters]")->required();
  p->add_option("--fit", prep.fit, "Embeddings the stages are fitted on")->required();
  p->add_option("--apply", prep.apply, "Embedding files to transform (default: the --fit file)");
  p->add_option("--out-dir", prep.out_dir, "Directory for models and transformed sets")->required();
  p->add_option("--plda-iters", prep.plda_iters, "EM iterations for plda stages")->capture_default_str();
  p->add_option("--seed", seed)->capture_default_str();
  add_config(p);

  TrainConfig train;
  auto* t = app.add_subcommand("train", "Learn a Mahalanobis metric");
  t->add_option("--trainer", train.trainer)->check(CLI::IsMember({"pauc", "triplet"}))->capture_default_str();
  t->add_option("--train", train.train, "Training embeddings")->required();
  t->add_option("--out", train.out, "Output model file")->required();
  t->add_option("--alpha", train.hyper.alpha)->capture_default_str();
  t->add_option("--beta", train.hyper.beta)->capture_default_str();
  t->add_option("--delta", train.hyper.delta)->capture_default_str();
  t->add_option("--gamma", train.hyper.gamma)->capture_default_str();
  t->add_option("--mu", train.hyper.mu)->capture_default_str();
  t->add_option("--eta", train.hyper.eta)->capture_default_str();
  t->add_option("--batch-size", train.hyper.s, "Speakers per mini-batch")->capture_default_str();
  t->add_option("--max-iters", train.hyper.max_iters)->capture_default_str();
  t->add_option("--rel-tol", train.hyper.rel_tol)->capture_default_str();
  t->add_option("--seed", seed)->capture_default_str();
  add_config(t);

  ScoreConfig score;
  auto* sc = app.add_subcommand("score", "Score a trial list");
  auto* model_opt = sc->add_option("--model", score.model, "Metric or PLDA model file");
  auto* cos_opt = sc->add_flag("--cosine", score.cosine, "Cosine scoring without a model");
  model_opt->excludes(cos_opt);
  sc->add_option("--embeddings", score.embeddings, "Embedding file(s) holding the trial utterances")->required();
  sc->add_option("--trials", score.trials)->required();
  sc->add_option("--out", score.out, "Output score file")->required();
  add_config(sc);

  CalibrateConfig cal;
  auto* ca = app.add_subcommand("calibrate", "Fit and/or apply linear logistic-regression calibration");
  ca->add_option("--train-scores", cal.train_scores, "Labeled scores to fit on");
  ca->add_option("--model", cal.model_in, "Existing calibration model to apply");
  ca->add_option("--model-out", cal.model_out, "Where to write the fitted model");
  ca->add_option("--apply", cal.apply, "Scores to calibrate (default: --train-scores)");
  ca->add_option("--out", cal.out, "Calibrated score file");
  ca->add_option("--prior", cal.prior, "Effective target prior")->capture_default_str();
  add_config(ca);

  EvaluateConfig ev;
  auto* e = app.add_subcommand("evaluate", "Compute verification metrics and curves");
  e->add_option("--scores", ev.scores)->required();
  e->add_option("--alpha", ev.options.alpha, "Lower FPR of pauc_custom")->capture_default_str();
  e->add_option("--beta", ev.options.beta, "Upper FPR of pauc_custom")->capture_default_str();
  e->add_option("--p-target", ev.options.dcf.p_target)->capture_default_str();
  e->add_option("--c-miss", ev.options.dcf.c_miss)->capture_default_str();
  e->add_option("--c-fa", ev.options.dcf.c_fa)->capture_default_str();
  e->add_option("--roc-out", ev.roc_out, "ROC curve file (threshold fpr fnr)");
  e->add_option("--det-out", ev.det_out, "DET curve file (with probit columns)");
  e->add_option("--report-out", ev.report_out, "Also write the report to this file");
  add_config(e);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = with_config_file(app, std::move(args));
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const DataError& err) {
    spdlog::error("{}", err.what());
    return kDataError;
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*s) {
      cmd_synth(synth, seed);
    } else if (*p) {
      cmd_prep(prep);
    } else if (*t) {
      train.hyper.seed = seed;
      cmd_train(train);
    } else if (*sc) {
      cmd_score(score);
    } else if (*ca) {
      cmd_calibrate(cal);
    } else if (*e) {
      cmd_evaluate(ev);
    }
  } catch (const NumericalError& err) {
    spdlog::error("{}", err.what());
    return kNumericalError;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return kDataError;
  }
  return kSuccess;
}

}  // namespace pauc::cli
