#pragma once

// Command implementations behind the prism executable. Each command reads its
// inputs, writes its artifacts, and reports progress on `log`. Failures are
// thrown as prism::Error and mapped to exit codes by exit_code().

#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prism/config.hpp"
#include "prism/data.hpp"
#include "prism/detection.hpp"
#include "prism/experiment.hpp"
#include "prism/metrics.hpp"
#include "prism/training.hpp"

namespace prism::cli {

namespace fs = std::filesystem;

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr std::size_t kGradCheckBatch = 16;
inline constexpr std::size_t kHistogramBins = 20;

class GradCheckFailure : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "grad_check"; }
};

struct Options {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<double> tpr;
  std::optional<double> lambda;
  std::optional<std::size_t> m;

  // score
  std::optional<std::string> checkpoint;
  std::optional<std::string> dataset;
  // eval
  std::optional<std::string> id_scores;
  std::vector<std::string> ood_scores;
  std::optional<std::string> predictions;
  // ablate
  std::string sweep = "lambda";
  std::vector<std::string> values;
};

// 1 missing file, 2 unparsable input, 3 shape mismatch, 4 anything else.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const IoError*>(&e)) return 1;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const LengthError*>(&e) || dynamic_cast<const VersionError*>(&e))
    return 2;
  if (dynamic_cast<const DimensionError*>(&e)) return 3;
  return 4;
}

inline std::string error_line(int code, std::string_view kind, std::string msg) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  return "error: code=" + std::to_string(code) + " kind=" + std::string(kind) + " msg=" + msg;
}

inline RunConfig resolve_config(const Options& o, std::ostream& log) {
  ParsedConfig parsed;
  if (o.config) parsed = load_config(*o.config);
  else parsed.defaulted = config_keys();
  auto& c = parsed.config;
  if (o.seed) c.seed = *o.seed;
  if (o.k) c.exp.k = *o.k;
  if (o.tpr) c.exp.tpr = *o.tpr;
  if (o.lambda) c.exp.train.lambda = *o.lambda;
  if (o.m) c.exp.train.pseudo_labels = *o.m;

  if (!parsed.defaulted.empty()) {
    log << "notice: defaults used for";
    for (const auto& k : parsed.defaulted) log << ' ' << k;
    log << '\n';
  }
  log << "resolved config:\n";
  std::istringstream lines(to_text(c));
  for (std::string line; std::getline(lines, line);) log << "  " << line << '\n';
  log << "seed " << c.seed << '\n';
  return c;
}

inline std::string require(const std::optional<std::string>& v, const char* flag) {
  if (!v) throw InvalidArgument(std::string("missing required flag ") + flag);
  return *v;
}

inline std::string split_path(const std::string& dir, Split s) {
  return (fs::path(dir) / (std::string(to_string(s)) + ".prsm")).string();
}

inline SyntheticSplits load_splits(const std::string& dir) {
  return {load_dataset(split_path(dir, Split::train)), load_dataset(split_path(dir, Split::test_id)),
          load_dataset(split_path(dir, Split::test_ood))};
}

// A directory means its train split; anything else is taken as a file.
inline std::string train_file(const std::string& data) {
  return fs::is_directory(data) ? split_path(data, Split::train) : data;
}

inline void check_input_dim(const PrismModel& model, const Dataset& ds, const std::string& what) {
  if (ds.x.cols() != model.dims.input)
    throw DimensionError(what + " has " + std::to_string(ds.x.cols()) + " features, checkpoint expects " +
                         std::to_string(model.dims.input));
}

inline int cmd_gen_data(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const auto dir = o.out.value_or(cfg.data_dir);
  const auto splits = gen_synthetic(cfg.synth());
  fs::create_directories(dir);
  for (const auto* ds : {&splits.train, &splits.test_id, &splits.test_ood}) {
    const auto path = split_path(dir, ds->split);
    save_dataset(path, *ds);
    out << path << ' ' << ds->size() << '\n';
  }
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const auto train = load_dataset(train_file(o.data.value_or(cfg.data_dir)));
  const auto path = o.out.value_or(cfg.checkpoint);
  const auto result = fit(train, cfg.train());
  save_checkpoint(path, result.model);
  detail::write_file(path + ".log.csv", result.log.csv());
  if (!result.log.epochs.empty()) {
    const auto& last = result.log.epochs.back();
    log << "epochs " << result.log.epochs.size() << " ce " << format_metric(last.ce) << " reg "
        << format_metric(last.reg) << " acc " << format_metric(last.accuracy) << '\n';
  }
  out << path << '\n';
  return 0;
}

inline int cmd_score(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const auto model = load_checkpoint(o.checkpoint.value_or(cfg.checkpoint));
  const auto train = load_dataset(train_file(o.data.value_or(cfg.data_dir)));
  const auto ds = load_dataset(require(o.dataset, "--dataset"));
  const auto path = require(o.out, "--out");
  check_input_dim(model, train, "index dataset");
  check_input_dim(model, ds, "scored dataset");

  const auto index = build_index(embeddings(model, train));
  const auto scores = knn_scores(model, index, ds, cfg.exp.k);
  const auto reg = sample_reg_terms(model, ds, cfg.exp.train.inversion);
  const auto pred = predictions(model, ds);

  std::vector<ScoreRecord> score_recs, reg_recs;
  std::string pred_text = "id,label,pred\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    score_recs.push_back({i, ds.split, scores[i]});
    reg_recs.push_back({i, ds.split, reg[i]});
    pred_text += std::to_string(i) + "," + std::to_string(ds.y[i]) + "," + std::to_string(pred[i]) + "\n";
  }
  save_scores(path, score_recs);
  save_scores(path + ".reg", reg_recs);
  detail::write_file(path + ".pred", pred_text);
  log << "mean reg " << format_metric(mean(reg)) << '\n';
  out << path << ' ' << ds.size() << '\n';
  return 0;
}

struct PredictionFile {
  std::vector<int> labels;
  std::vector<std::size_t> predicted;
};

inline PredictionFile load_predictions(const std::string& path) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "id,label,pred") throw FormatError(path + ": bad prediction header");
  PredictionFile p;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string id, label, pred;
    if (!std::getline(row, id, ',') || !std::getline(row, label, ',') || !std::getline(row, pred))
      throw FormatError(path + ": malformed row '" + line + "'");
    p.labels.push_back(detail::parse_number<int>("label", label));
    p.predicted.push_back(detail::parse_number<std::size_t>("pred", pred));
  }
  return p;
}

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const auto id = score_values(load_scores(require(o.id_scores, "--id")));
  if (o.ood_scores.empty()) throw InvalidArgument("missing required flag --ood");

  EvalReport report;
  report.tpr_level = cfg.exp.tpr;
  for (const auto& path : o.ood_scores)
    report.entries.push_back(evaluate_ood(fs::path(path).stem().string(), id, score_values(load_scores(path)),
                                          cfg.exp.tpr));
  if (o.predictions) {
    const auto p = load_predictions(*o.predictions);
    report.id_accuracy = id_accuracy(p.predicted, p.labels);
  }
  report.id_histogram = histogram(id, kHistogramBins);

  const auto csv = report_csv(report);
  out << csv;
  if (o.out) {
    detail::write_file(*o.out, csv);
    detail::write_file(*o.out + ".hist.csv", histogram_csv(report.id_histogram));
  }
  return 0;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const auto tc = cfg.train();
  const auto data = gen_synthetic(cfg.synth());
  const auto model = init_model(model_dims(tc, data.train.x.cols()), tc.init_variant, tc.seed + seed_offset::kInit);
  std::vector<std::size_t> idx(std::min(kGradCheckBatch, data.train.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * (data.train.size() / idx.size());
  const auto errors = grad_check(model, make_batch(data.train, idx), tc);

  double worst = 0.0;
  out << "group,max_rel_error\n";
  for (const auto& [group, err] : errors) {
    out << to_string(group) << ',' << format_metric(err) << '\n';
    worst = std::max(worst, err);
  }
  const bool ok = worst < kGradCheckTolerance;
  out << "result," << (ok ? "pass" : "fail") << '\n';
  if (!ok) throw GradCheckFailure("max relative error " + format_metric(worst) + " exceeds tolerance");
  return 0;
}

inline int cmd_ablate(const Options& o, std::ostream& out, std::ostream& log) {
  const auto cfg = resolve_config(o, log);
  const bool by_lambda = o.sweep == "lambda";
  if (!by_lambda && o.sweep != "M" && o.sweep != "m") throw ParseError("sweep must be lambda or M, got " + o.sweep);
  if (o.values.empty()) throw InvalidArgument("ablate needs at least one value");
  const auto data = o.data ? load_splits(*o.data) : gen_synthetic(cfg.synth());

  std::vector<ExperimentConfig> points;
  for (const auto& v : o.values) {
    ExperimentConfig e{cfg.synth(), cfg.train(), cfg.exp.k, cfg.exp.tpr};
    if (by_lambda) e.train.lambda = detail::parse_number<double>("lambda", v);
    else e.train.pseudo_labels = detail::parse_number<std::size_t>("M", v);
    points.push_back(e);
  }
  // Points are independent given their seeds, so they may run side by side;
  // rows are still emitted in input order.
  std::vector<std::future<ExperimentResult>> runs;
  for (const auto& p : points)
    runs.push_back(std::async(std::launch::async, [&data, p] { return run_experiment(data, p); }));

  std::string csv = std::string(by_lambda ? "lambda" : "M") + ",id_accuracy,fpr_at_95,auroc,mean_reg_id,mean_reg_ood\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto r = runs[i].get();
    csv += o.values[i] + "," + format_metric(r.id_accuracy) + "," + format_metric(r.ood.fpr_at_tpr) + "," +
           format_metric(r.ood.auroc) + "," + format_metric(mean(r.id_reg)) + "," + format_metric(mean(r.ood_reg)) +
           "\n";
  }
  out << csv;
  if (o.out) detail::write_file(*o.out, csv);
  return 0;
}

}  // namespace prism::cli
