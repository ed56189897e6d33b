// Command-line front end: fixtures, pretraining, offline policy runs, report summaries, replay and
// the live session server.

#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "scribe/harness.hpp"
#include "scribe/http_transport.hpp"
#include "scribe/service.hpp"

using namespace scribe;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
}

std::optional<std::string> init_dir_arg(const std::string& s) {
  if (s == "none") return std::nullopt;
  return s;
}

std::shared_ptr<const ModelParams> load_model(const std::string& path) {
  if (path.empty()) return nullptr;
  return std::make_shared<const ModelParams>(load_checkpoint(path));
}

void print_stats_row(const char* name, const LatencyStats& s) {
  std::cout << std::left << std::setw(16) << name << std::right << std::fixed << std::setprecision(3) << std::setw(10)
            << s.mean << std::setw(10) << s.std << std::setw(10) << s.p95 << std::setw(10) << s.p99 << std::setw(8)
            << s.n << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correction-driven temporal annotation engine"};
  app.require_subcommand(1);

  // make-fixtures
  auto* fx = app.add_subcommand("make-fixtures", "Write a synthetic case set");
  std::string fx_out;
  int fx_count = 20;
  std::uint64_t fx_seed = 1;
  FixtureConfig fx_cfg;
  fx->add_option("--out", fx_out, "Output directory (features/, labels/, init/)")->required();
  fx->add_option("--count", fx_count, "Number of cases");
  fx->add_option("--seed", fx_seed, "Case seed");
  fx->add_option("--frames", fx_cfg.num_frames, "Frames per case");
  fx->add_option("--segments", fx_cfg.num_segments, "Ground-truth segments per case");
  fx->add_option("--labels", fx_cfg.num_labels, "Vocabulary size");
  fx->add_option("--dim", fx_cfg.dim, "Feature dimension");
  fx->add_option("--noise", fx_cfg.noise, "Feature noise standard deviation");

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Train the proposal model on synthetic scribbles");
  std::string pt_features, pt_labels, pt_out;
  PretrainConfig pt_cfg;
  pt->add_option("--features", pt_features, "Feature directory")->required();
  pt->add_option("--labels", pt_labels, "Label directory")->required();
  pt->add_option("--out", pt_out, "Checkpoint path")->required();
  pt->add_option("--steps", pt_cfg.train.steps, "SGD steps");
  pt->add_option("--examples-per-case", pt_cfg.examples_per_case, "Synthetic scribbles per case");
  pt->add_option("--seed", pt_cfg.train.seed, "Training seed");

  // run
  auto* run = app.add_subcommand("run", "Run a policy variant under the oracle");
  std::string run_features, run_labels, run_init = "none", run_variant = "full", run_out = "-", run_model;
  double run_mult = 1.5;
  std::uint64_t run_seed = 0;
  bool run_timings = false;
  run->add_option("--features", run_features, "Feature directory")->required();
  run->add_option("--labels", run_labels, "Label directory")->required();
  run->add_option("--init", run_init, "Initial labeling directory or 'none'");
  run->add_option("--variant", run_variant, "full|no-cqp|no-local|no-cda|no-dense");
  run->add_option("--budget-mult", run_mult, "Budget multiplier on the GT boundary count");
  run->add_option("--seed", run_seed, "Policy seed");
  run->add_option("--model", run_model, "Proposal checkpoint (not needed for no-local)");
  run->add_option("--out", run_out, "Report path ('-' for stdout)");
  run->add_flag("--timings", run_timings, "Include wall-clock timings (report no longer reproducible)");

  // curve
  auto* cv = app.add_subcommand("curve", "Budget curve from a report");
  std::string cv_report, cv_metric = "f1@5";
  cv->add_option("--report", cv_report, "Report file")->required();
  cv->add_option("--metric", cv_metric, "f1@5|f1@10|f1@25|f1@50|edit");

  // latency
  auto* lt = app.add_subcommand("latency", "Latency statistics from a report run with --timings");
  std::string lt_report;
  lt->add_option("--report", lt_report, "Report file")->required();

  // replay
  auto* rp = app.add_subcommand("replay", "Rebuild a session from its journal");
  std::string rp_journal, rp_features, rp_model;
  rp->add_option("--journal", rp_journal, "Journal file")->required();
  rp->add_option("--features", rp_features, "Feature file of the case")->required();
  rp->add_option("--model", rp_model, "Checkpoint the session started from");

  // serve
  auto* sv = app.add_subcommand("serve", "Live session server");
  std::string sv_features, sv_labels, sv_init = "none", sv_model, sv_host = "127.0.0.1", sv_save = "sessions";
  int sv_port = 8080;
  bool sv_stdio = false;
  sv->add_option("--features", sv_features, "Feature directory")->required();
  sv->add_option("--labels", sv_labels, "Label directory (vocabulary and, for oracle use, ground truth)")->required();
  sv->add_option("--init", sv_init, "Initial labeling directory or 'none'");
  sv->add_option("--model", sv_model, "Proposal checkpoint")->required();
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--port", sv_port, "Port");
  sv->add_option("--save-dir", sv_save, "Where save writes snapshots and journals");
  sv->add_flag("--stdio", sv_stdio, "Serve line-delimited messages on stdin/stdout instead of HTTP");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fx) {
      const auto cases = make_cases(fx_cfg, fx_count, fx_seed);
      write_cases(fx_out, cases);
      std::cout << "wrote " << cases.size() << " cases to " << fx_out << '\n';
    } else if (*pt) {
      const auto cases = load_cases(pt_features, pt_labels, std::nullopt);
      const auto res = pretrain(cases, pt_cfg);
      if (res.diverged) {
        std::cerr << "training diverged after " << res.steps_run << " steps\n";
        return 2;
      }
      save_checkpoint(pt_out, res.params);
      std::cout << "trained " << res.steps_run << " steps, final batch loss "
                << (res.batch_losses.empty() ? 0.0 : res.batch_losses.back()) << ", wrote " << pt_out << '\n';
    } else if (*run) {
      RunOptions o;
      o.variant = policy_from_string(run_variant);
      o.seed = run_seed;
      o.budget_mult = run_mult;
      const auto cases = load_cases(run_features, run_labels, init_dir_arg(run_init));
      auto model = load_model(run_model);
      if (!model && o.variant != PolicyVariant::NoLocalProp)
        throw Error(ErrorKind::Argument, "--model is required for variant " + run_variant);
      const auto report = run_policy(cases, model, o);
      write_text(run_out, report_to_json(report, run_timings).dump(2) + "\n");
      if (report.failed > 0) std::cerr << report.failed << " case(s) failed; see report\n";
    } else if (*cv) {
      const auto report = report_from_json(read_json(cv_report));
      std::cout << "step\t" << cv_metric << '\n';
      for (const auto& [k, v] : budget_curve(report, metric_from_string(cv_metric)))
        std::cout << k << '\t' << std::setprecision(6) << v << '\n';
    } else if (*lt) {
      const auto report = report_from_json(read_json(lt_report));
      const auto l = latency_report(report);
      if (l.total.n == 0) throw Error(ErrorKind::Argument, "report has no timings; rerun with --timings");
      std::cout << std::left << std::setw(16) << "component" << std::right << std::setw(10) << "mean_ms"
                << std::setw(10) << "std_ms" << std::setw(10) << "p95_ms" << std::setw(10) << "p99_ms" << std::setw(8)
                << "n" << '\n';
      print_stats_row("feature_lookup", l.feature_lookup);
      print_stats_row("proposal", l.proposal);
      print_stats_row("scoring", l.scoring);
      print_stats_row("decode", l.decode);
      print_stats_row("total", l.total);
      print_stats_row("adaptation", l.adaptation);
    } else if (*rp) {
      std::ifstream in(rp_journal);
      if (!in) throw Error(ErrorKind::Io, "cannot open " + rp_journal);
      const auto events = Journal::parse_lines(in);
      auto s = replay(events, std::make_shared<const FeatureSequence>(load_features(rp_features)), load_model(rp_model));
      std::cout << s->snapshot_json().dump(2) << '\n';
    } else if (*sv) {
      ServiceConfig cfg{load_cases(sv_features, sv_labels, init_dir_arg(sv_init)), load_model(sv_model), sv_save,
                        RefinementMode::Background};
      Service svc(std::move(cfg));
      if (sv_stdio) {
        serve_stream(svc, std::cin, std::cout);
      } else {
        httplib::Server srv;
        mount_routes(srv, svc);
        std::cerr << "listening on http://" << sv_host << ':' << sv_port << '\n';
        if (!srv.listen(sv_host, sv_port)) throw Error(ErrorKind::Io, "cannot bind " + sv_host + ":" + std::to_string(sv_port));
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
