#include "gsacp/workspace.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace gsacp;

namespace {

constexpr int kOk = 0;
constexpr int kRejected = 2;
constexpr int kNumerical = 3;

void print_metrics(const RunRecord& r) {
  std::printf("%s  %s\n", r.run_id.c_str(), r.kind.c_str());
  for (const auto& [k, v] : r.metrics) std::printf("  %-18s %.6g\n", k.c_str(), v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-supervised small target segmentation: data, training, soups and the run ledger"};
  app.require_subcommand(1);
  std::string root = ".";
  app.add_option("--root", root, "Workspace root; relative paths resolve against it");

  auto* gen = app.add_subcommand("generate", "Write a frozen synthetic dataset");
  std::string spec_file, out_dir;
  std::size_t n = 64;
  std::uint64_t seed = 0;
  gen->add_option("--spec", spec_file, "Scene spec JSON")->required();
  gen->add_option("-n,--count", n, "Number of scenes");
  gen->add_option("--seed", seed, "Master seed");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one configuration and record it in the ledger");
  TrainOptions topt;
  std::string config, manifest, parent, change, run_id;
  train->add_option("--config", config, "Config JSON")->required();
  train->add_option("--data", manifest, "Dataset manifest")->required();
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--parent", parent, "Parent run id");
  train->add_flag("--baseline", topt.root_run, "Record as a baseline with no parent");
  train->add_option("--change", change, "Declared changed field path");
  train->add_option("--run-id", run_id, "Explicit run id");
  train->add_flag("--dump-affinity", topt.dump_affinity, "Write affinity grids for validation scenes");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string checkpoint, eval_config;
  double threshold = -1.0;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", manifest, "Dataset manifest")->required();
  eval->add_option("--config", eval_config, "Config whose eval section is used");
  eval->add_option("--threshold", threshold, "Overrides the decision threshold");
  eval->add_option("--out", out_dir, "Directory for eval.csv and eval.txt");

  auto* soup = app.add_subcommand("soup", "Combine late checkpoints");
  std::string rule = "equal";
  std::vector<std::string> inputs;
  std::vector<double> alphas;
  soup->add_option("--rule", rule, "equal, greedy or sweep");
  soup->add_option("--inputs", inputs, "Checkpoint files or run ids")->required();
  soup->add_option("--data", manifest, "Dataset manifest used for scoring")->required();
  soup->add_option("--out", out_dir, "Soup directory")->required();
  soup->add_option("--alphas", alphas, "Interpolation grid for sweep");
  soup->add_option("--run-id", run_id, "Explicit run id");

  auto* report = app.add_subcommand("report", "Summary tables, Pareto data and dynamics from the ledger");
  report->add_option("--out", out_dir, "Report directory")->required();

  auto* verify = app.add_subcommand("ledger-verify", "Re-check every ledger record");
  std::string ledger;
  verify->add_option("--ledger", ledger, "Ledger file (default: workspace ledger)");

  CLI11_PARSE(app, argc, argv);
  const Workspace ws{root};
  try {
    if (*gen) {
      const auto m = cmd_generate(ws, spec_file, n, seed, out_dir);
      std::printf("%s\n", m.string().c_str());
    } else if (*train) {
      topt.config = config;
      topt.manifest = manifest;
      topt.out_dir = out_dir;
      topt.parent = parent;
      if (!change.empty()) topt.declared_change = change;
      topt.run_id = run_id;
      print_metrics(cmd_train(ws, topt).record);
    } else if (*eval) {
      EvalOptions eopt;
      eopt.checkpoint = checkpoint;
      eopt.manifest = manifest;
      if (!eval_config.empty()) eopt.eval_config = eval_config;
      if (threshold >= 0.0) eopt.threshold = threshold;
      if (!out_dir.empty()) eopt.out_dir = out_dir;
      std::cout << report_table(cmd_eval(ws, eopt).report);
    } else if (*soup) {
      SoupOptions sopt;
      sopt.rule = parse_soup_rule(rule);
      sopt.inputs = inputs;
      sopt.manifest = manifest;
      sopt.out_dir = out_dir;
      sopt.alphas = alphas;
      sopt.run_id = run_id;
      print_metrics(cmd_soup(ws, sopt));
    } else if (*report) {
      cmd_report(ws, out_dir);
    } else if (*verify) {
      const auto rep = cmd_ledger_verify(ws, ledger.empty() ? std::nullopt : std::optional<std::filesystem::path>(ledger));
      for (const auto& p : rep.problems) std::fprintf(stderr, "%s\n", p.c_str());
      std::printf("%zu records, %s\n", rep.records, rep.ok ? "ok" : "rejected");
      return rep.ok ? kOk : kRejected;
    }
  } catch (const NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRejected;
  }
  return kOk;
}
