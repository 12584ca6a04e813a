#pragma once

#include "gsacp/affinity.hpp"
#include "gsacp/ledger.hpp"
#include "gsacp/metrics.hpp"
#include "gsacp/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gsacp {

/// All command paths are resolved against the root; the ledger lives at root/ledger.jsonl.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path ledger() const { return root / "ledger.jsonl"; }
  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }
  std::string relative(const std::filesystem::path& p) const;
};

/// Writes s, a, w, A and the winner index as CSV grids into dir.
void write_affinity_dump(const std::filesystem::path& dir, const AffinityBundle& bundle);

std::filesystem::path cmd_generate(const Workspace& ws, const std::filesystem::path& spec_file, std::size_t n,
                                   std::uint64_t seed, const std::filesystem::path& out_dir);

struct TrainOptions {
  std::filesystem::path config;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::string parent;
  bool root_run = false;
  std::optional<std::string> declared_change;
  std::string run_id;  // empty picks the next free id
  bool dump_affinity = false;
};

struct TrainOutcome {
  RunRecord record;
  TrainStats stats;
};

/// Checks the ledger, trains, writes traces and checkpoints, then appends the record.
TrainOutcome cmd_train(const Workspace& ws, const TrainOptions& opt);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> eval_config;  // any config file; only its eval section is used
  std::optional<double> threshold;
  std::optional<std::filesystem::path> out_dir;
};

struct EvalOutcome {
  EvalReport report;
  bool dataset_mismatch = false;
};

EvalOutcome cmd_eval(const Workspace& ws, const EvalOptions& opt);

enum class SoupRule { kEqual, kGreedyPair, kSweep };
SoupRule parse_soup_rule(const std::string& name);
const char* soup_rule_name(SoupRule rule);

struct SoupOptions {
  SoupRule rule = SoupRule::kEqual;
  std::vector<std::string> inputs;  // checkpoint paths, or run ids meaning that run's plateau checkpoints
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::vector<double> alphas;  // empty uses the default grid
  std::string run_id;
};

RunRecord cmd_soup(const Workspace& ws, const SoupOptions& opt);

/// Writes main and failure tables, Pareto data and plot, and per-run dynamics CSVs.
void cmd_report(const Workspace& ws, const std::filesystem::path& out_dir);

VerifyReport cmd_ledger_verify(const Workspace& ws, const std::optional<std::filesystem::path>& ledger = {});

}  // namespace gsacp
