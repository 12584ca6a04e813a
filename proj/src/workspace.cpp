#include "gsacp/workspace.hpp"

#include "gsacp/checkpoint.hpp"
#include "gsacp/hash.hpp"
#include "gsacp/io.hpp"
#include "gsacp/report.hpp"
#include "gsacp/soup.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>

namespace gsacp {
namespace {

namespace fs = std::filesystem;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::map<std::string, double> final_metrics(const EpochStats& e) {
  return {{"miou", e.miou},
          {"niou", e.niou},
          {"pd", e.pd},
          {"fa", e.fa},
          {"area_ratio", e.area_ratio},
          {"margin", e.margin},
          {"support_radius", e.support_radius},
          {"val_prop", e.val_prop},
          {"gate_max_fraction", e.gate_max_fraction},
          {"epoch", static_cast<double>(e.epoch)}};
}

double val_miou(const Checkpoint& ck, const Dataset& data, const EvalConfig& eval) {
  const ToyDetector det = ck.detector();
  std::vector<std::size_t> idx = data.indices(Split::kVal);
  if (idx.empty()) idx = data.indices(Split::kTrain);
  std::vector<BinaryMask> preds, gts;
  for (std::size_t k : idx) {
    preds.push_back(threshold_mask(sigmoid(det.forward(data.scenes[k].image).logits), eval.threshold));
    gts.push_back(data.scenes[k].gt);
  }
  return miou(preds, gts);
}

EvalReport evaluate_checkpoint(const Checkpoint& ck, const Dataset& data, const EvalConfig& eval) {
  const ToyDetector det = ck.detector();
  std::vector<std::size_t> idx = data.indices(Split::kVal);
  if (idx.empty()) idx = data.indices(Split::kTrain);
  std::vector<ScalarField> probs;
  std::vector<BinaryMask> gts;
  for (std::size_t k : idx) {
    probs.push_back(sigmoid(det.forward(data.scenes[k].image).logits));
    gts.push_back(data.scenes[k].gt);
  }
  return evaluate(probs, gts, eval);
}

const RunRecord* find_run(const std::vector<RunRecord>& records, const std::string& id) {
  for (const auto& r : records) {
    if (r.run_id == id) return &r;
  }
  return nullptr;
}

}  // namespace

std::string Workspace::relative(const fs::path& p) const {
  return fs::relative(fs::absolute(resolve(p)), fs::absolute(root)).generic_string();
}

void write_affinity_dump(const fs::path& dir, const AffinityBundle& bundle) {
  io::write_csv_grid(dir / "s.csv", bundle.s);
  io::write_csv_grid(dir / "a.csv", bundle.a);
  io::write_csv_grid(dir / "w.csv", bundle.w);
  io::write_csv_grid(dir / "A.csv", bundle.A);
  io::write_csv_grid(dir / "winner.csv", bundle.winner.cast<double>());
}

fs::path cmd_generate(const Workspace& ws, const fs::path& spec_file, std::size_t n, std::uint64_t seed,
                      const fs::path& out_dir) {
  const SceneSpec spec = scene_spec_from_json(io::read_text(ws.resolve(spec_file)));
  const fs::path dir = ws.resolve(out_dir);
  generate_dataset(spec, n, seed, dir);
  return dir / "manifest.jsonl";
}

TrainOutcome cmd_train(const Workspace& ws, const TrainOptions& opt) {
  const Config cfg = config_from_json(io::read_text(ws.resolve(opt.config)));
  const auto records = read_ledger(ws.ledger());

  RunRecord rec;
  rec.kind = "train";
  rec.run_id = opt.run_id.empty() ? next_run_id(ws.ledger()) : opt.run_id;
  if (find_run(records, rec.run_id)) throw LedgerRejection("run id '" + rec.run_id + "' already recorded");
  if (opt.root_run) {
    if (!opt.parent.empty()) throw LedgerRejection("a root run cannot declare a parent");
  } else {
    if (opt.parent.empty()) throw LedgerRejection("a parent run is required unless the run is a root run");
    const RunRecord* parent = find_run(records, opt.parent);
    if (!parent) throw LedgerRejection("parent run '" + opt.parent + "' is not in the ledger");
    rec.change = one_change(config_from_json(parent->config), cfg, opt.declared_change);
    rec.parent = opt.parent;
  }
  rec.config = config_to_json(cfg);
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.train.seed;

  const Dataset data = load_dataset(ws.resolve(opt.manifest));
  TrainOutcome out;
  out.stats = run_experiment(cfg, data);

  const fs::path dir = ws.resolve(opt.out_dir);
  std::vector<fs::path> files;
  auto put = [&](const fs::path& p, const std::string& text) {
    io::write_text(p, text);
    files.push_back(p);
  };
  put(dir / "config.json", rec.config + "\n");
  put(dir / "epochs.csv", epochs_csv(out.stats));
  put(dir / "steps.csv", steps_csv(out.stats));
  put(dir / "gate.csv", gate_csv(out.stats));
  ToyDetector det = make_detector(cfg, static_cast<int>(data.scenes.front().image.channels.size()));
  for (const auto& snap : out.stats.checkpoints) {
    det.set_parameters(snap.parameters);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", snap.epoch);
    const fs::path p = dir / "checkpoints" / name;
    save_checkpoint(p, make_checkpoint(det, rec.run_id, snap.epoch, data.manifest_sha256));
    files.push_back(p);
  }
  det.set_parameters(out.stats.final_parameters);
  const fs::path final_path = dir / "final.ckpt";
  save_checkpoint(final_path, make_checkpoint(det, rec.run_id, cfg.train.epochs, data.manifest_sha256));
  files.push_back(final_path);
  const EvalReport rep = evaluate_checkpoint(make_checkpoint(det, rec.run_id, cfg.train.epochs, data.manifest_sha256), data, cfg.eval);
  put(dir / "eval.csv", report_csv(rep));

  if (opt.dump_affinity) {
    for (std::size_t k : data.indices(Split::kVal)) {
      const TargetBuild tb = build_target(det.forward(data.scenes[k].image), data.scenes[k], cfg);
      char name[32];
      std::snprintf(name, sizeof name, "scene_%04zu", k);
      write_affinity_dump(dir / "affinity" / name, tb.bundle);
    }
  }

  for (const auto& f : files) rec.artifacts[ws.relative(f)] = sha256_file(f);
  rec.metrics = final_metrics(out.stats.epochs.back());
  rec.provenance["dataset"] = data.manifest_sha256;
  rec.provenance["run_dir"] = ws.relative(dir);
  rec.timestamp = utc_timestamp();
  append_record(ws.ledger(), rec);
  out.record = rec;
  return out;
}

EvalOutcome cmd_eval(const Workspace& ws, const EvalOptions& opt) {
  const Checkpoint ck = load_checkpoint(ws.resolve(opt.checkpoint));
  const Dataset data = load_dataset(ws.resolve(opt.manifest));
  EvalConfig eval;
  if (opt.eval_config) eval = config_from_json(io::read_text(ws.resolve(*opt.eval_config))).eval;
  if (opt.threshold) eval.threshold = *opt.threshold;
  eval.validate();
  EvalOutcome out;
  out.dataset_mismatch = !ck.dataset_hash.empty() && ck.dataset_hash != data.manifest_sha256;
  if (out.dataset_mismatch) {
    std::cerr << "warning: checkpoint was trained on dataset " << ck.dataset_hash.substr(0, 12) << ", evaluating on "
              << data.manifest_sha256.substr(0, 12) << "\n";
  }
  out.report = evaluate_checkpoint(ck, data, eval);
  if (opt.out_dir) {
    const fs::path dir = ws.resolve(*opt.out_dir);
    io::write_text(dir / "eval.csv", report_csv(out.report));
    io::write_text(dir / "eval.txt", report_table(out.report));
  }
  return out;
}

SoupRule parse_soup_rule(const std::string& name) {
  if (name == "equal") return SoupRule::kEqual;
  if (name == "greedy") return SoupRule::kGreedyPair;
  if (name == "sweep") return SoupRule::kSweep;
  throw InvalidInput("unknown soup rule '" + name + "' (equal, greedy, sweep)");
}

const char* soup_rule_name(SoupRule rule) {
  switch (rule) {
    case SoupRule::kEqual:
      return "equal";
    case SoupRule::kGreedyPair:
      return "greedy";
    case SoupRule::kSweep:
      return "sweep";
  }
  return "?";
}

RunRecord cmd_soup(const Workspace& ws, const SoupOptions& opt) {
  const auto records = read_ledger(ws.ledger());
  std::vector<fs::path> paths;
  for (const auto& in : opt.inputs) {
    if (const RunRecord* r = find_run(records, in)) {
      const auto it = r->provenance.find("run_dir");
      if (it == r->provenance.end()) throw InvalidInput("run '" + in + "' has no run directory");
      std::vector<fs::path> found;
      const fs::path ckdir = ws.resolve(it->second) / "checkpoints";
      if (fs::exists(ckdir)) {
        for (const auto& e : fs::directory_iterator(ckdir)) {
          if (e.path().extension() == ".ckpt") found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.push_back(ws.resolve(in));
    }
  }
  if (paths.empty()) throw InvalidInput("soup: no input checkpoints");
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_checkpoint(p));
  require_compatible(cks);

  const Dataset data = load_dataset(ws.resolve(opt.manifest));
  const RunRecord* source = find_run(records, cks.front().run_id);
  const Config cfg = source ? config_from_json(source->config) : Config{};
  const SoupEval eval = [&](const Checkpoint& c) { return val_miou(c, data, cfg.eval); };

  SoupResult res;
  switch (opt.rule) {
    case SoupRule::kEqual:
      res.checkpoint = equal_average(cks);
      res.score = eval(res.checkpoint);
      for (std::size_t k = 0; k < cks.size(); ++k) res.chosen.push_back(k);
      break;
    case SoupRule::kGreedyPair:
      res = greedy_pair_average(cks, eval);
      break;
    case SoupRule::kSweep: {
      if (cks.size() != 2) throw InvalidInput("sweep soup takes exactly two checkpoints");
      res = sweep_interpolate(cks[0], cks[1], opt.alphas.empty() ? default_alpha_grid() : opt.alphas, eval);
      break;
    }
  }

  RunRecord rec;
  rec.kind = "soup";
  rec.run_id = opt.run_id.empty() ? next_run_id(ws.ledger(), "s") : opt.run_id;
  res.checkpoint.run_id = rec.run_id;
  rec.parent = source ? source->run_id : "";
  rec.config = config_to_json(cfg);
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.train.seed;

  const fs::path dir = ws.resolve(opt.out_dir);
  const fs::path ck_path = dir / "soup.ckpt";
  save_checkpoint(ck_path, res.checkpoint);
  const EvalReport rep = evaluate_checkpoint(res.checkpoint, data, cfg.eval);
  io::write_text(dir / "eval.csv", report_csv(rep));
  rec.artifacts[ws.relative(ck_path)] = sha256_file(ck_path);
  rec.artifacts[ws.relative(dir / "eval.csv")] = sha256_file(dir / "eval.csv");

  rec.metrics = {{"miou", rep.miou},
                 {"niou", rep.niou},
                 {"pd", rep.pd},
                 {"fa", rep.fa},
                 {"area_ratio", rep.area_ratio.value_or(std::nan(""))},
                 {"soup_score", res.score}};
  rec.provenance["rule"] = soup_rule_name(opt.rule);
  std::string inputs, chosen;
  for (std::size_t k = 0; k < cks.size(); ++k) {
    inputs += (k ? "," : "") + cks[k].content_hash();
  }
  for (std::size_t k : res.chosen) chosen += (chosen.empty() ? "" : ",") + std::to_string(cks[k].epoch);
  rec.provenance["inputs"] = inputs;
  rec.provenance["chosen_epochs"] = chosen;
  if (opt.rule == SoupRule::kSweep) rec.provenance["alpha"] = fmt("%.17g", res.alpha);
  rec.provenance["plateau_fraction"] = fmt("%.17g", cfg.train.plateau_fraction);
  rec.provenance["dataset"] = data.manifest_sha256;
  rec.provenance["run_dir"] = ws.relative(dir);
  rec.timestamp = utc_timestamp();
  append_record(ws.ledger(), rec);
  return rec;
}

void cmd_report(const Workspace& ws, const fs::path& out_dir) {
  const auto records = read_ledger(ws.ledger());
  const fs::path dir = ws.resolve(out_dir);
  io::write_text(dir / "main_table.txt", main_table(records));
  const std::string failures = failure_table(records);
  if (!failures.empty()) {
    io::write_text(dir / "failure_table.txt", failures);
  } else if (fs::exists(dir / "failure_table.txt")) {
    fs::remove(dir / "failure_table.txt");
  }
  const auto points = pareto_points(records);
  io::write_text(dir / "pareto.csv", pareto_csv(points));
  io::write_text(dir / "pareto.svg", pareto_svg(points));
  for (const auto& r : records) {
    for (const auto& [rel, hash] : r.artifacts) {
      if (fs::path(rel).filename() != "epochs.csv") continue;
      const fs::path src = ws.resolve(rel);
      if (fs::exists(src)) io::write_text(dir / "dynamics" / (r.run_id + ".csv"), io::read_text(src));
    }
  }
}

VerifyReport cmd_ledger_verify(const Workspace& ws, const std::optional<fs::path>& ledger) {
  return verify_ledger(ledger ? ws.resolve(*ledger) : ws.ledger(), ws.root);
}

}  // namespace gsacp
