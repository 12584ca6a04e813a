#include "gsacp/config.hpp"

#include "gsacp/hash.hpp"
#include "json_util.hpp"

namespace gsacp {
namespace {

using nlohmann::json;

const char* prior_mode_name(PriorMode m) { return m == PriorMode::kWinnerSeed ? "winner" : "max_product"; }
const char* fa_mode_name(FaMode m) { return m == FaMode::kUnmatchedComponents ? "unmatched" : "all_pixels"; }

json to_json_doc(const Config& c) {
  json j;
  j["affinity"] = {{"m_hard", c.affinity.m_hard},
                   {"sigma_s", c.affinity.sigma_s},
                   {"sigma_c", c.affinity.sigma_c},
                   {"prior_mode", prior_mode_name(c.affinity.prior_mode)}};
  j["loss"] = {{"w_seed", c.loss.w_seed},   {"lambda_prop", c.loss.lambda_prop},
               {"w_bg", c.loss.w_bg},       {"w_sparse", c.loss.w_sparse},
               {"w_cons", c.loss.w_cons},   {"w_ctr", c.loss.w_ctr},
               {"w_pos", c.loss.w_pos},     {"m_neg", c.m_neg},
               {"positive_threshold", c.positive_threshold}};
  j["ohem"] = {{"k_frac", c.ohem.k_frac}, {"exclusion_radius", c.ohem.exclusion_radius}};
  j["decay"] = {{"start", c.decay_start}, {"floor", c.decay_floor}};
  j["teacher"] = {{"decay", c.train.ema_decay},
                  {"alpha_max", c.mix.alpha_max},
                  {"ramp_start", c.mix.ramp_start},
                  {"ramp_end", c.mix.ramp_end},
                  {"disk_radius", c.mix.disk_radius}};
  j["gate"] = {{"radii", c.gate.radii},
               {"tau", c.gate.tau},
               {"leak_threshold", c.gate.leak_threshold},
               {"sigma_s", c.gate_sigma_s}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"grad_clip", c.train.grad_clip},
                {"seed", c.train.seed},
                {"plateau_fraction", c.train.plateau_fraction},
                {"widths", c.train.widths},
                {"head_bias_init", c.train.head_bias_init}};
  j["axes"] = {{"decay", c.axes.decay}, {"ltd", c.axes.ltd}, {"hbc", c.axes.hbc}, {"asg", c.axes.asg}};
  j["failure"] = {{"full_detach", c.failure.full_detach},
                  {"global_teacher", c.failure.global_teacher},
                  {"positive_prototype", c.failure.positive_prototype},
                  {"free_radius", c.failure.free_radius},
                  {"shallow_fusion", c.failure.shallow_fusion}};
  j["eval"] = {{"threshold", c.eval.threshold},
               {"match_distance", c.eval.match_distance},
               {"connectivity", c.eval.connectivity},
               {"fa_mode", fa_mode_name(c.eval.fa_mode)},
               {"bin_edges", c.eval.bin_edges}};
  j["diagnostics"] = {{"margin_samples", c.diagnostics.margin_samples},
                      {"hard_radius", c.diagnostics.hard_radius},
                      {"support_level", c.diagnostics.support_level}};
  return j;
}

void flatten_into(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten_into(*it, prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    return;
  }
  out[prefix] = j.dump();
}

}  // namespace

void Config::validate() const {
  affinity.validate();
  loss.validate();
  if (!(m_neg >= 0.0 && m_neg < 1.0)) throw InvalidParameter("loss.m_neg must lie in [0,1)");
  ohem.validate();
  mix.validate();
  gate.validate();
  if (!(gate_sigma_s > 0.0)) throw InvalidParameter("gate.sigma_s must be positive");
  if (train.epochs < 0) throw InvalidParameter("train.epochs must be >= 0");
  if (train.batch_size < 1) throw InvalidParameter("train.batch_size must be >= 1");
  if (!(train.lr >= 0.0)) throw InvalidParameter("train.lr must be >= 0");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) throw InvalidParameter("train.momentum must lie in [0,1)");
  if (!(train.grad_clip >= 0.0)) throw InvalidParameter("train.grad_clip must be >= 0");
  if (!(train.plateau_fraction > 0.0 && train.plateau_fraction <= 1.0)) {
    throw InvalidParameter("train.plateau_fraction must lie in (0,1]");
  }
  if (!(train.ema_decay >= 0.0 && train.ema_decay < 1.0)) throw InvalidParameter("teacher.decay must lie in [0,1)");
  if (train.widths.size() < 2) throw InvalidParameter("train.widths needs at least two layers");
  for (int w : train.widths) {
    if (w < 1) throw InvalidParameter("train.widths entries must be >= 1");
  }
  if (!(decay_start >= 0.0)) throw InvalidParameter("decay.start must be >= 0");
  if (!(decay_floor >= 0.0 && decay_floor <= loss.lambda_prop)) throw InvalidParameter("decay.floor must lie in [0, lambda_prop]");
  eval.validate();
  if (diagnostics.margin_samples < 1) throw InvalidParameter("diagnostics.margin_samples must be >= 1");
  if (diagnostics.hard_radius < 1) throw InvalidParameter("diagnostics.hard_radius must be >= 1");
}

PropDecaySchedule Config::decay_schedule() const {
  PropDecaySchedule s;
  s.lambda0 = loss.lambda_prop;
  s.total_epochs = train.epochs;
  s.decay_start = std::min(decay_start, static_cast<double>(train.epochs));
  s.floor = decay_floor;
  return s;
}

LossWeights Config::weights_at(double epoch) const {
  LossWeights w = loss;
  if (decay_active()) w.lambda_prop = lambda_prop_at(decay_schedule(), epoch);
  if (!axes.hbc) w.w_ctr = 0.0;
  if (!failure.positive_prototype) w.w_pos = 0.0;
  return w;
}

std::string config_to_json(const Config& cfg) { return to_json_doc(cfg).dump(2); }

Config config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  Config c;
  detail::ObjectReader root(j, "");
  auto section = [&](const char* name, auto&& body) {
    if (const json* s = root.child(name)) {
      detail::ObjectReader rd(*s, name);
      body(rd);
      rd.finish();
    }
  };
  section("affinity", [&](detail::ObjectReader& rd) {
    rd.read("m_hard", c.affinity.m_hard);
    rd.read("sigma_s", c.affinity.sigma_s);
    rd.read("sigma_c", c.affinity.sigma_c);
    std::string mode = prior_mode_name(c.affinity.prior_mode);
    rd.read("prior_mode", mode);
    if (mode == "winner") {
      c.affinity.prior_mode = PriorMode::kWinnerSeed;
    } else if (mode == "max_product") {
      c.affinity.prior_mode = PriorMode::kMaxProduct;
    } else {
      throw InvalidInput("field 'affinity.prior_mode' must be 'winner' or 'max_product'");
    }
  });
  section("loss", [&](detail::ObjectReader& rd) {
    rd.read("w_seed", c.loss.w_seed);
    rd.read("lambda_prop", c.loss.lambda_prop);
    rd.read("w_bg", c.loss.w_bg);
    rd.read("w_sparse", c.loss.w_sparse);
    rd.read("w_cons", c.loss.w_cons);
    rd.read("w_ctr", c.loss.w_ctr);
    rd.read("w_pos", c.loss.w_pos);
    rd.read("m_neg", c.m_neg);
    rd.read("positive_threshold", c.positive_threshold);
  });
  section("ohem", [&](detail::ObjectReader& rd) {
    rd.read("k_frac", c.ohem.k_frac);
    rd.read("exclusion_radius", c.ohem.exclusion_radius);
  });
  section("decay", [&](detail::ObjectReader& rd) {
    rd.read("start", c.decay_start);
    rd.read("floor", c.decay_floor);
  });
  section("teacher", [&](detail::ObjectReader& rd) {
    rd.read("decay", c.train.ema_decay);
    rd.read("alpha_max", c.mix.alpha_max);
    rd.read("ramp_start", c.mix.ramp_start);
    rd.read("ramp_end", c.mix.ramp_end);
    rd.read("disk_radius", c.mix.disk_radius);
  });
  section("gate", [&](detail::ObjectReader& rd) {
    rd.read("radii", c.gate.radii);
    rd.read("tau", c.gate.tau);
    rd.read("leak_threshold", c.gate.leak_threshold);
    rd.read("sigma_s", c.gate_sigma_s);
  });
  section("train", [&](detail::ObjectReader& rd) {
    rd.read("epochs", c.train.epochs);
    rd.read("batch_size", c.train.batch_size);
    rd.read("lr", c.train.lr);
    rd.read("momentum", c.train.momentum);
    rd.read("grad_clip", c.train.grad_clip);
    rd.read("seed", c.train.seed);
    rd.read("plateau_fraction", c.train.plateau_fraction);
    rd.read("widths", c.train.widths);
    rd.read("head_bias_init", c.train.head_bias_init);
  });
  section("axes", [&](detail::ObjectReader& rd) {
    rd.read("decay", c.axes.decay);
    rd.read("ltd", c.axes.ltd);
    rd.read("hbc", c.axes.hbc);
    rd.read("asg", c.axes.asg);
  });
  section("failure", [&](detail::ObjectReader& rd) {
    rd.read("full_detach", c.failure.full_detach);
    rd.read("global_teacher", c.failure.global_teacher);
    rd.read("positive_prototype", c.failure.positive_prototype);
    rd.read("free_radius", c.failure.free_radius);
    rd.read("shallow_fusion", c.failure.shallow_fusion);
  });
  section("eval", [&](detail::ObjectReader& rd) {
    rd.read("threshold", c.eval.threshold);
    rd.read("match_distance", c.eval.match_distance);
    rd.read("connectivity", c.eval.connectivity);
    std::string mode = fa_mode_name(c.eval.fa_mode);
    rd.read("fa_mode", mode);
    if (mode == "unmatched") {
      c.eval.fa_mode = FaMode::kUnmatchedComponents;
    } else if (mode == "all_pixels") {
      c.eval.fa_mode = FaMode::kAllFalsePixels;
    } else {
      throw InvalidInput("field 'eval.fa_mode' must be 'unmatched' or 'all_pixels'");
    }
    rd.read("bin_edges", c.eval.bin_edges);
  });
  section("diagnostics", [&](detail::ObjectReader& rd) {
    rd.read("margin_samples", c.diagnostics.margin_samples);
    rd.read("hard_radius", c.diagnostics.hard_radius);
    rd.read("support_level", c.diagnostics.support_level);
  });
  root.finish();
  c.validate();
  return c;
}

std::map<std::string, std::string> flatten_config(const Config& cfg) {
  std::map<std::string, std::string> out;
  flatten_into(to_json_doc(cfg), "", out);
  return out;
}

std::vector<ConfigChange> diff_configs(const Config& parent, const Config& child) {
  const auto a = flatten_config(parent);
  const auto b = flatten_config(child);
  std::vector<ConfigChange> out;
  for (const auto& [path, value] : b) {
    const auto it = a.find(path);
    if (it == a.end()) {
      out.push_back({path, "", value});
    } else if (it->second != value) {
      out.push_back({path, it->second, value});
    }
  }
  return out;
}

std::string config_hash(const Config& cfg) { return sha256_hex(to_json_doc(cfg).dump()); }

}  // namespace gsacp
