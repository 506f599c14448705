#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "leffa/attention_flow.hpp"
#include "leffa/model.hpp"
#include "leffa/trainer.hpp"

// JSON run configuration. Unknown keys are rejected; every default is
// materialized so the persisted copy reproduces the run byte-for-byte.

namespace leffa {

struct EvalConfig {
  int probe_t = 100;
  int probe_count = 32;
  int log_every = 100;
};

struct RunConfig {
  DataSpec data;
  int64_t data_height = 32, data_width = 32;
  ModelConfig model;
  LeffaConfig leffa;
  StagePlan stages;
  EvalConfig eval;
  std::string output_dir = "out";
};

namespace cfgdetail {

using nlohmann::json;

struct Errors {
  std::vector<std::string> list;
  void add(const std::string& e) { list.push_back(e); }
};

inline void check_keys(const json& j, const std::string& where,
                       const std::vector<std::string>& allowed, Errors& errs) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      errs.add(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out, Errors& errs, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const std::exception&) {
    errs.add(where + ": bad value for '" + std::string(key) + "'");
  }
}

}  // namespace cfgdetail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using cfgdetail::check_keys;
  using cfgdetail::get;
  cfgdetail::Errors errs;
  RunConfig c;

  check_keys(j, "config", {"data", "model", "leffa", "stages", "eval", "output_dir"}, errs);
  get(j, "output_dir", c.output_dir, errs, "config");

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"task_kind", "height", "width", "count", "seed", "grid_n", "period"},
               errs);
    get(d, "task_kind", c.data.task_kind, errs, "data");
    get(d, "height", c.data_height, errs, "data");
    get(d, "width", c.data_width, errs, "data");
    get(d, "count", c.data.count, errs, "data");
    get(d, "seed", c.data.seed, errs, "data");
    get(d, "grid_n", c.data.grid_n, errs, "data");
    get(d, "period", c.data.period, errs, "data");
  }
  if (c.data.task_kind != "patch_permutation" && c.data.task_kind != "stripes" &&
      c.data.task_kind != "shift" && c.data.task_kind != "tryon_fill")
    errs.add("data.task_kind: unknown value '" + c.data.task_kind + "'");
  if (c.data.count < 1) errs.add("data.count must be >= 1");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model", {"width", "heads", "registers", "freeze_reference"}, errs);
    get(m, "width", c.model.width, errs, "model");
    get(m, "heads", c.model.heads, errs, "model");
    get(m, "registers", c.model.registers, errs, "model");
    get(m, "freeze_reference", c.model.freeze_reference, errs, "model");
  }
  try {
    c.model.aux_channels = aux_channels_for(c.data.task_kind);
  } catch (const std::exception&) {
    // task_kind error already reported
  }
  try {
    c.model.validate();
  } catch (const std::exception& e) {
    errs.add(std::string("model: ") + e.what());
  }

  if (j.contains("leffa")) {
    const auto& l = j.at("leffa");
    check_keys(l, "leffa",
               {"lambda_leffa", "tau", "theta_resolution", "theta_timestep", "average_heads",
                "upsample_flow", "mask_mode", "loss_reduction"},
               errs);
    get(l, "lambda_leffa", c.leffa.lambda_leffa, errs, "leffa");
    get(l, "tau", c.leffa.tau, errs, "leffa");
    get(l, "theta_resolution", c.leffa.theta_resolution, errs, "leffa");
    get(l, "theta_timestep", c.leffa.theta_timestep, errs, "leffa");
    get(l, "average_heads", c.leffa.average_heads, errs, "leffa");
    get(l, "upsample_flow", c.leffa.upsample_flow, errs, "leffa");
    std::string mm = c.leffa.mask_mode == MaskMode::garment_mask ? "garment_mask" : "all_ones";
    std::string lr = c.leffa.loss_reduction == LossReduction::mean ? "mean" : "sum";
    get(l, "mask_mode", mm, errs, "leffa");
    get(l, "loss_reduction", lr, errs, "leffa");
    if (mm == "garment_mask") c.leffa.mask_mode = MaskMode::garment_mask;
    else if (mm == "all_ones") c.leffa.mask_mode = MaskMode::all_ones;
    else errs.add("leffa.mask_mode: unknown value '" + mm + "'");
    if (lr == "mean") c.leffa.loss_reduction = LossReduction::mean;
    else if (lr == "sum") c.leffa.loss_reduction = LossReduction::sum;
    else errs.add("leffa.loss_reduction: unknown value '" + lr + "'");
  }
  c.leffa.register_count = c.model.registers;
  try {
    c.leffa.validate();
  } catch (const std::exception& e) {
    errs.add(std::string("leffa: ") + e.what());
  }

  if (j.contains("stages")) {
    if (!j.at("stages").is_array()) {
      errs.add("stages must be an array");
    } else {
      for (size_t i = 0; i < j.at("stages").size(); ++i) {
        const auto& sj = j.at("stages")[i];
        const std::string where = "stages[" + std::to_string(i) + "]";
        check_keys(sj, where,
                   {"height", "width", "steps", "batch_size", "leffa_enabled", "learning_rate"},
                   errs);
        Stage s;
        get(sj, "height", s.height, errs, where);
        get(sj, "width", s.width, errs, where);
        get(sj, "steps", s.steps, errs, where);
        get(sj, "batch_size", s.batch_size, errs, where);
        get(sj, "leffa_enabled", s.leffa_enabled, errs, where);
        get(sj, "learning_rate", s.learning_rate, errs, where);
        c.stages.stages.push_back(s);
      }
    }
  }
  if (c.stages.stages.empty() && errs.list.empty() == false) {
    // fall through; stage errors already recorded
  }
  try {
    c.stages.validate();
  } catch (const std::exception& e) {
    errs.add(std::string("stages: ") + e.what());
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, "eval", {"probe_t", "probe_count", "log_every"}, errs);
    get(e, "probe_t", c.eval.probe_t, errs, "eval");
    get(e, "probe_count", c.eval.probe_count, errs, "eval");
    get(e, "log_every", c.eval.log_every, errs, "eval");
  }
  if (c.eval.probe_t < 0 || c.eval.probe_count < 1) errs.add("eval: invalid probe settings");

  if (!errs.list.empty()) {
    std::string all = "configuration errors:";
    for (const auto& e : errs.list) all += "\n  - " + e;
    throw param_error(all);
  }
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["data"] = {{"task_kind", c.data.task_kind}, {"height", c.data_height},
               {"width", c.data_width},         {"count", c.data.count},
               {"seed", c.data.seed},           {"grid_n", c.data.grid_n},
               {"period", c.data.period}};
  j["model"] = {{"width", c.model.width},
                {"heads", c.model.heads},
                {"registers", c.model.registers},
                {"freeze_reference", c.model.freeze_reference}};
  j["leffa"] = {{"lambda_leffa", c.leffa.lambda_leffa},
                {"tau", c.leffa.tau},
                {"theta_resolution", c.leffa.theta_resolution},
                {"theta_timestep", c.leffa.theta_timestep},
                {"average_heads", c.leffa.average_heads},
                {"upsample_flow", c.leffa.upsample_flow},
                {"mask_mode", c.leffa.mask_mode == MaskMode::garment_mask ? "garment_mask" : "all_ones"},
                {"loss_reduction", c.leffa.loss_reduction == LossReduction::mean ? "mean" : "sum"}};
  j["stages"] = nlohmann::json::array();
  for (const Stage& s : c.stages.stages)
    j["stages"].push_back({{"height", s.height},
                           {"width", s.width},
                           {"steps", s.steps},
                           {"batch_size", s.batch_size},
                           {"leffa_enabled", s.leffa_enabled},
                           {"learning_rate", s.learning_rate}});
  j["eval"] = {{"probe_t", c.eval.probe_t},
               {"probe_count", c.eval.probe_count},
               {"log_every", c.eval.log_every}};
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace leffa
