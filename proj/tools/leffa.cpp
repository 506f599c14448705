#include <CLI11.hpp>
#include <json.hpp>

#include <leffa/config.hpp>
#include <leffa/dataset.hpp>
#include <leffa/gradcheck.hpp>
#include <leffa/trainer.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

// Command-line front end: dataset generation, training, evaluation, gradient
// checking, and visualization artifacts. Exit codes: 0 success, 2 usage or
// configuration error, 3 numerical failure (NaN halt / failed grad check).

using namespace leffa;
using nlohmann::json;

namespace {

int g_threads = 1;  // LEFFA_THREADS cap; the engine itself is single-threaded

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config file '" + path + "'");
  try {
    return json::parse(f);
  } catch (const std::exception& e) {
    throw param_error("invalid JSON in '" + path + "': " + e.what());
  }
}

RunConfig load_run_config(const std::string& path, bool require_stages) {
  json j = read_json_file(path);
  // data-only configs (gen-data) don't need a stage plan; give them a
  // placeholder stage so the rest of the validation still runs
  if (!require_stages && !j.contains("stages"))
    j["stages"] = json::array({{{"height", 32}, {"width", 32}, {"steps", 0}}});
  return parse_run_config(j);
}

// ---- checkpoint (de)serialization ------------------------------------------

Tensor<float> encode_model_meta(const ModelConfig& m) {
  return Tensor<float>({5}, {float(m.aux_channels), float(m.width), float(m.heads),
                             float(m.registers), m.freeze_reference ? 1.f : 0.f});
}

Tensor<float> encode_leffa_meta(const LeffaConfig& l) {
  return Tensor<float>(
      {9}, {float(l.lambda_leffa), float(l.tau), float(l.theta_resolution),
            float(l.theta_timestep), float(l.register_count), l.average_heads ? 1.f : 0.f,
            l.upsample_flow ? 1.f : 0.f, l.mask_mode == MaskMode::garment_mask ? 1.f : 0.f,
            l.loss_reduction == LossReduction::sum ? 1.f : 0.f});
}

void save_model_checkpoint(const std::string& path, const DualBranchModel<float>& model,
                           const LeffaConfig& leffa, int total_steps) {
  std::map<std::string, Tensor<float>> out;
  out["meta.model"] = encode_model_meta(model.config());
  out["meta.leffa"] = encode_leffa_meta(leffa);
  out["meta.schedule"] = Tensor<float>::scalar(float(total_steps));
  for (const auto& [name, p] : model.params()) out["param." + name] = p;
  save_checkpoint(path, out);
}

struct LoadedModel {
  ModelConfig model_cfg;
  LeffaConfig leffa;
  int total_steps = 1000;
  std::unique_ptr<DualBranchModel<float>> model;
};

LoadedModel load_model_checkpoint(const std::string& path) {
  const auto ck = load_checkpoint(path);
  const auto need = [&](const std::string& name) -> const Tensor<float>& {
    auto it = ck.find(name);
    if (it == ck.end()) throw param_error("checkpoint is missing tensor '" + name + "'");
    return it->second;
  };
  LoadedModel lm;
  const Tensor<float>& mm = need("meta.model");
  if (mm.numel() != 5) throw param_error("checkpoint meta.model has the wrong size");
  lm.model_cfg.aux_channels = int64_t(mm[0]);
  lm.model_cfg.width = int64_t(mm[1]);
  lm.model_cfg.heads = int64_t(mm[2]);
  lm.model_cfg.registers = int(mm[3]);
  lm.model_cfg.freeze_reference = mm[4] != 0.f;
  const Tensor<float>& ml = need("meta.leffa");
  if (ml.numel() != 9) throw param_error("checkpoint meta.leffa has the wrong size");
  lm.leffa.lambda_leffa = ml[0];
  lm.leffa.tau = ml[1];
  lm.leffa.theta_resolution = ml[2];
  lm.leffa.theta_timestep = int(ml[3]);
  lm.leffa.register_count = int(ml[4]);
  lm.leffa.average_heads = ml[5] != 0.f;
  lm.leffa.upsample_flow = ml[6] != 0.f;
  lm.leffa.mask_mode = ml[7] != 0.f ? MaskMode::garment_mask : MaskMode::all_ones;
  lm.leffa.loss_reduction = ml[8] != 0.f ? LossReduction::sum : LossReduction::mean;
  lm.total_steps = int(need("meta.schedule")[0]);
  lm.model_cfg.validate();
  lm.leffa.validate();

  lm.model = std::make_unique<DualBranchModel<float>>(lm.model_cfg, 0);
  size_t used = 0;
  for (auto& [name, p] : lm.model->params()) {
    auto it = ck.find("param." + name);
    if (it == ck.end()) throw param_error("checkpoint is missing parameter '" + name + "'");
    if (!it->second.same_shape(p))
      throw param_error("checkpoint/model shape mismatch for '" + name + "': " +
                        shape_str(it->second.shape()) + " vs " + shape_str(p.shape()));
    p = it->second;
    ++used;
  }
  for (const auto& [name, t] : ck)
    if (name.rfind("param.", 0) == 0) --used;
  if (used != 0) throw param_error("checkpoint has parameters unknown to this model config");
  return lm;
}

DataSpec data_spec_from_dir(const std::string& dir, const DataSpec& base) {
  const auto samples = load_dataset(dir);
  if (samples.empty()) throw param_error("dataset directory '" + dir + "' is empty");
  DataSpec spec = base;
  spec.task_kind = samples.front().task_kind;
  spec.seed = samples.front().seed;
  spec.count = int(samples.size());
  return spec;
}

// ---- commands --------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const RunConfig c = load_run_config(config_path, /*require_stages=*/false);
  const auto samples = render_dataset(c.data, c.data_height, c.data_width);
  save_dataset(samples, out_dir);
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, uint64_t seed) {
  RunConfig c = load_run_config(config_path, /*require_stages=*/true);
  if (!out_dir.empty()) c.output_dir = out_dir;
  if (!data_dir.empty()) c.data = data_spec_from_dir(data_dir, c.data);
  c.model.aux_channels = aux_channels_for(c.data.task_kind);

  std::filesystem::create_directories(c.output_dir);
  {
    std::ofstream f(c.output_dir + "/config.json");
    if (!f) throw io_error("cannot write " + c.output_dir + "/config.json");
    f << run_config_to_json(c).dump(2) << "\n";
  }

  DualBranchModel<float> model(c.model, seed);
  DiffusionSchedule<float> sched;
  Trainer<float> trainer(model, c.leffa, sched);
  const TrainResult res = trainer.train(c.stages, c.data, seed, c.eval.log_every,
                                        c.eval.probe_count, c.eval.probe_t);
  {
    std::ofstream f(c.output_dir + "/metrics.csv");
    if (!f) throw io_error("cannot write " + c.output_dir + "/metrics.csv");
    f << metrics_csv(res.log);
  }
  save_model_checkpoint(c.output_dir + "/checkpoint.lft", model, c.leffa, sched.total_steps);
  if (res.halted_on_nan) {
    std::cerr << "training halted on non-finite loss after " << res.steps_run
              << " steps; last good checkpoint written\n";
    return 3;
  }
  std::cout << "trained " << res.steps_run << " steps; artifacts in " << c.output_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, int probe_t,
             uint64_t seed) {
  LoadedModel lm = load_model_checkpoint(checkpoint);
  const auto samples = load_dataset(data_dir);
  if (samples.empty()) throw param_error("dataset directory '" + data_dir + "' is empty");
  Trainer<float> trainer(*lm.model, lm.leffa, DiffusionSchedule<float>(lm.total_steps));
  const EvalReport r = trainer.evaluate(samples, probe_t, seed);
  json out;
  out["mean_epe"] = r.mean_epe;
  out["warp_psnr"] = r.warp_psnr;
  out["leffa_value"] = r.leffa_value;
  out["per_layer_epe"] = r.per_layer_epe;
  out["per_layer_psnr"] = r.per_layer_psnr;
  out["uniform_attention_epe"] = uniform_attention_epe(samples);
  out["samples"] = samples.size();
  out["probe_t"] = probe_t;
  std::cout << out.dump(2) << "\n";
  return 0;
}

// one gradient-check row: rebuildable scalar function of a single leaf
double check_op(const Tensor<double>& x,
                const std::function<int(Tape<double>&, int)>& build) {
  Tape<double> tape;
  const int xid = tape.leaf(x);
  tape.backward(build(tape, xid));
  const Tensor<double> g = tape.grad(xid);
  const std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& v) {
    Tape<double> t;
    return t.value(build(t, t.leaf(v, false))).item();
  };
  return finite_difference_check<double>(f, x, g);
}

int cmd_gradcheck(uint64_t seed) {
  Rng rng(seed);
  const auto randt = [&](std::vector<int64_t> shape, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * (rng.uniform() * 2.0 - 1.0);
    return t;
  };
  // keep relu inputs away from the kink and grid_sample flows away from the
  // pixel-snapping window
  const auto rand_off = [&](std::vector<int64_t> shape) {
    Tensor<double> t = randt(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] += t[i] >= 0 ? 0.2 : -0.2;
    return t;
  };
  const auto rand_flow = [&](int64_t h, int64_t w) {
    Tensor<double> t({h, w, 2});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.73 * (rng.uniform() * 2.0 - 1.0) + 0.013;
    return t;
  };

  struct Row {
    std::string name;
    double err;
  };
  std::vector<Row> rows;
  const auto run = [&](const std::string& name, const Tensor<double>& x,
                       const std::function<int(Tape<double>&, int)>& build) {
    rows.push_back({name, check_op(x, build)});
  };

  // all constants are drawn up front: the build lambdas are re-evaluated for
  // every finite-difference probe and must be pure functions of the leaf
  const Tensor<double> b34 = randt({3, 4}), b43 = randt({4, 3}), w26 = randt({2, 6}),
                       w34 = randt({3, 4}), w32 = randt({3, 2}), w4 = randt({4}),
                       w46 = randt({4, 6}), base235 = randt({2, 3, 5}), w255 = randt({2, 5, 5}),
                       w33 = randt({3, 3}), base322 = randt({3, 2, 2}), w322 = randt({3, 2, 2}),
                       w342 = randt({3, 4, 2}), w35 = randt({3, 5}), kimg = randt({2, 3, 3, 3}, 0.5),
                       kb = randt({2}), ximg = randt({3, 6, 6}), w266 = randt({2, 6, 6}),
                       w257 = randt({2, 5, 7}), w234 = randt({2, 3, 4}),
                       flow44 = rand_flow(4, 4), img355 = randt({3, 5, 5}),
                       w344 = randt({3, 4, 4});
  Tensor<double> mask34({3, 4});
  for (int64_t i = 0; i < 12; ++i) mask34[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;

  run("add", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.add(x, t.constant(b34)), t.constant(b34)));
  });
  run("sub", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.sub(t.constant(b34), x), t.constant(b34)));
  });
  run("mul", randt({3, 4}),
      [&](Tape<double>& t, int x) { return t.sum_all(t.mul(x, t.mul(x, t.constant(b34)))); });
  run("scale", randt({3, 4}),
      [&](Tape<double>& t, int x) { return t.mean_all(t.scale(x, -1.75)); });
  run("relu", rand_off({3, 4}),
      [&](Tape<double>& t, int x) { return t.sum_all(t.mul(t.relu(x), t.constant(b34))); });
  run("add_row_bias", randt({4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.add_row_bias(t.constant(b34), x), t.constant(b34)));
  });
  run("add_channel_bias", randt({3}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.add_channel_bias(t.constant(base322), x), t.constant(w322)));
  });
  run("mul_mask", randt({2, 3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.mul_mask(x, t.constant(mask34)), t.constant(w234)));
  });
  run("mean_all", randt({3, 4}), [&](Tape<double>& t, int x) { return t.mean_all(t.mul(x, x)); });
  run("reshape", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.reshape(x, {2, 6}), t.constant(w26)));
  });
  run("concat0+slice0", randt({3, 4}), [&](Tape<double>& t, int x) {
    const int c = t.concat0(x, t.constant(b34));
    return t.sum_all(t.mul(t.slice0(c, 1, 3), t.constant(w34)));
  });
  run("slice_last", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.slice_last(x, 1, 2), t.constant(w32)));
  });
  run("mean_axis0", randt({2, 3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.mean_axis0(x), t.constant(w34)));
  });
  run("split+merge_heads", randt({4, 6}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.merge_heads(t.split_heads(x, 2)), t.constant(w46)));
  });
  run("append_tokens_bcast", randt({2, 5}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.append_tokens_bcast(t.constant(base235), x), t.constant(w255)));
  });
  run("normalize_rows", rand_off({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.normalize_rows(t.mul(x, x), 1e-8), t.constant(b34)));
  });
  run("transpose_last2", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.transpose_last2(x), t.constant(b43)));
  });
  run("hwc<->chw", randt({3, 4, 2}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.chw_to_hwc(t.hwc_to_chw(x)), t.constant(w342)));
  });
  run("matmul(a)", randt({3, 4}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.matmul(x, t.constant(b43)), t.constant(w33)));
  });
  run("matmul(b)", randt({4, 3}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.matmul(t.constant(b34), x), t.constant(w33)));
  });
  run("softmax_lastdim", randt({3, 5}, 2.0), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.softmax_lastdim(x, 2.0), t.constant(w35)));
  });
  run("conv2d(x)", ximg, [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.conv2d(x, t.constant(kimg), t.constant(kb)), t.constant(w266)));
  });
  run("conv2d(k)", kimg, [&](Tape<double>& t, int k) {
    return t.sum_all(t.mul(t.conv2d(t.constant(ximg), k, t.constant(kb)), t.constant(w266)));
  });
  run("bilinear_resize", randt({2, 3, 3}), [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.bilinear_resize(x, 5, 7), t.constant(w257)));
  });
  run("grid_sample(img)", img355, [&](Tape<double>& t, int x) {
    return t.sum_all(t.mul(t.grid_sample(x, t.constant(flow44)), t.constant(w344)));
  });
  run("grid_sample(flow)", flow44, [&](Tape<double>& t, int f) {
    return t.sum_all(t.mul(t.grid_sample(t.constant(img355), f), t.constant(w344)));
  });
  {
    // whole regularizer chain: attention -> flow -> upsample -> warp -> masked L2
    const Tensor<double> keys = randt({2, 16, 4}), ref = randt({3, 8, 8}), tgt = randt({3, 8, 8});
    Tensor<double> mask({1, 8, 8});
    for (int64_t i = 0; i < 64; ++i) mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    const Tensor<double> cmap = coordinate_map<double>(4, 4);
    run("attention->leffa", randt({2, 16, 4}), [&](Tape<double>& t, int q) {
      const auto att = attention(t, q, t.constant(keys), -1, 2.0, 4, 4);
      const int flow = attention_to_flow(t, average_heads(t, att), cmap, 0);
      const int warped = t.grid_sample(t.constant(ref), upsample_flow(t, flow, 8, 8));
      return leffa_loss<double>(t, {warped}, t.constant(tgt), t.constant(mask),
                                LossReduction::mean);
    });
  }

  std::printf("%-22s %14s  %s\n", "op", "max_rel_err", "status");
  const double tol = 1e-4;
  bool ok = true;
  for (const auto& r : rows) {
    const bool pass = r.err <= tol;
    ok = ok && pass;
    std::printf("%-22s %14.3e  %s\n", r.name.c_str(), r.err, pass ? "ok" : "FAIL");
  }
  std::printf("%zu ops checked, tolerance %.0e: %s\n", rows.size(), tol, ok ? "PASS" : "FAIL");
  return ok ? 0 : 3;
}

Tensor<float> flow_to_color(const Tensor<float>& flow) {
  const int64_t h = flow.dim(0), w = flow.dim(1);
  Tensor<float> img({3, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    img[i] = detail::clamp01((flow[i * 2 + 1] + 1.0) / 2.0);          // R: column
    img[h * w + i] = detail::clamp01((flow[i * 2 + 0] + 1.0) / 2.0);  // G: row
    img[2 * h * w + i] = 0.5f;
  }
  return img;
}

int cmd_visualize(const std::string& checkpoint, const std::string& data_dir, int sample_index,
                  const std::string& query, const std::string& out_dir, int probe_t,
                  uint64_t seed) {
  LoadedModel lm = load_model_checkpoint(checkpoint);
  const auto samples = load_dataset(data_dir);
  if (sample_index < 0 || size_t(sample_index) >= samples.size())
    throw param_error("--sample index " + std::to_string(sample_index) + " out of range (" +
                      std::to_string(samples.size()) + " samples)");
  const SyntheticSample& s = samples[size_t(sample_index)];
  const int64_t H = s.target.dim(1), W = s.target.dim(2);

  long long qr = H / 2, qc = W / 2;
  if (!query.empty()) {
    if (std::sscanf(query.c_str(), "%lld,%lld", &qr, &qc) != 2)
      throw param_error("--query must be 'row,col'");
  }
  if (qr < 0 || qr >= H || qc < 0 || qc >= W)
    throw param_error("query pixel (" + std::to_string(qr) + "," + std::to_string(qc) +
                      ") out of bounds for " + std::to_string(H) + "x" + std::to_string(W));

  std::filesystem::create_directories(out_dir);
  const auto heights = DualBranchModel<float>::layer_heights(H);
  const auto selected = select_layers(heights, H, lm.leffa.theta_resolution);
  if (selected.empty()) throw param_error("theta_resolution selects no layers at this size");

  Rng rng(seed);
  Tensor<float> eps({3, H, W});
  for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = float(rng.gaussian());
  const DiffusionSchedule<float> sched(lm.total_steps);
  const Tensor<float> z_t = add_noise(s.target, probe_t, eps, sched);

  Tape<float> tape;
  const auto fwd = lm.model->forward(tape, z_t, s.aux, s.reference, probe_t, lm.leffa, selected);
  for (size_t li : selected) {
    const AttentionMapRef& cross = fwd.layers.at(li).cross;
    const int64_t lh = cross.layer_h, lw = cross.layer_w;
    const std::string stem = out_dir + "/layer" + std::to_string(li);

    const Tensor<float> avg = tape.value(average_heads(tape, cross));
    const int64_t qi = qr * lh / H, qj = qc * lw / W;
    Tensor<float> heat({1, lh, lw});
    float peak = 0;
    for (int64_t j = 0; j < lh * lw; ++j) {
      heat[j] = avg[(qi * lw + qj) * (cross.n_k + cross.registers) + j];
      peak = std::max(peak, heat[j]);
    }
    if (peak > 0)
      for (int64_t j = 0; j < lh * lw; ++j) heat[j] /= peak;
    write_pgm(heat, stem + "_heatmap.pgm");

    const int flow = attention_to_flow(tape, average_heads(tape, cross),
                                       coordinate_map<float>(lh, lw), cross.registers);
    const int up = upsample_flow(tape, flow, H, W);
    write_ppm(flow_to_color(tape.value(up)), stem + "_flow.ppm");
    write_ppm(kernels::grid_sample(s.reference, tape.value(up)), stem + "_warped.ppm");
  }
  std::cout << "wrote visualizations for " << selected.size() << " layers to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* tenv = std::getenv("LEFFA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(tenv, &end, 10);
    if (end == tenv || *end != '\0' || v < 1) {
      std::cerr << "LEFFA_THREADS must be a positive integer\n";
      return 2;
    }
    g_threads = int(v);
  }
  (void)g_threads;

  CLI::App app{"attention-to-flow regularized toy diffusion trainer"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, query;
  uint64_t seed = 1;
  int probe_t = 100, sample_index = 0;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset directory");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "pre-generated dataset directory (optional)");
  train->add_option("--out", out_dir, "output directory (default: config output_dir)");
  train->add_option("--seed", seed, "training seed");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "checkpoint .lft")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--probe_t", probe_t, "probe timestep");
  ev->add_option("--seed", seed, "noise seed");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gc->add_option("--seed", seed, "input seed");

  auto* vis = app.add_subcommand("visualize", "attention/flow/warp images for one sample");
  vis->add_option("--checkpoint", checkpoint, "checkpoint .lft")->required();
  vis->add_option("--data", data_dir, "dataset directory")->required();
  vis->add_option("--sample", sample_index, "sample index in the dataset");
  vis->add_option("--query", query, "heatmap query pixel 'row,col' (default: center)");
  vis->add_option("--out", out_dir, "output directory")->required();
  vis->add_option("--probe_t", probe_t, "probe timestep");
  vis->add_option("--seed", seed, "noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, seed);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, probe_t, seed);
    if (gc->parsed()) return cmd_gradcheck(seed);
    if (vis->parsed())
      return cmd_visualize(checkpoint, data_dir, sample_index, query, out_dir, probe_t, seed);
  } catch (const param_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dim_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
