#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "leffa/attention_flow.hpp"
#include "leffa/diffusion.hpp"
#include "leffa/model.hpp"
#include "leffa/rng.hpp"
#include "leffa/synthdata.hpp"
#include "leffa/warp.hpp"

// Progressive training with the flow-field regularizer, AdamW, and the
// EPE / warp-PSNR evaluation used by the benchmark tasks.

namespace leffa {

// ---- AdamW ---------------------------------------------------------------

template <typename T>
struct AdamWState {
  std::map<std::string, Tensor<T>> m, v;
  int64_t step = 0;
};

template <typename T>
void adamw_step(std::map<std::string, Tensor<T>>& params,
                const std::map<std::string, Tensor<T>>& grads, AdamWState<T>& state, T lr,
                T beta1 = T(0.9), T beta2 = T(0.999), T weight_decay = T(0),
                T eps = T(1e-8)) {
  if (lr <= T(0)) throw param_error("adamw learning rate must be > 0");
  for (const auto& [name, g] : grads)
    if (!g.all_finite())
      throw std::runtime_error("adamw_step: non-finite gradient for parameter '" + name + "'");
  state.step += 1;
  const T bc1 = T(1) - T(std::pow(double(beta1), double(state.step)));
  const T bc2 = T(1) - T(std::pow(double(beta2), double(state.step)));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // untouched parameter: no update
    const Tensor<T>& g = git->second;
    auto& m = state.m.try_emplace(name, Tensor<T>(p.shape())).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>(p.shape())).first->second;
    Tensor<T> np = p.clone();
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
      v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
      const T mhat = m[i] / bc1, vhat = v[i] / bc2;
      np[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * np[i]);
    }
    p = std::move(np);
  }
}

// ---- plans / reports -------------------------------------------------------

struct Stage {
  int64_t height = 32, width = 32;
  int steps = 0;
  int batch_size = 1;
  bool leffa_enabled = false;
  double learning_rate = 1e-3;
};

struct StagePlan {
  std::vector<Stage> stages;
  bool allow_early_leffa = false;  // by default only the final stage may enable the regularizer

  void validate() const {
    if (stages.empty()) throw param_error("empty stage plan");
    for (size_t i = 0; i < stages.size(); ++i) {
      const Stage& s = stages[i];
      if (s.height < 4 || s.width < 4 || s.steps < 0 || s.batch_size < 1 ||
          s.learning_rate <= 0)
        throw param_error("invalid stage " + std::to_string(i));
      if (i > 0 && (s.height < stages[i - 1].height || s.width < stages[i - 1].width))
        throw param_error("stage resolutions must be non-decreasing");
      if (!allow_early_leffa && s.leffa_enabled && i + 1 != stages.size())
        throw param_error("leffa_enabled is only allowed in the final stage");
    }
  }
};

struct DataSpec {
  std::string task_kind = "patch_permutation";
  int count = 16;
  uint64_t seed = 1;
  int grid_n = 4;
  int period = 4;
};

inline std::vector<SyntheticSample> render_dataset(const DataSpec& spec, int64_t H, int64_t W) {
  if (spec.count < 1) throw param_error("dataset count must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i)
    out.push_back(gen_sample(spec.task_kind, spec.seed + uint64_t(i), H, W, spec.grid_n,
                             spec.period));
  return out;
}

struct EvalReport {
  double mean_epe = 0;
  double warp_psnr = 0;
  double leffa_value = 0;
  std::vector<double> per_layer_epe;
  std::vector<double> per_layer_psnr;
};

struct MetricsRow {
  int64_t step;
  double loss_diffusion, loss_leffa, mean_epe, warp_psnr;
};

struct TrainResult {
  std::vector<MetricsRow> log;
  bool halted_on_nan = false;
  int64_t steps_run = 0;
};

// Closed-form "no localization" reference: flow equal to the centroid of the
// key coordinates (what a uniform attention row produces).
inline double uniform_attention_epe(const std::vector<SyntheticSample>& samples) {
  double total = 0;
  int64_t count = 0;
  for (const auto& s : samples) {
    const int64_t H = s.gt_flow.dim(0), W = s.gt_flow.dim(1);
    const Tensor<float> cmap = coordinate_map<float>(H, W);
    double cy = 0, cx = 0;
    for (int64_t i = 0; i < H * W; ++i) {
      cy += cmap[i * 2];
      cx += cmap[i * 2 + 1];
    }
    cy /= double(H * W);
    cx /= double(H * W);
    for (int64_t i = 0; i < H * W; ++i)
      if (s.mask[i] != 0.0f) {
        const double dy = s.gt_flow[i * 2] - cy, dx = s.gt_flow[i * 2 + 1] - cx;
        total += std::sqrt(dy * dy + dx * dx);
        ++count;
      }
  }
  return count ? total / double(count) : 0.0;
}

// Mean end-point error inside the mask plus warp PSNR (dB, capped at 99) of
// grid_sample(reference, flow) against the target. flow is [H,W,2] at full
// resolution in normalized coordinates.
struct FlowScore {
  double epe = 0, psnr = 0, mse = 0;
};

template <typename T>
FlowScore flow_epe_psnr(const Tensor<T>& flow, const SyntheticSample& s) {
  const int64_t H = s.target.dim(1), W = s.target.dim(2);
  if (flow.rank() != 3 || flow.dim(0) != H || flow.dim(1) != W || flow.dim(2) != 2)
    throw dim_error("flow_epe_psnr: flow shape " + shape_str(flow.shape()));
  double epe = 0;
  int64_t cnt = 0;
  for (int64_t i = 0; i < H * W; ++i)
    if (s.mask[i] != 0.0f) {
      const double dy = double(flow[i * 2]) - double(s.gt_flow[i * 2]);
      const double dx = double(flow[i * 2 + 1]) - double(s.gt_flow[i * 2 + 1]);
      epe += std::sqrt(dy * dy + dx * dx);
      ++cnt;
    }
  epe = cnt ? epe / double(cnt) : 0.0;
  const Tensor<T> warped = kernels::grid_sample(s.reference.template cast<T>(), flow);
  double mse = 0;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      if (s.mask[i] != 0.0f) {
        const double d = double(warped[c * H * W + i]) - double(s.target[c * H * W + i]);
        mse += d * d;
      }
  mse = cnt ? mse / double(3 * cnt) : 0.0;
  const double psnr = mse > 0 ? std::min(99.0, 10.0 * std::log10(1.0 / mse)) : 99.0;
  return {epe, psnr, mse};
}

// ---- trainer ----------------------------------------------------------------

template <typename T>
class Trainer {
 public:
  Trainer(DualBranchModel<T>& model, const LeffaConfig& leffa, DiffusionSchedule<T> sched)
      : model_(model), leffa_(leffa), sched_(std::move(sched)) {
    leffa_.validate();
  }

  // Per-layer warped images for the regularizer, honoring the ablation
  // switches. Returns the loss node (or -1 when no layer participates).
  int leffa_term(Tape<T>& tape, const ForwardResult<T>& fwd,
                 const std::vector<size_t>& selected, const Tensor<T>& reference,
                 const Tensor<T>& target, const Tensor<T>& mask) {
    const int64_t H = target.dim(1), W = target.dim(2);
    const int ref_id = tape.constant(reference);
    const int tgt_id = tape.constant(target);
    const int mask_id = tape.constant(mask);
    int total = -1;
    for (size_t l : selected) {
      const LayerAttention& la = fwd.layers.at(l);
      const int64_t lh = la.cross.layer_h, lw = la.cross.layer_w;
      const Tensor<T> cmap = coordinate_map<T>(lh, lw);
      std::vector<int> maps;  // [n, n+r] attention maps feeding flows
      if (leffa_.average_heads) {
        maps.push_back(average_heads(tape, la.cross));
      } else {
        for (int64_t h = 0; h < la.cross.heads; ++h)
          maps.push_back(tape.reshape(tape.slice0(la.cross.weights, h, 1),
                                      {la.cross.n_q, la.cross.n_k + la.cross.registers}));
      }
      for (int m : maps) {
        const int flow = attention_to_flow(tape, m, cmap, la.cross.registers);
        int term;
        if (leffa_.upsample_flow) {
          const int up = upsample_flow(tape, flow, H, W);
          const int warped = tape.grid_sample(ref_id, up);
          term = leffa_loss<T>(tape, {warped}, tgt_id, mask_id, leffa_.loss_reduction);
        } else {
          // supervise at the layer's own resolution
          const int ref_l = tape.constant(kernels::bilinear_resize(reference, lh, lw));
          const int tgt_l = tape.constant(kernels::bilinear_resize(target, lh, lw));
          Tensor<T> mask_l = kernels::bilinear_resize(mask, lh, lw);
          for (int64_t i = 0; i < mask_l.numel(); ++i) mask_l[i] = mask_l[i] >= T(0.5) ? T(1) : T(0);
          const int warped = tape.grid_sample(ref_l, flow);
          term = leffa_loss<T>(tape, {warped}, tgt_l, tape.constant(mask_l),
                               leffa_.loss_reduction);
        }
        if (!leffa_.average_heads) term = tape.scale(term, T(1) / T(maps.size()));
        total = total < 0 ? term : tape.add(total, term);
      }
    }
    return total;
  }

  TrainResult train(const StagePlan& plan, const DataSpec& data, uint64_t seed,
                    int log_every = 50, int probe_count = 32, int probe_t = 100,
                    std::vector<MetricsRow>* out_log = nullptr) {
    plan.validate();
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    AdamWState<T> opt;
    TrainResult result;
    int64_t global_step = 0;
    for (const Stage& stage : plan.stages) {
      const auto samples = render_dataset(data, stage.height, stage.width);
      DataSpec probe_spec = data;
      probe_spec.count = probe_count;
      probe_spec.seed = data.seed + 1000000;  // disjoint from training seeds
      const auto probe = render_dataset(probe_spec, stage.height, stage.width);
      const auto heights = DualBranchModel<T>::layer_heights(stage.height);
      const auto selected = select_layers(heights, stage.height, leffa_.theta_resolution);
      const Tensor<T> ones = Tensor<T>::full({1, stage.height, stage.width}, T(1));

      for (int step = 0; step < stage.steps; ++step, ++global_step) {
        const int t = int(rng.uniform_int(sched_.total_steps));
        double loss_diff_v = 0, loss_leffa_v = 0;
        Tape<T> tape;
        int batch_diff = -1, batch_leffa = -1;
        const bool leffa_active = stage.leffa_enabled && leffa_.lambda_leffa > 0 &&
                                  timestep_in_scope(t, leffa_.theta_timestep) &&
                                  !selected.empty();
        for (int b = 0; b < stage.batch_size; ++b) {
          const SyntheticSample& s = samples[rng.uniform_int(int64_t(samples.size()))];
          const Tensor<T> z0 = s.target.template cast<T>();
          Tensor<T> eps(z0.shape());
          for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = T(rng.gaussian());
          const Tensor<T> z_t = add_noise(z0, t, eps, sched_);
          auto fwd = model_.forward(tape, z_t, s.aux.template cast<T>(),
                                    s.reference.template cast<T>(), t, leffa_, selected);
          const int ld = diffusion_loss(tape, fwd.predicted_noise, tape.constant(eps));
          batch_diff = batch_diff < 0 ? ld : tape.add(batch_diff, ld);
          if (leffa_active) {
            const Tensor<T>& mask_t =
                leffa_.mask_mode == MaskMode::garment_mask ? s.mask.template cast<T>() : ones;
            const int ll = leffa_term(tape, fwd, selected, s.reference.template cast<T>(),
                                      s.target.template cast<T>(), mask_t);
            if (ll >= 0) batch_leffa = batch_leffa < 0 ? ll : tape.add(batch_leffa, ll);
          }
        }
        int loss = tape.scale(batch_diff, T(1) / T(stage.batch_size));
        loss_diff_v = double(tape.value(loss).item());
        if (batch_leffa >= 0) {
          const int lavg = tape.scale(batch_leffa, T(1) / T(stage.batch_size));
          loss_leffa_v = double(tape.value(lavg).item());
          loss = combined_loss(tape, loss, lavg, T(leffa_.lambda_leffa));
        }
        if (!tape.value(loss).all_finite()) {
          result.halted_on_nan = true;  // parameters are still the last good ones
          result.steps_run = global_step;
          if (out_log) *out_log = result.log;
          return result;
        }
        tape.backward(loss);
        std::map<std::string, Tensor<T>> grads;
        for (const auto& [name, id] : model_.param_ids())
          if (tape.needs(id)) grads.emplace(name, tape.grad(id));
        adamw_step(model_.params(), grads, opt, T(stage.learning_rate), T(0.9), T(0.999),
                   T(0.01));

        if (log_every > 0 && (global_step % log_every == 0 || step + 1 == stage.steps)) {
          EvalReport er = evaluate(probe, probe_t, seed);
          result.log.push_back(
              {global_step, loss_diff_v, loss_leffa_v, er.mean_epe, er.warp_psnr});
        }
      }
    }
    result.steps_run = global_step;
    if (out_log) *out_log = result.log;
    return result;
  }

  // Flow quality at a fixed small timestep: per selected layer, upsampled
  // flow EPE inside the mask and PSNR of the warped reference vs the target.
  EvalReport evaluate(const std::vector<SyntheticSample>& samples, int probe_t,
                      uint64_t noise_seed) {
    if (samples.empty()) throw param_error("evaluate: empty dataset");
    Rng rng(noise_seed ^ 0x51caf00d);
    EvalReport report;
    int64_t n_layers = 0;
    double leffa_total = 0;
    for (const auto& s : samples) {
      const int64_t H = s.target.dim(1), W = s.target.dim(2);
      const auto heights = DualBranchModel<T>::layer_heights(H);
      const auto selected = select_layers(heights, H, leffa_.theta_resolution);
      if (selected.empty()) continue;
      const Tensor<T> z0 = s.target.template cast<T>();
      Tensor<T> eps(z0.shape());
      for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = T(rng.gaussian());
      const Tensor<T> z_t = add_noise(z0, probe_t, eps, sched_);
      Tape<T> tape;
      auto fwd = model_.forward(tape, z_t, s.aux.template cast<T>(),
                                s.reference.template cast<T>(), probe_t, leffa_, selected);
      if (report.per_layer_epe.size() < selected.size()) {
        report.per_layer_epe.assign(selected.size(), 0.0);
        report.per_layer_psnr.assign(selected.size(), 0.0);
      }
      for (size_t li = 0; li < selected.size(); ++li) {
        const LayerAttention& la = fwd.layers.at(selected[li]);
        const Tensor<T> cmap = coordinate_map<T>(la.cross.layer_h, la.cross.layer_w);
        const int avg = average_heads(tape, la.cross);
        const int flow = attention_to_flow(tape, avg, cmap, la.cross.registers);
        const int up = upsample_flow(tape, flow, H, W);
        const FlowScore score = flow_epe_psnr(tape.value(up), s);
        leffa_total += score.mse;
        report.per_layer_epe[li] += score.epe;
        report.per_layer_psnr[li] += score.psnr;
        ++n_layers;
      }
    }
    const double ns = double(samples.size());
    for (auto& v : report.per_layer_epe) v /= ns;
    for (auto& v : report.per_layer_psnr) v /= ns;
    if (!report.per_layer_epe.empty()) {
      for (double v : report.per_layer_epe) report.mean_epe += v;
      for (double v : report.per_layer_psnr) report.warp_psnr += v;
      report.mean_epe /= double(report.per_layer_epe.size());
      report.warp_psnr /= double(report.per_layer_psnr.size());
    }
    report.leffa_value = n_layers ? leffa_total / double(n_layers) : 0.0;
    return report;
  }

  const LeffaConfig& leffa_config() const { return leffa_; }
  LeffaConfig& leffa_config() { return leffa_; }
  const DiffusionSchedule<T>& schedule() const { return sched_; }

 private:
  DualBranchModel<T>& model_;
  LeffaConfig leffa_;
  DiffusionSchedule<T> sched_;
};

// ---- ablations -----------------------------------------------------------

struct AblationRow {
  std::string axis, value;
  uint64_t seed;
  double mean_epe, warp_psnr;
  bool failed = false;
};

struct AblationSetup {
  ModelConfig model;
  StagePlan plan;
  LeffaConfig leffa;
  DataSpec data;
  int probe_count = 32;
  int probe_t = 100;
};

inline void apply_ablation_value(AblationSetup& s, const std::string& axis,
                                 const std::string& value) {
  auto on = [&] { return value == "on" || value == "true" || value == "1"; };
  if (axis == "lambda") s.leffa.lambda_leffa = std::stod(value);
  else if (axis == "theta_resolution") s.leffa.theta_resolution = std::stod(value);
  else if (axis == "theta_timestep") s.leffa.theta_timestep = std::stoi(value);
  else if (axis == "tau") s.leffa.tau = std::stod(value);
  else if (axis == "average_heads") s.leffa.average_heads = on();
  else if (axis == "upsample_flow") s.leffa.upsample_flow = on();
  else if (axis == "freeze_reference") s.model.freeze_reference = on();
  else throw param_error("unknown ablation axis '" + axis + "'");
}

template <typename T>
std::vector<AblationRow> run_ablation(const AblationSetup& base, const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw param_error("run_ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const std::string& value : values) {
    for (uint64_t seed : seeds) {
      AblationRow row{axis, value, seed, 0, 0, false};
      try {
        AblationSetup s = base;
        apply_ablation_value(s, axis, value);
        DualBranchModel<T> model(s.model, seed);
        Trainer<T> trainer(model, s.leffa, DiffusionSchedule<T>());
        trainer.train(s.plan, s.data, seed, /*log_every=*/0, s.probe_count, s.probe_t);
        DataSpec probe = s.data;
        probe.count = s.probe_count;
        probe.seed = s.data.seed + 1000000;
        const auto probe_set = render_dataset(probe, s.plan.stages.back().height,
                                              s.plan.stages.back().width);
        const EvalReport er = trainer.evaluate(probe_set, s.probe_t, seed);
        row.mean_epe = er.mean_epe;
        row.warp_psnr = er.warp_psnr;
      } catch (const std::exception&) {
        row.failed = true;  // keep going with the remaining cells
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "axis,value,seed,mean_epe,warp_psnr\n";
  for (const auto& r : rows) {
    os << r.axis << "," << r.value << "," << r.seed << ",";
    if (r.failed) os << "error,error\n";
    else os << r.mean_epe << "," << r.warp_psnr << "\n";
  }
  return os.str();
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "step,loss_diffusion,loss_leffa,mean_epe,warp_psnr\n";
  for (const auto& r : rows)
    os << r.step << "," << r.loss_diffusion << "," << r.loss_leffa << "," << r.mean_epe << ","
       << r.warp_psnr << "\n";
  return os.str();
}

}  // namespace leffa
