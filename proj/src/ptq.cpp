#include "laneptq/ptq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "laneptq/errors.hpp"
#include "laneptq/parallel.hpp"
#include "laneptq/rng.hpp"

namespace laneptq {

void FocusConfig::validate() const {
  if (objective != Objective::plain && !(lambda > 1.0))
    throw std::invalid_argument("focus: lambda must be > 1, got " + std::to_string(lambda));
}

std::string FocusConfig::objective_name() const {
  switch (objective) {
    case Objective::plain: return "plain";
    case Objective::focus: return "focus";
    case Objective::focus_select: return "focus_select";
  }
  return "?";
}

FocusConfig::Objective FocusConfig::parse_objective(const std::string& name) {
  if (name == "plain") return Objective::plain;
  if (name == "focus") return Objective::focus;
  if (name == "focus_select") return Objective::focus_select;
  throw std::invalid_argument("unknown objective '" + name + "'");
}

void TuneConfig::validate() const {
  if (iterations < 0 || batch < 1 || log_every < 1 || probe_batch < 1)
    throw std::invalid_argument("tune: bad iteration/batch configuration");
  if (!(lr >= 0.0)) throw std::invalid_argument("tune: bad learning rate");
}

namespace {

void check_same_heads(const HeadOutput& fp, const HeadOutput& q) {
  if (!fp.conf.same_shape(q.conf) || !fp.local_off.same_shape(q.local_off) ||
      !fp.root_off.same_shape(q.root_off))
    throw std::invalid_argument("loss: head sets or shapes do not match");
}

}  // namespace

Tensor loss_plain(Graph& g, const HeadOutput& fp, const HeadOutput& q) {
  check_same_heads(fp, q);
  Tensor total;
  for (const auto& id : semantic_head_ids()) {
    Tensor sem = g.sum_squares(g.sub(q.head(id), fp.head(id)));
    Tensor conf = g.sum_squares(g.sub(q.conf, fp.conf));
    Tensor term = g.add(sem, conf);
    total = total.defined() ? g.add(total, term) : term;
  }
  return total;
}

Tensor loss_focus(Graph& g, const HeadOutput& fp, const HeadOutput& q, double lambda,
                  const std::vector<std::string>* active_heads) {
  check_same_heads(fp, q);
  const std::vector<std::string>& active = active_heads ? *active_heads : semantic_head_ids();
  if (active.empty()) throw std::invalid_argument("loss_focus: empty active head set");
  Tensor total;
  for (const auto& id : active) {
    if (head_role(id) != HeadRole::semantic)
      throw std::invalid_argument("loss_focus: '" + id + "' is not a semantic head");
    Tensor masked = g.mul(fp.conf, g.sub(q.head(id), fp.head(id)));
    Tensor sem = g.sum_squares(masked);
    Tensor conf = g.scalar_mul(g.sum_squares(g.sub(q.conf, fp.conf)), lambda);
    Tensor term = g.add(sem, conf);
    total = total.defined() ? g.add(total, term) : term;
  }
  return total;
}

Theorem1Report verify_theorem1(const HeadOutput& fp, const HeadOutput& q, int samples,
                               uint64_t seed) {
  check_same_heads(fp, q);
  if (samples < 1) throw std::invalid_argument("verify_theorem1: samples must be >= 1");
  const int64_t plane = fp.conf.size();

  Theorem1Report rep;
  std::vector<std::vector<double>> diffs;  // squared errors per semantic head
  for (const auto& id : semantic_head_ids()) {
    const Tensor& s_fp = fp.head(id);
    const Tensor& s_q = q.head(id);
    std::vector<double> d2(static_cast<size_t>(s_fp.size()));
    for (int64_t i = 0; i < s_fp.size(); ++i) {
      const double d = s_q.data()[i] - s_fp.data()[i];
      d2[static_cast<size_t>(i)] = d * d;
    }
    const double* c = fp.conf.data();
    const int ch = s_fp.shape()[0];
    for (int k = 0; k < ch; ++k)
      for (int64_t i = 0; i < plane; ++i) rep.analytic += c[i] * d2[static_cast<size_t>(k * plane + i)];
    diffs.push_back(std::move(d2));
  }

  Rng rng = Rng::derive(seed, {0x7468656f72656dULL});
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    double masked = 0.0;
    for (size_t h = 0; h < diffs.size(); ++h) {
      const double* c = fp.conf.data();
      const auto& d2 = diffs[h];
      const int ch = static_cast<int>(d2.size() / static_cast<size_t>(plane));
      for (int k = 0; k < ch; ++k) {
        for (int64_t i = 0; i < plane; ++i) {
          // Bernoulli(C) mask, drawn per element per sample
          if (rng.uniform() < c[i]) masked += d2[static_cast<size_t>(k * plane + i)];
        }
      }
    }
    total += masked;
  }
  rep.mc_estimate = total / static_cast<double>(samples);
  const double denom = std::max(std::abs(rep.analytic), 1e-300);
  rep.rel_gap = std::abs(rep.mc_estimate - rep.analytic) / denom;
  return rep;
}

MaskInequalityReport theorem1_mask_inequality(const HeadOutput& fp, const HeadOutput& q) {
  check_same_heads(fp, q);
  MaskInequalityReport rep;
  const int64_t plane = fp.conf.size();
  const double* c = fp.conf.data();
  for (const auto& id : semantic_head_ids()) {
    const Tensor& s_fp = fp.head(id);
    const Tensor& s_q = q.head(id);
    const int ch = s_fp.shape()[0];
    for (int k = 0; k < ch; ++k) {
      for (int64_t i = 0; i < plane; ++i) {
        const double d = s_q.data()[k * plane + i] - s_fp.data()[k * plane + i];
        if (c[i] >= 0.5) rep.masked += d * d;
        rep.weighted += (c[i] * d) * (c[i] * d);
      }
    }
  }
  rep.holds = rep.masked <= rep.weighted;
  return rep;
}

double theorem1_holds_fraction(const LaneNet& net, const QuantTable& quant,
                               const std::vector<Tensor>& images, int batch, int threads) {
  if (batch < 1 || images.empty()) throw std::invalid_argument("theorem1_holds_fraction: bad input");
  std::vector<HeadOutput> fp(images.size()), q(images.size());
  parallel_for(static_cast<int>(images.size()), threads, [&](int i) {
    Graph g(false);
    fp[static_cast<size_t>(i)] = net.forward(g, images[static_cast<size_t>(i)]);
    Graph gq(false);
    q[static_cast<size_t>(i)] = net.forward(gq, images[static_cast<size_t>(i)], &quant);
  });
  int batches = 0, holds = 0;
  for (size_t start = 0; start < images.size(); start += static_cast<size_t>(batch)) {
    const size_t end = std::min(images.size(), start + static_cast<size_t>(batch));
    double masked = 0.0, weighted = 0.0;
    for (size_t i = start; i < end; ++i) {
      MaskInequalityReport r = theorem1_mask_inequality(fp[i], q[i]);
      masked += r.masked;
      weighted += r.weighted;
    }
    ++batches;
    if (masked <= weighted) ++holds;
  }
  return static_cast<double>(holds) / static_cast<double>(batches);
}

// ---------------------------------------------------------------------------
// calibration

QuantTable calibrate(const LaneNet& net, const std::vector<Tensor>& calib_images,
                     const CalibConfig& cfg) {
  cfg.bits.validate();
  if (calib_images.empty()) throw std::invalid_argument("calibrate: no calibration images");

  QuantTable table;
  for (const auto& [name, tensor] : net.named_parameters()) {
    bool quantized = false;
    for (const auto& wn : LaneNet::quantized_weight_names()) quantized |= (wn == name);
    if (!quantized) continue;
    QuantSpec spec;
    spec.bits = cfg.bits.weight_bits;
    spec.target = QuantSpec::Target::weight;
    spec.scale = calibrate_weight_omse(tensor, spec.bits, cfg.grid_points).scale;
    table.emplace(name, spec);
  }

  // Activation statistics are observed with the weights already quantized so
  // the scales see the tensors that tuning will produce.
  const auto act_names = LaneNet::quantized_activation_names();
  std::map<std::string, EmaScale> ema;
  for (size_t start = 0; start < calib_images.size(); start += static_cast<size_t>(cfg.batch)) {
    const size_t end = std::min(calib_images.size(), start + static_cast<size_t>(cfg.batch));
    const int n = static_cast<int>(end - start);
    std::vector<std::map<std::string, std::vector<double>>> captured(static_cast<size_t>(n));
    parallel_for(n, cfg.threads, [&](int i) {
      Graph g(false);
      auto& slot = captured[static_cast<size_t>(i)];
      net.forward_observed(g, calib_images[start + static_cast<size_t>(i)], &table,
                           [&](const std::string& name, const Tensor& t) {
                             slot[name].assign(t.data(), t.data() + t.size());
                           });
    });
    for (const auto& name : act_names) {
      std::vector<double> batch_values;
      for (int i = 0; i < n; ++i) {
        const auto& v = captured[static_cast<size_t>(i)].at(name);
        batch_values.insert(batch_values.end(), v.begin(), v.end());
      }
      Tensor batch_tensor = Tensor::from_values({static_cast<int>(batch_values.size())},
                                                std::move(batch_values));
      const double best =
          calibrate_activation_batch(batch_tensor, cfg.bits.activation_bits, cfg.grid_points).scale;
      ema[name].update(best, cfg.ema_momentum);
    }
  }
  for (const auto& name : act_names) {
    QuantSpec spec;
    spec.bits = cfg.bits.activation_bits;
    spec.target = QuantSpec::Target::activation;
    spec.scale = ema.at(name).value();
    table.emplace(name, spec);
  }
  for (auto& [name, spec] : table) spec.frozen = true;
  return table;
}

// ---------------------------------------------------------------------------
// tuning

namespace {

std::string join_heads(const std::vector<std::string>& heads) {
  std::string out;
  for (const auto& h : heads) {
    if (!out.empty()) out += "+";
    out += h;
  }
  return out;
}

}  // namespace

TuneResult tune(LaneNet& net, const QuantTable& quant, const std::vector<Tensor>& calib_images,
                const TuneConfig& tcfg, const FocusConfig& fcfg,
                const std::vector<NoiseScoreCurve>& curves, const SelectionConfig& sel,
                const DecodeConfig& dcfg, const DistortionConfig& scfg) {
  tcfg.validate();
  fcfg.validate();
  if (calib_images.empty()) throw std::invalid_argument("tune: no calibration images");
  for (const auto& [name, spec] : quant) {
    if (!spec.frozen) throw std::invalid_argument("tune: unfrozen scale for '" + name + "'");
  }

  TuneResult result;
  if (tcfg.iterations == 0) return result;

  // FP targets are cached once from the untouched net.
  std::vector<HeadOutput> fp_cache(calib_images.size());
  parallel_for(static_cast<int>(calib_images.size()), tcfg.threads, [&](int i) {
    Graph g(false);
    fp_cache[static_cast<size_t>(i)] =
        net.forward(g, calib_images[static_cast<size_t>(i)]).detached();
  });

  const int probe_n = std::min<int>(tcfg.probe_batch, static_cast<int>(calib_images.size()));
  std::vector<HeadOutput> fp_probe(fp_cache.begin(), fp_cache.begin() + probe_n);
  auto probe_quant_heads = [&]() {
    std::vector<HeadOutput> q(static_cast<size_t>(probe_n));
    parallel_for(probe_n, tcfg.threads, [&](int i) {
      Graph g(false);
      q[static_cast<size_t>(i)] = net.forward(g, calib_images[static_cast<size_t>(i)], &quant);
    });
    return q;
  };

  std::vector<std::string> active = semantic_head_ids();
  const bool selecting = fcfg.objective == FocusConfig::Objective::focus_select;

  Adam opt(net.parameters(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps);
  Rng order_rng = Rng::derive(tcfg.seed, {0x74756e65ULL});
  std::vector<int> order(calib_images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // forces an initial shuffle

  for (int iter = 0; iter < tcfg.iterations; ++iter) {
    std::vector<HeadOutput> probe_q;  // filled lazily per milestone
    if (selecting && iter % sel.refresh_interval == 0) {
      probe_q = probe_quant_heads();
      active = select_heads(fp_probe, probe_q, curves, sel.k);
    }

    std::vector<int> batch;
    batch.reserve(static_cast<size_t>(tcfg.batch));
    while (static_cast<int>(batch.size()) < tcfg.batch) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    opt.zero_grad();
    const double mean_loss =
        batch_gradients(net, batch, tcfg.threads, [&](Graph& g, const LaneNet& worker, int idx) {
          HeadOutput q = worker.forward(g, calib_images[static_cast<size_t>(idx)], &quant);
          const HeadOutput& fp = fp_cache[static_cast<size_t>(idx)];
          switch (fcfg.objective) {
            case FocusConfig::Objective::plain: return loss_plain(g, fp, q);
            case FocusConfig::Objective::focus: return loss_focus(g, fp, q, fcfg.lambda);
            case FocusConfig::Objective::focus_select:
              return loss_focus(g, fp, q, fcfg.lambda, &active);
          }
          throw std::logic_error("unreachable objective");
        });
    if (!std::isfinite(mean_loss))
      throw NumericError("tune: non-finite loss at iteration " + std::to_string(iter));
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& p : net.parameters()) {
      double* gp = p.grad();
      for (int64_t i = 0; i < p.size(); ++i) gp[i] *= inv;
    }
    opt.step();
    result.final_loss = mean_loss;

    if (iter % tcfg.log_every == 0 || iter + 1 == tcfg.iterations) {
      if (probe_q.empty()) probe_q = probe_quant_heads();
      TuneLogRow row;
      row.iteration = iter;
      row.loss = mean_loss;
      row.sigma_local = head_noise_level(fp_probe, probe_q, "local_off");
      row.sigma_root = head_noise_level(fp_probe, probe_q, "root_off");
      row.active = join_heads(selecting ? active : semantic_head_ids());
      result.log.push_back(std::move(row));
    }
  }
  result.final_active = selecting ? active : semantic_head_ids();
  return result;
}

F1Result evaluate_f1(const LaneNet& net, const Dataset& ds, const std::vector<int>& ids,
                     const QuantTable* quant, const DecodeConfig& dcfg, double f1_iou,
                     double f1_width, int threads) {
  std::vector<F1Result> per_image(ids.size());
  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    const SyntheticScene& scene = ds.scenes[static_cast<size_t>(ids[static_cast<size_t>(i)])];
    Graph g(false);
    HeadOutput heads = net.forward(g, scene.image, quant);
    std::vector<Lane> pred = decode(heads, dcfg);
    per_image[static_cast<size_t>(i)] =
        f1_eval(pred, scene.gt_lanes, f1_iou, f1_width, LaneNet::kInput, LaneNet::kInput);
  });
  int tp = 0, fp = 0, fn = 0;
  for (const auto& r : per_image) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  return f1_from_counts(tp, fp, fn);
}

}  // namespace laneptq
