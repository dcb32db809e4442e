// laneptq: post-training quantization toolkit for the synthetic keypoint
// lane detector. Subcommands cover the whole pipeline: gen-data, pretrain,
// calibrate, tune, eval, sensitivity, score, ablate.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "laneptq/checkpoint.hpp"
#include "laneptq/config.hpp"
#include "laneptq/errors.hpp"
#include "laneptq/ptq.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace laneptq;

namespace {

std::string g2s(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

ordered_json read_json(const std::string& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError(std::string("missing ") + what + ": " + path);
  return ordered_json::parse(is);
}

Dataset load_dataset_checked(const ExperimentConfig& cfg) {
  return load_dataset(cfg.data_dir);
}

Checkpoint load_ckpt_checked(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw MissingArtifactError(std::string("missing ") + what + ": " + path);
  return load_checkpoint(path);
}

std::vector<PretrainSample> make_pretrain_samples(const Dataset& ds, const std::vector<int>& ids) {
  std::vector<PretrainSample> samples;
  samples.reserve(ids.size());
  for (int id : ids) {
    const SyntheticScene& s = ds.scenes[static_cast<size_t>(id)];
    samples.push_back({s.image, s.targets.conf_mask, s.targets.local_off, s.targets.root_off});
  }
  return samples;
}

std::vector<Tensor> calib_tensors(const Dataset& ds, int limit = 0) {
  std::vector<Tensor> images;
  for (int id : ds.calib_ids) {
    images.push_back(ds.scenes[static_cast<size_t>(id)].image);
    if (limit > 0 && static_cast<int>(images.size()) >= limit) break;
  }
  return images;
}

std::string pretrained_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/pretrained.ckpt"; }
std::string calib_path(const ExperimentConfig& cfg, const BitConfig& bc) {
  return cfg.out_dir + "/calib_" + bc.name() + ".ckpt";
}
std::string curves_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/curves.json"; }

ordered_json lanes_to_json(const std::vector<Lane>& lanes) {
  ordered_json arr = ordered_json::array();
  for (const Lane& lane : lanes) {
    ordered_json pts = ordered_json::array();
    for (const Point2& p : lane.points) pts.push_back({p.x, p.y});
    arr.push_back(pts);
  }
  return arr;
}

std::vector<Lane> lanes_from_json_file(const std::string& path) {
  ordered_json j = read_json(path, "lane file");
  std::vector<Lane> lanes;
  for (const auto& lj : j.at("lanes")) {
    Lane lane;
    for (const auto& pj : lj) lane.points.push_back({pj.at(0), pj.at(1)});
    lanes.push_back(std::move(lane));
  }
  return lanes;
}

// ---------------------------------------------------------------------------
// pipeline pieces shared by subcommands

std::vector<NoiseScoreCurve> build_and_save_curves(const ExperimentConfig& cfg, const LaneNet& net,
                                                   const Dataset& ds) {
  SelectionConfig sel = cfg.selection_config();
  std::vector<Tensor> images = calib_tensors(ds, sel.curve_images);
  std::vector<std::string> ids = semantic_head_ids();
  ids.insert(ids.begin(), confidence_head_id());
  auto curves = build_curves(net, images, ids, sel, cfg.decode_config(), cfg.distortion_config(),
                             static_cast<int>(cfg.threads));
  fs::create_directories(cfg.out_dir);
  save_curves(curves_path(cfg), curves, cfg.hash(), sel.seed);

  std::string csv = "# config_hash=" + hash_hex(cfg.hash()) + " seed=" + std::to_string(sel.seed) +
                    "\nhead_id,sigma_rel,mean_score\n";
  for (const auto& c : curves)
    for (const auto& [sigma, mean] : c.nodes)
      csv += c.head_id + "," + g2s(sigma) + "," + g2s(mean) + "\n";
  write_text(cfg.out_dir + "/curves.csv", csv);
  return curves;
}

std::vector<NoiseScoreCurve> semantic_only(const std::vector<NoiseScoreCurve>& curves) {
  std::vector<NoiseScoreCurve> out;
  for (const auto& c : curves) {
    if (c.head_id != confidence_head_id()) out.push_back(c);
  }
  return out;
}

struct CellResult {
  std::string bits, objective;
  int seed_idx = 0;
  double fp_f1 = 0.0, calib_f1 = 0.0, tuned_f1 = 0.0;
};

CellResult run_tune_cell(const ExperimentConfig& cfg, const Dataset& ds, const LaneNet& pretrained,
                         const QuantTable& table, const BitConfig& bc, const std::string& objective,
                         uint64_t seed, double fp_f1, double calib_f1, const std::string& cell_dir,
                         const std::vector<NoiseScoreCurve>& curves) {
  ExperimentConfig cell_cfg = cfg;
  cell_cfg.bits = bc.name();
  cell_cfg.objective = objective;
  cell_cfg.tune_seed = static_cast<int64_t>(seed);

  LaneNet net = pretrained.clone();
  TuneConfig tcfg = cell_cfg.tune_config();
  FocusConfig fcfg = cell_cfg.focus_config();
  TuneResult tr = tune(net, table, calib_tensors(ds), tcfg, fcfg, semantic_only(curves),
                       cell_cfg.selection_config(), cell_cfg.decode_config(),
                       cell_cfg.distortion_config());

  F1Result tuned = evaluate_f1(net, ds, ds.val_ids, &table, cell_cfg.decode_config(),
                               cell_cfg.f1_iou, cell_cfg.f1_width, tcfg.threads);

  fs::create_directories(cell_dir);
  save_checkpoint(cell_dir + "/tuned.ckpt",
                  net.to_checkpoint(table, cell_cfg.hash(), seed));

  ordered_json metrics;
  metrics["config_hash"] = hash_hex(cell_cfg.hash());
  metrics["seed"] = seed;
  metrics["bits"] = bc.name();
  metrics["objective"] = objective;
  metrics["fp_f1"] = fp_f1;
  metrics["calib_f1"] = calib_f1;
  metrics["tuned_f1"] = tuned.f1;
  metrics["tuned_precision"] = tuned.precision;
  metrics["tuned_recall"] = tuned.recall;
  metrics["final_loss"] = tr.final_loss;
  metrics["final_active"] = tr.final_active;
  write_json(cell_dir + "/metrics.json", metrics);

  std::string log_csv = "# config_hash=" + hash_hex(cell_cfg.hash()) +
                        " seed=" + std::to_string(seed) + "\niteration,loss,sigma_local,sigma_root,active\n";
  for (const auto& row : tr.log) {
    log_csv += std::to_string(row.iteration) + "," + g2s(row.loss) + "," + g2s(row.sigma_local) +
               "," + g2s(row.sigma_root) + "," + row.active + "\n";
  }
  write_text(cell_dir + "/itlog.csv", log_csv);

  CellResult res;
  res.bits = bc.name();
  res.objective = objective;
  res.fp_f1 = fp_f1;
  res.calib_f1 = calib_f1;
  res.tuned_f1 = tuned.f1;
  return res;
}

// ---------------------------------------------------------------------------
// subcommand bodies

int cmd_gen_data(const ExperimentConfig& cfg) {
  Dataset ds = build_dataset(static_cast<uint64_t>(cfg.master_seed),
                             static_cast<int>(cfg.train_scenes), static_cast<int>(cfg.val_scenes),
                             static_cast<int>(cfg.calib_images), cfg.scene_params());
  save_dataset(cfg.data_dir, ds, cfg.hash());
  std::printf("gen-data: %zu scenes (%zu train / %zu val, %zu calib) -> %s\n", ds.scenes.size(),
              ds.train_ids.size(), ds.val_ids.size(), ds.calib_ids.size(), cfg.data_dir.c_str());
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset_checked(cfg);
  LaneNet net = LaneNet::init(static_cast<uint64_t>(cfg.model_seed));
  auto samples = make_pretrain_samples(ds, ds.train_ids);
  PretrainStats stats = pretrain(net, samples, cfg.pretrain_config());
  F1Result val = evaluate_f1(net, ds, ds.val_ids, nullptr, cfg.decode_config(), cfg.f1_iou,
                             cfg.f1_width, static_cast<int>(cfg.threads));
  fs::create_directories(cfg.out_dir);
  save_checkpoint(pretrained_path(cfg),
                  net.to_checkpoint({}, cfg.hash(), static_cast<uint64_t>(cfg.model_seed)));
  ordered_json report;
  report["config_hash"] = hash_hex(cfg.hash());
  report["seed"] = cfg.model_seed;
  report["steps"] = stats.steps;
  report["final_epoch_loss"] = stats.final_epoch_loss;
  report["val_f1"] = val.f1;
  report["val_precision"] = val.precision;
  report["val_recall"] = val.recall;
  write_json(cfg.out_dir + "/pretrain_report.json", report);
  std::printf("pretrain: %lld steps, final epoch loss %.4f, val F1 %.4f -> %s\n",
              static_cast<long long>(stats.steps), stats.final_epoch_loss, val.f1,
              pretrained_path(cfg).c_str());
  return 0;
}

int cmd_calibrate(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset_checked(cfg);
  Checkpoint ckpt = load_ckpt_checked(pretrained_path(cfg), "pretrained checkpoint");
  LaneNet net = LaneNet::from_checkpoint(ckpt);
  BitConfig bc = cfg.bit_config();
  QuantTable table = calibrate(net, calib_tensors(ds), cfg.calib_config(bc));
  save_checkpoint(calib_path(cfg, bc),
                  net.to_checkpoint(table, cfg.hash(), static_cast<uint64_t>(cfg.master_seed)));
  std::printf("calibrate: %s scales for %zu tensors -> %s\n", bc.name().c_str(), table.size(),
              calib_path(cfg, bc).c_str());
  return 0;
}

int cmd_sensitivity(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset_checked(cfg);
  Checkpoint ckpt = load_ckpt_checked(pretrained_path(cfg), "pretrained checkpoint");
  LaneNet net = LaneNet::from_checkpoint(ckpt);
  auto curves = build_and_save_curves(cfg, net, ds);
  std::printf("sensitivity: built %zu noise-score curves -> %s\n", curves.size(),
              curves_path(cfg).c_str());
  for (const auto& c : curves) {
    std::printf("  %-10s last node (sigma=%.2f) mean score %.3f\n", c.head_id.c_str(),
                c.nodes.back().first, c.nodes.back().second);
  }
  return 0;
}

int cmd_tune(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset_checked(cfg);
  Checkpoint pre = load_ckpt_checked(pretrained_path(cfg), "pretrained checkpoint");
  LaneNet fp_net = LaneNet::from_checkpoint(pre);
  BitConfig bc = cfg.bit_config();
  Checkpoint cal = load_ckpt_checked(calib_path(cfg, bc), "calibrated checkpoint");
  if (cal.quant.empty()) throw MissingArtifactError("calibrated checkpoint has no quantizer table: " +
                                                    calib_path(cfg, bc));

  std::vector<NoiseScoreCurve> curves;
  if (cfg.focus_config().objective == FocusConfig::Objective::focus_select) {
    curves = load_curves(curves_path(cfg));
  }

  F1Result fp_f1 = evaluate_f1(fp_net, ds, ds.val_ids, nullptr, cfg.decode_config(), cfg.f1_iou,
                               cfg.f1_width, static_cast<int>(cfg.threads));
  F1Result calib_f1 = evaluate_f1(fp_net, ds, ds.val_ids, &cal.quant, cfg.decode_config(),
                                  cfg.f1_iou, cfg.f1_width, static_cast<int>(cfg.threads));

  const std::string cell = bc.name() + "_" + cfg.objective + "_s" + std::to_string(cfg.tune_seed);
  CellResult res = run_tune_cell(cfg, ds, fp_net, cal.quant, bc, cfg.objective,
                                 static_cast<uint64_t>(cfg.tune_seed), fp_f1.f1, calib_f1.f1,
                                 cfg.out_dir + "/" + cell, curves);
  std::printf("tune: %s %s seed %lld: fp %.4f calib %.4f tuned %.4f -> %s\n", res.bits.c_str(),
              res.objective.c_str(), static_cast<long long>(cfg.tune_seed), res.fp_f1, res.calib_f1,
              res.tuned_f1, (cfg.out_dir + "/" + cell).c_str());
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path, bool fp_only,
             const std::string& dump_dir) {
  Dataset ds = load_dataset_checked(cfg);
  const std::string path = ckpt_path.empty() ? pretrained_path(cfg) : ckpt_path;
  Checkpoint ckpt = load_ckpt_checked(path, "checkpoint");
  LaneNet net = LaneNet::from_checkpoint(ckpt);
  const QuantTable* qt = (!fp_only && !ckpt.quant.empty()) ? &ckpt.quant : nullptr;
  F1Result r = evaluate_f1(net, ds, ds.val_ids, qt, cfg.decode_config(), cfg.f1_iou, cfg.f1_width,
                           static_cast<int>(cfg.threads));
  ordered_json report;
  report["config_hash"] = hash_hex(cfg.hash());
  report["seed"] = cfg.master_seed;
  report["checkpoint"] = path;
  report["quantized"] = qt != nullptr;
  report["val_f1"] = r.f1;
  report["precision"] = r.precision;
  report["recall"] = r.recall;
  report["tp"] = r.tp;
  report["fp"] = r.fp;
  report["fn"] = r.fn;
  fs::create_directories(cfg.out_dir);
  write_json(cfg.out_dir + "/eval_report.json", report);
  std::printf("eval: %s%s val F1 %.4f (P %.4f R %.4f)\n", path.c_str(), qt ? " [quantized]" : "",
              r.f1, r.precision, r.recall);

  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (size_t i = 0; i < ds.val_ids.size(); ++i) {
      const SyntheticScene& scene = ds.scenes[static_cast<size_t>(ds.val_ids[i])];
      Graph g(false);
      std::vector<Lane> pred = decode(net.forward(g, scene.image, qt), cfg.decode_config());
      char name[64];
      std::snprintf(name, sizeof(name), "%s/pred_%05zu.json", dump_dir.c_str(), i);
      ordered_json pj{{"config_hash", hash_hex(cfg.hash())}, {"seed", cfg.master_seed},
                      {"lanes", lanes_to_json(pred)}};
      write_json(name, pj);
      std::snprintf(name, sizeof(name), "%s/gt_%05zu.json", dump_dir.c_str(), i);
      ordered_json gj{{"config_hash", hash_hex(cfg.hash())}, {"seed", cfg.master_seed},
                      {"lanes", lanes_to_json(scene.gt_lanes)}};
      write_json(name, gj);
    }
    std::printf("eval: dumped %zu lane files to %s\n", 2 * ds.val_ids.size(), dump_dir.c_str());
  }
  return 0;
}

int cmd_score(const ExperimentConfig& cfg, const std::string& file_a, const std::string& file_b,
              const std::string& out_path) {
  std::vector<Lane> a = lanes_from_json_file(file_a);
  std::vector<Lane> b = lanes_from_json_file(file_b);
  ScoreReport rep = lane_distortion_report(a, b, cfg.distortion_config());
  ordered_json j;
  j["config_hash"] = hash_hex(cfg.hash());
  j["seed"] = cfg.master_seed;
  j["score"] = rep.score;
  j["matched"] = rep.matched;
  j["mismatched"] = rep.mismatched;
  j["pairs"] = rep.pairs;
  std::printf("%s\n", j.dump(2).c_str());
  if (!out_path.empty()) write_json(out_path, j);
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  Dataset ds = load_dataset_checked(cfg);
  Checkpoint pre = load_ckpt_checked(pretrained_path(cfg), "pretrained checkpoint");
  LaneNet fp_net = LaneNet::from_checkpoint(pre);

  std::vector<NoiseScoreCurve> curves;
  if (fs::exists(curves_path(cfg))) {
    curves = load_curves(curves_path(cfg));
  } else {
    curves = build_and_save_curves(cfg, fp_net, ds);
  }

  F1Result fp_f1 = evaluate_f1(fp_net, ds, ds.val_ids, nullptr, cfg.decode_config(), cfg.f1_iou,
                               cfg.f1_width, static_cast<int>(cfg.threads));

  const std::vector<std::string> bit_names = {"w8a8", "w8a4", "w4a4"};
  const std::vector<std::string> objectives = {"plain", "focus", "focus_select"};
  std::vector<CellResult> cells;
  for (const auto& bits : bit_names) {
    BitConfig bc = BitConfig::parse(bits);
    const std::string cpath = calib_path(cfg, bc);
    QuantTable table;
    if (fs::exists(cpath)) {
      table = load_checkpoint(cpath).quant;
    } else {
      table = calibrate(fp_net, calib_tensors(ds), cfg.calib_config(bc));
      save_checkpoint(cpath, fp_net.to_checkpoint(table, cfg.hash(),
                                                  static_cast<uint64_t>(cfg.master_seed)));
    }
    F1Result calib_f1 = evaluate_f1(fp_net, ds, ds.val_ids, &table, cfg.decode_config(), cfg.f1_iou,
                                    cfg.f1_width, static_cast<int>(cfg.threads));
    for (const auto& objective : objectives) {
      for (int s = 0; s < static_cast<int>(cfg.ablate_seeds); ++s) {
        const uint64_t seed = static_cast<uint64_t>(cfg.tune_seed) + static_cast<uint64_t>(s);
        const std::string cell_dir = cfg.out_dir + "/ablate/" + bits + "_" + objective + "_s" +
                                     std::to_string(seed);
        CellResult res = run_tune_cell(cfg, ds, fp_net, table, bc, objective, seed, fp_f1.f1,
                                       calib_f1.f1, cell_dir, curves);
        res.seed_idx = static_cast<int>(seed);
        cells.push_back(res);
        std::printf("ablate: %-4s %-12s seed %llu  calib %.4f  tuned %.4f\n", bits.c_str(),
                    objective.c_str(), static_cast<unsigned long long>(seed), res.calib_f1,
                    res.tuned_f1);
      }
    }
  }

  std::string csv = "# config_hash=" + hash_hex(cfg.hash()) +
                    " seed=" + std::to_string(cfg.master_seed) +
                    "\nbits,objective,seed,fp_f1,calib_f1,tuned_f1\n";
  ordered_json rows = ordered_json::array();
  for (const auto& c : cells) {
    csv += c.bits + "," + c.objective + "," + std::to_string(c.seed_idx) + "," + g2s(c.fp_f1) +
           "," + g2s(c.calib_f1) + "," + g2s(c.tuned_f1) + "\n";
    rows.push_back(ordered_json{{"bits", c.bits},
                                {"objective", c.objective},
                                {"seed", c.seed_idx},
                                {"fp_f1", c.fp_f1},
                                {"calib_f1", c.calib_f1},
                                {"tuned_f1", c.tuned_f1}});
  }
  write_text(cfg.out_dir + "/ablate/summary.csv", csv);
  ordered_json summary;
  summary["config_hash"] = hash_hex(cfg.hash());
  summary["seed"] = cfg.master_seed;
  summary["fp_f1"] = fp_f1.f1;
  summary["cells"] = std::move(rows);
  write_json(cfg.out_dir + "/ablate/summary.json", summary);
  std::printf("ablate: %zu cells -> %s\n", cells.size(), (cfg.out_dir + "/ablate").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"laneptq - PTQ toolkit for a keypoint lane detector"};
  app.require_subcommand(1);
  app.footer("Config keys (file sections or --section.key=value overrides):\n" +
             ExperimentConfig::describe_keys());

  std::string config_path;
  app.add_option("--config", config_path, "TOML-style experiment config file")->expected(1);

  struct {
    std::string ckpt, dump_lanes, score_a, score_b, score_out;
    bool fp_only = false;
  } opts;

  CLI::App* c_gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  CLI::App* c_pre = app.add_subcommand("pretrain", "train the FP model on the train split");
  CLI::App* c_cal = app.add_subcommand("calibrate", "calibrate quantizer scales (quant.bits)");
  CLI::App* c_tune = app.add_subcommand("tune", "reconstruction tuning of the quantized model");
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  c_eval->add_option("--ckpt", opts.ckpt, "checkpoint to evaluate (default pretrained)");
  c_eval->add_flag("--fp", opts.fp_only, "ignore any quantizer table in the checkpoint");
  c_eval->add_option("--dump-lanes", opts.dump_lanes, "directory for per-scene lane JSON files");
  CLI::App* c_sens = app.add_subcommand("sensitivity", "build per-head noise-score curves");
  CLI::App* c_score = app.add_subcommand("score", "lane distortion score between two lane files");
  c_score->add_option("lanes_a", opts.score_a, "reference lane JSON")->required();
  c_score->add_option("lanes_b", opts.score_b, "perturbed lane JSON")->required();
  c_score->add_option("--out", opts.score_out, "write the JSON report here as well");
  CLI::App* c_abl = app.add_subcommand("ablate",
                                       "objectives x bit configs x seeds comparison table");

  for (CLI::App* sub : {c_gen, c_pre, c_cal, c_tune, c_eval, c_sens, c_score, c_abl})
    sub->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg.apply_file(config_path);
    CLI::App* sub = app.get_subcommands().front();
    // leftover --section.key=value tokens are config overrides
    for (const std::string& extra : sub->remaining()) {
      if (extra.rfind("--", 0) != 0)
        throw ConfigError("unexpected argument '" + extra + "' (overrides look like --section.key=value)");
      const std::string body = extra.substr(2);
      const size_t eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError("override '" + extra + "' is missing '=value'");
      cfg.apply_override(body.substr(0, eq), body.substr(eq + 1));
    }
    cfg.validate();

    if (sub == c_gen) return cmd_gen_data(cfg);
    if (sub == c_pre) return cmd_pretrain(cfg);
    if (sub == c_cal) return cmd_calibrate(cfg);
    if (sub == c_tune) return cmd_tune(cfg);
    if (sub == c_eval) return cmd_eval(cfg, opts.ckpt, opts.fp_only, opts.dump_lanes);
    if (sub == c_sens) return cmd_sensitivity(cfg);
    if (sub == c_score) return cmd_score(cfg, opts.score_a, opts.score_b, opts.score_out);
    if (sub == c_abl) return cmd_ablate(cfg);
    throw std::logic_error("unhandled subcommand");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
