#include "laneptq/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "laneptq/errors.hpp"
#include "laneptq/parallel.hpp"

using ordered_json = nlohmann::ordered_json;

namespace laneptq {

void SelectionConfig::validate() const {
  if (k < 1) throw std::invalid_argument("selection: k must be >= 1");
  if (refresh_interval < 1) throw std::invalid_argument("selection: refresh_interval must be >= 1");
  if (noise_levels.size() < 2 || noise_levels.front() != 0.0)
    throw std::invalid_argument("selection: noise levels must start at 0");
  for (size_t i = 1; i < noise_levels.size(); ++i) {
    if (noise_levels[i] <= noise_levels[i - 1])
      throw std::invalid_argument("selection: noise levels must be strictly increasing");
  }
  if (reruns < 1 || curve_images < 1)
    throw std::invalid_argument("selection: reruns and curve_images must be >= 1");
}

double tensor_std(const Tensor& t) {
  const int64_t n = t.size();
  if (n == 0) return 0.0;
  const double* p = t.data();
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += p[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
  return std::sqrt(var / static_cast<double>(n));
}

Tensor inject_noise(const Tensor& t, double sigma_rel, Rng& rng) {
  if (sigma_rel < 0.0) throw std::invalid_argument("inject_noise: sigma_rel must be >= 0");
  Tensor out = t.detached_copy();
  if (sigma_rel == 0.0) return out;
  const double sigma = sigma_rel * tensor_std(t);
  double* p = out.data();
  for (int64_t i = 0; i < out.size(); ++i) p[i] += rng.normal(0.0, sigma);
  return out;
}

namespace {

uint64_t head_key(const std::string& head_id) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : head_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

struct FpCache {
  HeadOutput heads;
  std::vector<Lane> lanes;
};

std::vector<FpCache> cache_fp(const LaneNet& net, const std::vector<Tensor>& images,
                              const DecodeConfig& dcfg, int threads) {
  std::vector<FpCache> cache(images.size());
  parallel_for(static_cast<int>(images.size()), threads, [&](int i) {
    Graph g(false);
    cache[static_cast<size_t>(i)].heads = net.forward(g, images[static_cast<size_t>(i)]);
    cache[static_cast<size_t>(i)].lanes = decode(cache[static_cast<size_t>(i)].heads, dcfg);
  });
  return cache;
}

NoiseScoreCurve curve_from_cache(const std::vector<FpCache>& cache, const std::string& head_id,
                                 const SelectionConfig& cfg, const DecodeConfig& dcfg,
                                 const DistortionConfig& scfg, int threads) {
  NoiseScoreCurve curve;
  curve.head_id = head_id;
  curve.reruns = cfg.reruns;
  curve.images = static_cast<int>(cache.size());
  const uint64_t hkey = head_key(head_id);

  std::vector<double> image_sums(cache.size() * cfg.noise_levels.size(), 0.0);
  parallel_for(static_cast<int>(cache.size()), threads, [&](int img) {
    const FpCache& fc = cache[static_cast<size_t>(img)];
    for (size_t lvl = 1; lvl < cfg.noise_levels.size(); ++lvl) {
      const double sigma = cfg.noise_levels[lvl];
      double total = 0.0;
      for (int rerun = 0; rerun < cfg.reruns; ++rerun) {
        Rng rng = Rng::derive(cfg.seed, {hkey, static_cast<uint64_t>(img),
                                         static_cast<uint64_t>(lvl), static_cast<uint64_t>(rerun)});
        Tensor noised = inject_noise(fc.heads.head(head_id), sigma, rng);
        std::vector<Lane> lanes = decode_with_replaced_head(fc.heads, head_id, noised, dcfg);
        total += lane_distortion_score(fc.lanes, lanes, scfg);
      }
      image_sums[static_cast<size_t>(img) * cfg.noise_levels.size() + lvl] = total;
    }
  });

  curve.nodes.emplace_back(0.0, 0.0);  // the unperturbed origin is exact
  const double denom = static_cast<double>(cache.size()) * static_cast<double>(cfg.reruns);
  for (size_t lvl = 1; lvl < cfg.noise_levels.size(); ++lvl) {
    double total = 0.0;
    for (size_t img = 0; img < cache.size(); ++img)
      total += image_sums[img * cfg.noise_levels.size() + lvl];
    curve.nodes.emplace_back(cfg.noise_levels[lvl], total / denom);
  }
  return curve;
}

}  // namespace

NoiseScoreCurve build_curve(const LaneNet& net, const std::vector<Tensor>& images,
                            const std::string& head_id, const SelectionConfig& cfg,
                            const DecodeConfig& dcfg, const DistortionConfig& scfg, int threads) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("build_curve: no images");
  auto cache = cache_fp(net, images, dcfg, threads);
  return curve_from_cache(cache, head_id, cfg, dcfg, scfg, threads);
}

std::vector<NoiseScoreCurve> build_curves(const LaneNet& net, const std::vector<Tensor>& images,
                                          const std::vector<std::string>& head_ids,
                                          const SelectionConfig& cfg, const DecodeConfig& dcfg,
                                          const DistortionConfig& scfg, int threads) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("build_curves: no images");
  auto cache = cache_fp(net, images, dcfg, threads);
  std::vector<NoiseScoreCurve> curves;
  curves.reserve(head_ids.size());
  for (const auto& id : head_ids)
    curves.push_back(curve_from_cache(cache, id, cfg, dcfg, scfg, threads));
  return curves;
}

double query_curve(const NoiseScoreCurve& curve, double sigma_rel) {
  if (curve.nodes.size() < 2) throw std::invalid_argument("query_curve: need >= 2 nodes");
  if (sigma_rel < curve.nodes.front().first) return 0.0;
  if (sigma_rel >= curve.nodes.back().first) return curve.nodes.back().second;
  for (size_t i = 1; i < curve.nodes.size(); ++i) {
    if (sigma_rel <= curve.nodes[i].first) {
      const auto& [x0, y0] = curve.nodes[i - 1];
      const auto& [x1, y1] = curve.nodes[i];
      const double t = (sigma_rel - x0) / (x1 - x0);
      return y0 + t * (y1 - y0);
    }
  }
  return curve.nodes.back().second;
}

double head_noise_level(const std::vector<HeadOutput>& fp_heads,
                        const std::vector<HeadOutput>& quant_heads, const std::string& head_id) {
  if (fp_heads.size() != quant_heads.size() || fp_heads.empty())
    throw std::invalid_argument("head_noise_level: batch size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < fp_heads.size(); ++i) {
    const Tensor& fp = fp_heads[i].head(head_id);
    const Tensor& q = quant_heads[i].head(head_id);
    if (!fp.same_shape(q)) throw std::invalid_argument("head_noise_level: shape mismatch");
    double se = 0.0;
    for (int64_t j = 0; j < fp.size(); ++j) {
      const double d = q.data()[j] - fp.data()[j];
      se += d * d;
    }
    const double rms = std::sqrt(se / static_cast<double>(fp.size()));
    total += rms / std::max(tensor_std(fp), 1e-12);
  }
  return total / static_cast<double>(fp_heads.size());
}

namespace {

std::vector<std::string> rank_heads(std::vector<std::pair<std::string, double>> scored, int k) {
  const auto& order = semantic_head_ids();
  auto rank_of = [&](const std::string& id) {
    return std::find(order.begin(), order.end(), id) - order.begin();
  };
  std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return rank_of(a.first) < rank_of(b.first);
  });
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<size_t>(i)].first);
  return out;
}

}  // namespace

std::vector<std::string> select_heads(const std::vector<HeadOutput>& fp_heads,
                                      const std::vector<HeadOutput>& quant_heads,
                                      const std::vector<NoiseScoreCurve>& curves, int k) {
  const auto& heads = semantic_head_ids();
  if (k < 1 || k > static_cast<int>(heads.size()))
    throw std::invalid_argument("select_heads: k out of range");
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& id : heads) {
    const NoiseScoreCurve* curve = nullptr;
    for (const auto& c : curves) {
      if (c.head_id == id) {
        curve = &c;
        break;
      }
    }
    if (!curve) throw std::invalid_argument("select_heads: missing curve for head '" + id + "'");
    const double sigma = head_noise_level(fp_heads, quant_heads, id);
    scored.emplace_back(id, query_curve(*curve, sigma));
  }
  return rank_heads(std::move(scored), k);
}

std::vector<std::pair<std::string, double>> direct_head_scores(
    const std::vector<HeadOutput>& fp_heads, const std::vector<HeadOutput>& quant_heads,
    const DecodeConfig& dcfg, const DistortionConfig& scfg) {
  if (fp_heads.size() != quant_heads.size() || fp_heads.empty())
    throw std::invalid_argument("direct_head_scores: batch size mismatch");
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& id : semantic_head_ids()) scored.emplace_back(id, 0.0);
  for (size_t i = 0; i < fp_heads.size(); ++i) {
    const std::vector<Lane> fp_lanes = decode(fp_heads[i], dcfg);
    for (auto& [id, score] : scored) {
      const std::vector<Lane> perturbed =
          decode_with_replaced_head(fp_heads[i], id, quant_heads[i].head(id), dcfg);
      score += lane_distortion_score(fp_lanes, perturbed, scfg);
    }
  }
  return scored;
}

std::vector<std::string> select_heads_direct(const std::vector<HeadOutput>& fp_heads,
                                             const std::vector<HeadOutput>& quant_heads, int k,
                                             const DecodeConfig& dcfg,
                                             const DistortionConfig& scfg) {
  const auto& heads = semantic_head_ids();
  if (k < 1 || k > static_cast<int>(heads.size()))
    throw std::invalid_argument("select_heads_direct: k out of range");
  return rank_heads(direct_head_scores(fp_heads, quant_heads, dcfg, scfg), k);
}

std::vector<std::string> select_heads_direct(const LaneNet& net, const QuantTable& quant,
                                             const std::vector<Tensor>& images, int k,
                                             const DecodeConfig& dcfg,
                                             const DistortionConfig& scfg) {
  std::vector<HeadOutput> fp(images.size()), q(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    Graph g(false);
    fp[i] = net.forward(g, images[i]);
    Graph gq(false);
    q[i] = net.forward(gq, images[i], &quant);
  }
  return select_heads_direct(fp, q, k, dcfg, scfg);
}

// ---------------------------------------------------------------------------
// serialization

std::string curves_to_json(const std::vector<NoiseScoreCurve>& curves, uint64_t config_hash,
                           uint64_t seed) {
  ordered_json root;
  root["config_hash"] = config_hash;
  root["seed"] = seed;
  ordered_json arr = ordered_json::array();
  for (const auto& c : curves) {
    ordered_json nodes = ordered_json::array();
    for (const auto& [sigma, mean] : c.nodes) nodes.push_back({sigma, mean});
    arr.push_back(ordered_json{
        {"head_id", c.head_id}, {"nodes", nodes}, {"reruns", c.reruns}, {"images", c.images}});
  }
  root["curves"] = std::move(arr);
  return root.dump(2) + "\n";
}

std::vector<NoiseScoreCurve> curves_from_json(const std::string& text) {
  ordered_json root = ordered_json::parse(text);
  std::vector<NoiseScoreCurve> curves;
  for (const auto& cj : root.at("curves")) {
    NoiseScoreCurve c;
    c.head_id = cj.at("head_id");
    c.reruns = cj.at("reruns");
    c.images = cj.at("images");
    for (const auto& nj : cj.at("nodes")) c.nodes.emplace_back(nj.at(0), nj.at(1));
    curves.push_back(std::move(c));
  }
  return curves;
}

void save_curves(const std::string& path, const std::vector<NoiseScoreCurve>& curves,
                 uint64_t config_hash, uint64_t seed) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write curves to " + path);
  os << curves_to_json(curves, config_hash, seed);
}

std::vector<NoiseScoreCurve> load_curves(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("missing curves file: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return curves_from_json(text);
}

}  // namespace laneptq
