#include "laneptq/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "laneptq/errors.hpp"
#include "laneptq/parallel.hpp"
#include "laneptq/rng.hpp"

namespace laneptq {

const std::vector<std::string>& semantic_head_ids() {
  static const std::vector<std::string> ids = {"local_off", "root_off"};
  return ids;
}

HeadRole head_role(const std::string& head_id) {
  if (head_id == "conf") return HeadRole::confidence;
  if (head_id == "local_off" || head_id == "root_off") return HeadRole::semantic;
  throw std::invalid_argument("unknown head id '" + head_id + "'");
}

const Tensor& HeadOutput::head(const std::string& head_id) const {
  if (head_id == "conf") return conf;
  if (head_id == "local_off") return local_off;
  if (head_id == "root_off") return root_off;
  throw std::invalid_argument("unknown head id '" + head_id + "'");
}

void HeadOutput::set_head(const std::string& head_id, Tensor t) {
  if (head_id == "conf") {
    if (!t.same_shape(conf)) throw std::invalid_argument("set_head: shape mismatch for conf");
    conf = std::move(t);
  } else if (head_id == "local_off") {
    if (!t.same_shape(local_off)) throw std::invalid_argument("set_head: shape mismatch for local_off");
    local_off = std::move(t);
  } else if (head_id == "root_off") {
    if (!t.same_shape(root_off)) throw std::invalid_argument("set_head: shape mismatch for root_off");
    root_off = std::move(t);
  } else {
    throw std::invalid_argument("unknown head id '" + head_id + "'");
  }
}

HeadOutput HeadOutput::detached() const {
  HeadOutput out;
  out.conf = conf.detached_copy();
  out.conf_logits = conf_logits.detached_copy();
  out.local_off = local_off.detached_copy();
  out.root_off = root_off.detached_copy();
  return out;
}

namespace {

Tensor he_init(std::vector<int> shape, Rng& rng) {
  int fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

LaneNet LaneNet::init(uint64_t seed) {
  Rng rng = Rng::derive(seed, {0x6d6f64656cULL});
  LaneNet net;
  net.conv1_w = he_init({8, 1, 3, 3}, rng);
  net.conv1_b = Tensor::zeros({8}, true);
  net.conv2_w = he_init({16, 8, 3, 3}, rng);
  net.conv2_b = Tensor::zeros({16}, true);
  net.conv3_w = he_init({16, 16, 3, 3}, rng);
  net.conv3_b = Tensor::zeros({16}, true);
  net.conf_w = he_init({1, 16, 3, 3}, rng);
  net.conf_b = Tensor::full({1}, -2.0, true);  // background-heavy prior
  net.local_w = he_init({2, 16, 3, 3}, rng);
  net.local_b = Tensor::zeros({2}, true);
  net.root_w = he_init({2, 16, 3, 3}, rng);
  net.root_b = Tensor::zeros({2}, true);
  return net;
}

std::vector<Tensor> LaneNet::parameters() {
  return {conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b,
          conf_w,  conf_b,  local_w, local_b, root_w,  root_b};
}

std::vector<std::pair<std::string, Tensor>> LaneNet::named_parameters() const {
  return {{"conv1.w", conv1_w}, {"conv1.b", conv1_b}, {"conv2.w", conv2_w}, {"conv2.b", conv2_b},
          {"conv3.w", conv3_w}, {"conv3.b", conv3_b}, {"conf.w", conf_w},   {"conf.b", conf_b},
          {"local.w", local_w}, {"local.b", local_b}, {"root.w", root_w},   {"root.b", root_b}};
}

std::vector<std::string> LaneNet::quantized_weight_names() {
  return {"conv1.w", "conv2.w", "conv3.w", "conf.w", "local.w", "root.w"};
}

std::vector<std::string> LaneNet::quantized_activation_names() {
  return {"act.relu1", "act.relu2", "act.relu3", "act.conf"};
}

LaneNet LaneNet::clone() const {
  LaneNet net;
  net.conv1_w = conv1_w.clone();
  net.conv1_b = conv1_b.clone();
  net.conv2_w = conv2_w.clone();
  net.conv2_b = conv2_b.clone();
  net.conv3_w = conv3_w.clone();
  net.conv3_b = conv3_b.clone();
  net.conf_w = conf_w.clone();
  net.conf_b = conf_b.clone();
  net.local_w = local_w.clone();
  net.local_b = local_b.clone();
  net.root_w = root_w.clone();
  net.root_b = root_b.clone();
  return net;
}

Checkpoint LaneNet::to_checkpoint(const QuantTable& qt, uint64_t config_hash, uint64_t seed) const {
  Checkpoint ckpt;
  for (const auto& [name, t] : named_parameters()) ckpt.tensors.emplace(name, t.detached_copy());
  ckpt.quant = qt;
  ckpt.config_hash = config_hash;
  ckpt.seed = seed;
  return ckpt;
}

LaneNet LaneNet::from_checkpoint(const Checkpoint& ckpt) {
  LaneNet net = LaneNet::init(0);
  for (auto& [name, param] : net.named_parameters()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (!(it->second.same_shape(param)))
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_str(it->second.shape()) + ", expected " +
                               shape_str(param.shape()));
    std::copy(it->second.data(), it->second.data() + it->second.size(), param.data());
  }
  return net;
}

namespace {

// Applies the table entry when present; otherwise passes through.
Tensor maybe_quant(Graph& g, const Tensor& t, const QuantTable* quant, const char* name) {
  if (!quant) return t;
  auto it = quant->find(name);
  if (it == quant->end()) return t;
  return fake_quantize(g, t, it->second);
}

}  // namespace

HeadOutput LaneNet::forward(Graph& g, const Tensor& image, const QuantTable* quant) const {
  return forward_observed(g, image, quant, nullptr);
}

HeadOutput LaneNet::forward_observed(Graph& g, const Tensor& image, const QuantTable* quant,
                                     const ActivationObserver& observer) const {
  if (image.shape() != std::vector<int>{1, kInput, kInput}) {
    throw std::invalid_argument("forward: image must be [1,64,64], got " +
                                shape_str(image.shape()));
  }
  auto observed = [&](Tensor t, const char* name) {
    if (observer) observer(name, t);
    return maybe_quant(g, t, quant, name);
  };
  Tensor h1 = observed(
      g.relu(g.conv2d(image, maybe_quant(g, conv1_w, quant, "conv1.w"), conv1_b, 1)), "act.relu1");
  Tensor h2 = observed(
      g.relu(g.conv2d(h1, maybe_quant(g, conv2_w, quant, "conv2.w"), conv2_b, 2)), "act.relu2");
  Tensor h3 = observed(
      g.relu(g.conv2d(h2, maybe_quant(g, conv3_w, quant, "conv3.w"), conv3_b, 2)), "act.relu3");

  HeadOutput out;
  out.conf_logits = g.conv2d(h3, maybe_quant(g, conf_w, quant, "conf.w"), conf_b, 1);
  out.conf = observed(g.sigmoid(out.conf_logits), "act.conf");
  out.local_off = g.conv2d(h3, maybe_quant(g, local_w, quant, "local.w"), local_b, 1);
  out.root_off = g.conv2d(h3, maybe_quant(g, root_w, quant, "root.w"), root_b, 1);
  return out;
}

double batch_gradients(LaneNet& net, const std::vector<int>& indices, int threads,
                       const BatchLossFn& loss_fn) {
  const int n = static_cast<int>(indices.size());
  if (n == 0) return 0.0;
  std::vector<Tensor> params = net.parameters();

  std::vector<std::vector<std::vector<double>>> grads(static_cast<size_t>(n));
  std::vector<double> losses(static_cast<size_t>(n), 0.0);
  parallel_for(n, threads, [&](int i) {
    LaneNet worker = net.clone();
    Graph g;
    Tensor loss = loss_fn(g, worker, indices[static_cast<size_t>(i)]);
    g.backward(loss);
    losses[static_cast<size_t>(i)] = loss.item();
    auto wp = worker.parameters();
    auto& slot = grads[static_cast<size_t>(i)];
    slot.reserve(wp.size());
    for (auto& p : wp) slot.emplace_back(p.grad(), p.grad() + p.size());
  });

  // Ordered reduction: image index outer, parameter inner.
  for (int i = 0; i < n; ++i) {
    for (size_t k = 0; k < params.size(); ++k) {
      double* dst = params[k].grad();
      const auto& src = grads[static_cast<size_t>(i)][k];
      for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  }
  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  return mean_loss / static_cast<double>(n);
}

PretrainStats pretrain(LaneNet& net, const std::vector<PretrainSample>& data,
                       const PretrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (cfg.batch <= 0 || cfg.epochs < 0) throw std::invalid_argument("pretrain: bad config");

  Adam opt(net.parameters(), cfg.lr);
  Rng shuffle_rng = Rng::derive(cfg.seed, {0x70726574ULL});
  std::vector<int> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  PretrainStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<int> batch(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
      opt.zero_grad();
      const double mean_loss = batch_gradients(
          net, batch, cfg.threads, [&](Graph& g, const LaneNet& worker, int idx) {
            const PretrainSample& s = data[static_cast<size_t>(idx)];
            HeadOutput heads = worker.forward(g, s.image);
            Tensor conf_loss = g.bce_with_logits(heads.conf_logits, s.conf_mask);
            Tensor local_err = g.mul(s.conf_mask, g.sub(heads.local_off, s.local_t));
            Tensor root_err = g.mul(s.conf_mask, g.sub(heads.root_off, s.root_t));
            return g.add(conf_loss, g.add(g.sum_squares(local_err), g.sum_squares(root_err)));
          });
      if (!std::isfinite(mean_loss)) {
        throw NumericError("pretrain diverged at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(stats.steps) + ": loss " + std::to_string(mean_loss));
      }
      // grads hold batch sums; scale to the batch mean before the step
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& p : net.parameters()) {
        double* gp = p.grad();
        for (int64_t i = 0; i < p.size(); ++i) gp[i] *= inv;
      }
      opt.step();
      ++stats.steps;
      epoch_loss += mean_loss;
      ++batches;
    }
    stats.final_epoch_loss = epoch_loss / std::max(1, batches);
  }
  return stats;
}

}  // namespace laneptq
