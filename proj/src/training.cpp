#include "fpml/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "fpml/errors.hpp"

namespace fpml {

void TrainConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v < 1) throw ConfigError(std::string(key) + " must be >= 1");
  };
  positive(image_size, "data.image_size");
  positive(pretrain_epochs, "pretrain.epochs");
  positive(pretrain_batch_size, "pretrain.batch_size");
  positive(meta_epochs, "meta.epochs");
  positive(episodes_per_epoch, "meta.episodes_per_epoch");
  positive(n_way, "meta.n_way");
  positive(k_shot, "meta.k_shot");
  positive(m_query, "meta.m_query");
  if (!(learning_rate > 0)) throw ConfigError("meta.learning_rate must be > 0");
  if (!(pretrain_learning_rate > 0)) throw ConfigError("pretrain.learning_rate must be > 0");
  if (!(m1 >= 0 && m1 <= 1)) throw ConfigError("meta.m1 must lie in [0,1]");
  if (!(m2 >= 0 && m2 <= 1)) throw ConfigError("meta.m2 must lie in [0,1]");
  if (!(decomposition.cutoff >= 0 && decomposition.cutoff <= 1)) {
    throw ConfigError("decomposition.cutoff must lie in [0,1]");
  }
  if (decomposition.levels < 1) throw ConfigError("decomposition.levels must be >= 1");
  if (decomposition.method == freq::Method::haar && (1 << decomposition.levels) > image_size) {
    throw ConfigError("decomposition.levels too deep for data.image_size");
  }
  if (weights.ce < 0 || weights.align < 0 || weights.recon < 0) {
    throw ConfigError("losses weights must be >= 0");
  }
  if (!(divergence_threshold > 0)) throw ConfigError("meta.divergence_threshold must be > 0");
  try {
    augment.validate();
  } catch (const RangeError& e) {
    throw ConfigError(std::string("augment: ") + e.what());
  }
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::vector<double>*> trainable(BranchSet& b) {
  std::vector<std::vector<double>*> out;
  for (auto& p : b.theta.params) out.push_back(&p.values);
  out.push_back(&b.eta.weight);
  out.push_back(&b.eta.bias);
  return out;
}

std::vector<const std::vector<double>*> trainable_grads(const ParamGrads& theta,
                                                        const ProjectorGrads& eta) {
  std::vector<const std::vector<double>*> out;
  for (const auto& g : theta) out.push_back(&g);
  out.push_back(&eta.weight);
  out.push_back(&eta.bias);
  return out;
}

void check_episode(const Episode& ep, const TrainConfig& cfg) {
  if (ep.n_way != cfg.n_way || ep.k_shot != cfg.k_shot || ep.m_query != cfg.m_query ||
      ep.support.size() != static_cast<std::size_t>(ep.n_way * ep.k_shot) ||
      ep.query.size() != static_cast<std::size_t>(ep.n_way * ep.m_query)) {
    throw ShapeError("episode " + std::to_string(ep.n_way) + "-way " + std::to_string(ep.k_shot) +
                     "-shot " + std::to_string(ep.m_query) + "-query does not match config " +
                     std::to_string(cfg.n_way) + "/" + std::to_string(cfg.k_shot) + "/" +
                     std::to_string(cfg.m_query));
  }
}

std::vector<int> support_labels(const Episode& ep) {
  std::vector<int> l;
  for (const auto& it : ep.support) l.push_back(it.label);
  return l;
}

Tensor rows(const Tensor& m, int begin, int end) {
  Tensor out = Tensor::matrix(end - begin, m.cols());
  std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin) * m.cols(),
            m.data.begin() + static_cast<std::ptrdiff_t>(end) * m.cols(), out.data.begin());
  return out;
}

// Prototype head of one branch: prototypes from the first `support` rows,
// predictions for the rest.
struct BranchHead {
  Prototypes protos;
  std::vector<PredictionScores> scores;
};

BranchHead prototype_head(const Tensor& features, const std::vector<int>& labels, int n_way,
                          Distance metric) {
  const int support = static_cast<int>(labels.size());
  BranchHead h;
  h.protos = compute_prototypes(rows(features, 0, support), labels, n_way);
  for (int r = support; r < features.rows(); ++r) {
    h.scores.push_back(proto_predict(features.row(r), h.protos, metric));
  }
  return h;
}

// Adds d(loss)/d(features) for the main branch given d(loss)/d(probs) per
// query. Logits are negative distances to prototypes built from support rows.
void backprop_prototype_head(const Tensor& features, const std::vector<int>& labels,
                             const BranchHead& head, const std::vector<std::vector<double>>& dprobs,
                             Distance metric, Tensor& dfeatures) {
  const int support = static_cast<int>(labels.size());
  const int dim = features.cols();
  const int n_way = head.protos.n_way;
  Tensor dprotos = Tensor::matrix(n_way, dim);
  for (std::size_t q = 0; q < dprobs.size(); ++q) {
    const int r = support + static_cast<int>(q);
    const auto dlogits = softmax_backward(head.scores[q], dprobs[q]);
    const auto f = features.row(r);
    const auto dist = prototype_distances(f, head.protos, metric);
    for (int n = 0; n < n_way; ++n) {
      const double ddist = -dlogits[n];
      if (ddist == 0.0) continue;
      double scale = 0.0;
      if (metric == Distance::euclidean) {
        if (dist[n] > 0.0) scale = ddist / dist[n];
      } else {
        scale = 2.0 * ddist;
      }
      auto c = head.protos.vectors.row(n);
      for (int j = 0; j < dim; ++j) {
        const double g = scale * (f[j] - c[j]);
        dfeatures(r, j) += g;
        dprotos(n, j) -= g;
      }
    }
  }
  std::vector<int> counts(n_way, 0);
  for (int l : labels) ++counts[l];
  for (int s = 0; s < support; ++s) {
    const double inv = 1.0 / counts[labels[s]];
    for (int j = 0; j < dim; ++j) dfeatures(s, j) += dprotos(labels[s], j) * inv;
  }
}

std::vector<const Image*> episode_images(const Episode& ep) {
  std::vector<const Image*> imgs;
  for (const auto& it : ep.support) imgs.push_back(&it.image);
  for (const auto& it : ep.query) imgs.push_back(&it.image);
  return imgs;
}

void record_step(TrainState& state, const LossBreakdown& loss) {
  ++state.step;
  StepRecord rec;
  rec.step = state.step;
  rec.epoch = state.epoch;
  rec.loss = loss;
  state.history.push_back(rec);
}

void guard_divergence(const TrainState& state, const LossBreakdown& loss, const TrainConfig& cfg,
                      const Episode& ep) {
  if (std::isfinite(loss.total) && loss.total <= cfg.divergence_threshold) return;
  std::ostringstream os;
  os << "meta-training diverged at step " << state.step + 1 << " (epoch " << state.epoch
     << "): ce=" << loss.ce << " align=" << loss.align << " recon=" << loss.recon
     << " total=" << loss.total << " threshold=" << cfg.divergence_threshold
     << "; theta finite=" << (state.branches.theta.all_finite() ? "yes" : "no")
     << "; lr=" << cfg.learning_rate << "; classes=[";
  for (std::size_t i = 0; i < ep.class_map.size(); ++i) os << (i ? "," : "") << ep.class_map[i];
  os << "]";
  throw DivergenceError(os.str());
}

}  // namespace

PretrainResult pretrain(const Dataset& dataset, const TrainConfig& config,
                        const std::function<void(int, double)>& on_epoch) {
  config.validate();
  if (dataset.num_classes() < 2) {
    throw DegenerateTaskError("pretrain: dataset '" + dataset.name + "' has a single class");
  }
  const Backbone net(config.arch);
  Rng init_rng = make_rng(config.seed, "backbone-init");
  PretrainResult result;
  result.backbone = init_embedding(config.arch, init_rng);
  Rng head_rng = make_rng(config.seed, "pretrain-head");
  Projector head = Projector::random(config.arch.feature_dim(), dataset.num_classes(), head_rng);
  result.head_classes = head.out_dim;
  Optimizer opt(OptimizerKind::adam, config.pretrain_learning_rate);

  std::vector<SampleRef> all;
  for (int c = 0; c < dataset.num_classes(); ++c) {
    for (std::size_t i = 0; i < dataset.samples[c].size(); ++i) {
      all.push_back({c, static_cast<int>(i)});
    }
  }
  AugmentPolicy policy = config.augment;
  policy.height = policy.width = config.image_size;

  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    Rng shuffle = make_rng(config.seed, "pretrain-shuffle", {static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = all.size(); i > 1; --i) {
      std::swap(all[i - 1], all[uniform_index(shuffle, i)]);
    }
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < all.size();
         begin += static_cast<std::size_t>(config.pretrain_batch_size), ++batch_index) {
      const std::size_t end = std::min(all.size(), begin + config.pretrain_batch_size);
      Rng aug = make_rng(config.seed, "pretrain-augment",
                         {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch_index)});
      std::vector<Image> imgs;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        imgs.push_back(augment(dataset.samples[all[i].cls][all[i].index], policy, aug));
        labels.push_back(all[i].cls);
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : imgs) ptrs.push_back(&im);
      ForwardTrace trace;
      const Tensor feats = net.forward(result.backbone, to_batch(ptrs), &trace);
      const Tensor logits = project(head, feats);
      const int b = logits.rows();
      Tensor dlogits = Tensor::matrix(b, head.out_dim);
      for (int r = 0; r < b; ++r) {
        PredictionScores s;
        s.probs.assign(logits.row(r).begin(), logits.row(r).end());
        const double mx = *std::max_element(s.probs.begin(), s.probs.end());
        double z = 0.0;
        for (auto& v : s.probs) z += (v = std::exp(v - mx));
        for (auto& v : s.probs) v /= z;
        loss_sum += ce_loss(s, labels[r]);
        for (int c = 0; c < head.out_dim; ++c) {
          dlogits(r, c) = (s.probs[c] - (c == labels[r] ? 1.0 : 0.0)) / b;
        }
      }
      ProjectorGrads hg = ProjectorGrads::zeros(head);
      const Tensor dfeats = project_backward(head, feats, dlogits, hg, true);
      ParamGrads g = zero_grads(result.backbone);
      net.backward(result.backbone, trace, dfeats, g);

      std::vector<std::vector<double>*> params;
      for (auto& p : result.backbone.params) params.push_back(&p.values);
      params.push_back(&head.weight);
      params.push_back(&head.bias);
      opt.step(params, trainable_grads(g, hg));
    }
    const double mean_loss = loss_sum / static_cast<double>(all.size());
    if (!std::isfinite(mean_loss)) throw DivergenceError("pretrain: loss became non-finite");
    result.epoch_losses.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

BranchSet init_branches(const EmbeddingParams& pretrained, const TrainConfig& config) {
  if (!pretrained.all_finite()) throw InvalidInputError("init_branches: non-finite parameters");
  BranchSet b;
  b.theta = pretrained;
  b.phi = pretrained;
  b.varphi = pretrained;
  Rng rng = make_rng(config.seed, "projector-init");
  b.eta = Projector::random(pretrained.arch.feature_dim(), std::max(1, pretrained.arch.feature_dim() / 2), rng);
  b.m1 = config.m1;
  b.m2 = config.m2;
  return b;
}

TrainState make_train_state(BranchSet branches, const TrainConfig& config) {
  branches.validate();
  TrainState s;
  s.branches = std::move(branches);
  s.optimizer = Optimizer(config.optimizer, config.learning_rate);
  return s;
}

EpisodeGradients episode_gradients(const BranchSet& branches, const Episode& episode,
                                   const TrainConfig& config) {
  check_episode(episode, config);
  const Backbone net(branches.theta.arch);
  const auto images = episode_images(episode);
  const int total = static_cast<int>(images.size());
  const int queries = static_cast<int>(episode.query.size());
  const auto labels = support_labels(episode);

  // Decompose every image of the task.
  std::vector<Image> lows(total), highs(total);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < total; ++i) {
    auto pair = freq::decompose(*images[i], config.decomposition);
    lows[i] = std::move(pair.low);
    highs[i] = std::move(pair.high);
  }
  std::vector<const Image*> low_ptrs, high_ptrs;
  for (int i = 0; i < total; ++i) {
    low_ptrs.push_back(&lows[i]);
    high_ptrs.push_back(&highs[i]);
  }

  ForwardTrace trace;
  const Tensor feats = net.forward(branches.theta, to_batch(images), &trace);
  const Tensor feats_low = net.forward(branches.phi, to_batch(low_ptrs));
  const Tensor feats_high = net.forward(branches.varphi, to_batch(high_ptrs));

  const Tensor z = project(branches.eta, feats);
  const Tensor z_low = project(branches.eta, feats_low);
  const Tensor z_high = project(branches.eta, feats_high);

  const BranchHead main = prototype_head(feats, labels, episode.n_way, config.distance);
  const BranchHead low = prototype_head(feats_low, labels, episode.n_way, config.distance);
  const BranchHead high = prototype_head(feats_high, labels, episode.n_way, config.distance);

  PerSampleTerms terms;
  for (int i = 0; i < total; ++i) terms.recon.push_back(recon_loss(z.row(i), z_low.row(i), z_high.row(i)));
  for (int q = 0; q < queries; ++q) {
    const int y = episode.query[q].label;
    terms.ce.push_back(ce_loss(main.scores[q], y));
    terms.align.push_back(kl_align(low.scores[q], high.scores[q], main.scores[q]));
  }

  EpisodeGradients out;
  out.loss = episode_loss(terms, episode, config.weights);
  out.main = main.scores;
  out.low = low.scores;
  out.high = high.scores;
  out.theta = zero_grads(branches.theta);
  out.eta = ProjectorGrads::zeros(branches.eta);

  const auto& w = config.weights;
  std::vector<std::vector<double>> dprobs(queries);
  for (int q = 0; q < queries; ++q) {
    const int y = episode.query[q].label;
    dprobs[q] = ce_loss_grad(main.scores[q], y);
    for (auto& v : dprobs[q]) v *= w.ce / queries;
    if (w.align != 0.0) {
      const auto ga = kl_align_grad(low.scores[q], high.scores[q], main.scores[q]);
      for (std::size_t n = 0; n < ga.size(); ++n) dprobs[q][n] += ga[n] * (w.align / queries);
    }
  }
  Tensor dfeats = Tensor::matrix(total, feats.cols());
  backprop_prototype_head(feats, labels, main, dprobs, config.distance, dfeats);

  if (w.recon != 0.0) {
    const int dl = z.cols();
    Tensor dz = Tensor::matrix(total, dl), dz_low = Tensor::matrix(total, dl),
           dz_high = Tensor::matrix(total, dl);
    const double scale = w.recon / total;
    for (int i = 0; i < total; ++i) {
      const auto g = recon_loss_grad(z.row(i), z_low.row(i), z_high.row(i));
      for (int j = 0; j < dl; ++j) {
        dz(i, j) = scale * g.main[j];
        dz_low(i, j) = scale * g.low[j];
        dz_high(i, j) = scale * g.high[j];
      }
    }
    const Tensor df = project_backward(branches.eta, feats, dz, out.eta, true);
    for (std::size_t k = 0; k < df.data.size(); ++k) dfeats.data[k] += df.data[k];
    // Frequency features are constants: only the projector sees these paths.
    project_backward(branches.eta, feats_low, dz_low, out.eta, false);
    project_backward(branches.eta, feats_high, dz_high, out.eta, false);
  }

  net.backward(branches.theta, trace, dfeats, out.theta);
  return out;
}

LossBreakdown meta_train_step(TrainState& state, const Episode& episode, const TrainConfig& config) {
  auto grads = episode_gradients(state.branches, episode, config);
  guard_divergence(state, grads.loss, config, episode);
  state.optimizer.step(trainable(state.branches), trainable_grads(grads.theta, grads.eta));
  ema_update(state.branches.phi, state.branches.theta, state.branches.m1);
  ema_update(state.branches.varphi, state.branches.theta, state.branches.m2);
  record_step(state, grads.loss);
  return grads.loss;
}

LossBreakdown meta_baseline_step(TrainState& state, const Episode& episode,
                                 const TrainConfig& config) {
  check_episode(episode, config);
  const Backbone net(state.branches.theta.arch);
  const auto images = episode_images(episode);
  const int queries = static_cast<int>(episode.query.size());
  const auto labels = support_labels(episode);

  ForwardTrace trace;
  const Tensor feats = net.forward(state.branches.theta, to_batch(images), &trace);
  const BranchHead main = prototype_head(feats, labels, episode.n_way, config.distance);

  LossBreakdown loss;
  std::vector<std::vector<double>> dprobs(queries);
  for (int q = 0; q < queries; ++q) {
    const int y = episode.query[q].label;
    loss.ce += ce_loss(main.scores[q], y);
    dprobs[q] = ce_loss_grad(main.scores[q], y);
    for (auto& v : dprobs[q]) v *= config.weights.ce / queries;
  }
  loss.ce /= queries;
  loss.total = config.weights.ce * loss.ce;
  guard_divergence(state, loss, config, episode);

  Tensor dfeats = Tensor::matrix(feats.rows(), feats.cols());
  backprop_prototype_head(feats, labels, main, dprobs, config.distance, dfeats);
  ParamGrads g = zero_grads(state.branches.theta);
  net.backward(state.branches.theta, trace, dfeats, g);
  const ProjectorGrads eta_zero = ProjectorGrads::zeros(state.branches.eta);
  state.optimizer.step(trainable(state.branches), trainable_grads(g, eta_zero));
  record_step(state, loss);
  return loss;
}

Episode sample_training_episode(const Dataset& dataset, const TrainConfig& config, int epoch,
                                int index) {
  const std::initializer_list<std::uint64_t> ids = {static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(index)};
  Rng sampler = make_rng(config.seed, "meta-episode", ids);
  Rng aug = make_rng(config.seed, "meta-augment", ids);
  Episode ep = sample_episode(dataset, config.n_way, config.k_shot, config.m_query, sampler);
  AugmentPolicy policy = config.augment;
  policy.height = policy.width = config.image_size;
  augment_episode(ep, policy, aug);
  return ep;
}

void meta_train(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                const MetaTrainOptions& options) {
  config.validate();
  dataset.validate_for(config.n_way, config.k_shot, config.m_query);
  const auto start = Clock::now();
  for (int epoch = state.epoch; epoch < config.meta_epochs; ++epoch) {
    for (int i = 0; i < config.episodes_per_epoch; ++i) {
      const Episode ep = sample_training_episode(dataset, config, epoch, i);
      if (options.baseline) {
        meta_baseline_step(state, ep, config);
      } else {
        meta_train_step(state, ep, config);
      }
      state.history.back().wall_clock =
          std::chrono::duration<double>(Clock::now() - start).count();
      if (options.on_step) options.on_step(state.history.back());
    }
    state.epoch = epoch + 1;
    if (options.on_epoch_end) options.on_epoch_end(state);
  }
}

TrainState meta_train(const Dataset& dataset, const EmbeddingParams& pretrained,
                      const TrainConfig& config, const MetaTrainOptions& options) {
  TrainState state = make_train_state(init_branches(pretrained, config), config);
  meta_train(state, dataset, config, options);
  return state;
}

}  // namespace fpml
