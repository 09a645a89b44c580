#include "fpml/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fpml/errors.hpp"

namespace fpml {

namespace fs = std::filesystem;

std::string to_string(EvalMode m) { return m == EvalMode::inductive ? "inductive" : "transductive"; }

void EvalConfig::validate() const {
  if (tasks < 1) throw ConfigError("eval.tasks must be >= 1");
  if (n_way < 2) throw ConfigError("eval.n_way must be >= 2");
  if (k_shot < 1) throw ConfigError("eval.k_shot must be >= 1");
  if (m_query < 1) throw ConfigError("eval.m_query must be >= 1");
  if (image_size < 1) throw ConfigError("data.image_size must be >= 1");
  if (!(head.l2 >= 0)) throw ConfigError("eval.l2 must be >= 0");
  if (!(min_confidence >= 0 && min_confidence <= 1)) {
    throw ConfigError("eval.min_confidence must lie in [0,1]");
  }
}

Embedder backbone_embedder(const EmbeddingParams& theta) {
  return [net = Backbone(theta.arch), &theta](const std::vector<const Image*>& imgs) {
    return net.forward(theta, to_batch(imgs));
  };
}

Episode sample_eval_episode(const Dataset& dataset, const EvalConfig& config, int index) {
  const std::initializer_list<std::uint64_t> ids = {static_cast<std::uint64_t>(index)};
  Rng rng = make_rng(config.seed, "eval-task", ids);
  Episode ep = sample_episode(dataset, config.n_way, config.k_shot, config.m_query, rng);
  for (auto* part : {&ep.support, &ep.query}) {
    for (auto& it : *part) {
      if (it.image.height != config.image_size || it.image.width != config.image_size) {
        it.image = resize_bilinear(it.image, config.image_size, config.image_size);
      }
    }
  }
  return ep;
}

namespace {

Tensor as_matrix(Tensor t) {
  t.c = t.c * t.h * t.w;
  t.h = t.w = 1;
  return t;
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& rows) {
  Tensor out = Tensor::matrix(static_cast<int>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

}  // namespace

double run_task(const Embedder& embed, const Dataset& dataset, const EvalConfig& config, int index,
                EvalMode mode, Expansion* expansion) {
  const Episode ep = sample_eval_episode(dataset, config, index);
  std::vector<const Image*> imgs;
  for (const auto& it : ep.support) imgs.push_back(&it.image);
  for (const auto& it : ep.query) imgs.push_back(&it.image);
  const Tensor feats = as_matrix(embed(imgs));
  if (feats.rows() != static_cast<int>(imgs.size())) {
    throw ShapeError("embedder returned " + std::to_string(feats.rows()) + " rows for " +
                     std::to_string(imgs.size()) + " images");
  }
  const int support = static_cast<int>(ep.support.size());
  const int queries = static_cast<int>(ep.query.size());
  std::vector<int> support_rows(support), query_rows(queries);
  std::iota(support_rows.begin(), support_rows.end(), 0);
  std::iota(query_rows.begin(), query_rows.end(), support);
  std::vector<int> labels;
  for (const auto& it : ep.support) labels.push_back(it.label);

  const Tensor query_feats = gather_rows(feats, query_rows);
  LogisticHead head;
  head.fit(gather_rows(feats, support_rows), labels, ep.n_way, config.head);
  auto scores = head.predict(query_feats);

  if (mode == EvalMode::transductive) {
    Expansion ex;
    for (const auto& it : ep.support) ex.original_support.push_back(it.ref);
    ex.expanded_support = ex.original_support;
    const int top = config.selected_per_class();
    for (int c = 0; c < ep.n_way; ++c) {
      std::vector<std::pair<double, int>> cand;
      for (int q = 0; q < queries; ++q) {
        const double conf = scores[q].probs[c];
        if (scores[q].argmax() == c && conf >= config.min_confidence) cand.push_back({-conf, q});
      }
      std::sort(cand.begin(), cand.end());
      for (int i = 0; i < std::min<int>(top, static_cast<int>(cand.size())); ++i) {
        const int q = cand[i].second;
        ex.selected_queries.push_back(q);
        ex.pseudo_labels.push_back(c);
        ex.true_labels.push_back(ep.query[q].label);
        ex.expanded_support.push_back(ep.query[q].ref);
      }
    }
    if (!ex.selected_queries.empty()) {
      std::vector<int> rows = support_rows;
      std::vector<int> expanded_labels = labels;
      for (std::size_t i = 0; i < ex.selected_queries.size(); ++i) {
        rows.push_back(support + ex.selected_queries[i]);
        expanded_labels.push_back(ex.pseudo_labels[i]);
      }
      LogisticHead refit;
      refit.fit(gather_rows(feats, rows), expanded_labels, ep.n_way, config.head);
      scores = refit.predict(query_feats);
    }
    if (expansion) *expansion = std::move(ex);
  }

  int correct = 0;
  for (int q = 0; q < queries; ++q) correct += scores[q].argmax() == ep.query[q].label ? 1 : 0;
  return static_cast<double>(correct) / queries;
}

void summarize(std::span<const double> acc, double& mean, double& ci95) {
  if (acc.empty()) throw InvalidInputError("summarize: no accuracies");
  const double n = static_cast<double>(acc.size());
  mean = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  var /= n;
  ci95 = 1.96 * std::sqrt(var) / std::sqrt(n);
}

EvalReport evaluate(const Embedder& embed, const Dataset& dataset, const EvalConfig& config,
                    EvalMode mode, std::vector<Expansion>* expansions) {
  config.validate();
  dataset.validate_for(config.n_way, config.k_shot, config.m_query);
  EvalReport r;
  r.n_way = config.n_way;
  r.k_shot = config.k_shot;
  r.m_query = config.m_query;
  r.domain = dataset.domain;
  r.mode = mode;
  if (expansions) expansions->clear();
  for (int t = 0; t < config.tasks; ++t) {
    const auto start = std::chrono::steady_clock::now();
    Expansion ex;
    r.per_task_accuracy.push_back(run_task(embed, dataset, config, t, mode, expansions ? &ex : nullptr));
    r.wall_clock_per_task.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (expansions) expansions->push_back(std::move(ex));
  }
  summarize(r.per_task_accuracy, r.mean, r.ci95);
  return r;
}

EvalReport meta_test(const EmbeddingParams& theta, const Dataset& dataset, const EvalConfig& config) {
  return evaluate(backbone_embedder(theta), dataset, config, EvalMode::inductive);
}

EvalReport transductive_meta_test(const EmbeddingParams& theta, const Dataset& dataset,
                                  const EvalConfig& config, std::vector<Expansion>* expansions) {
  return evaluate(backbone_embedder(theta), dataset, config, EvalMode::transductive, expansions);
}

double domain_gap(const Tensor& a, const Tensor& b) {
  const Tensor ma = as_matrix(a), mb = as_matrix(b);
  if (ma.rows() == 0 || mb.rows() == 0) throw InvalidInputError("domain_gap: empty feature set");
  if (ma.cols() != mb.cols()) {
    throw ShapeError("domain_gap: dims " + std::to_string(ma.cols()) + " vs " +
                     std::to_string(mb.cols()));
  }
  double s = 0.0;
  for (int j = 0; j < ma.cols(); ++j) {
    double ua = 0.0, ub = 0.0;
    for (int i = 0; i < ma.rows(); ++i) ua += ma(i, j);
    for (int i = 0; i < mb.rows(); ++i) ub += mb(i, j);
    const double d = ua / ma.rows() - ub / mb.rows();
    s += d * d;
  }
  return std::sqrt(s);
}

Image feature_highlight(const EmbeddingParams& theta, const Image& image) {
  const Backbone net(theta.arch);
  const Tensor s = net.spatial_features(theta, to_batch({&image}));
  if (s.h < 1 || s.w < 1) throw UnsupportedError("feature_highlight: backbone has no spatial map");
  std::vector<double> map(static_cast<std::size_t>(s.h) * s.w, 0.0);
  for (int c = 0; c < s.c; ++c) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) map[y * s.w + x] += s.at(0, c, y, x) / s.c;
    }
  }
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double mn = *lo, range = *hi - *lo;
  for (auto& v : map) v = range > 0 ? (v - mn) / range : 0.0;
  Image out;
  out.channels = 1;
  out.height = image.height;
  out.width = image.width;
  out.pixels = resize_plane_bilinear(map, s.h, s.w, image.height, image.width);
  return out;
}

void write_report(const EvalReport& r, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open report '" + path.string() + "'");
  out.precision(17);
  out << "# evaluation report\n";
  out << "mode: " << to_string(r.mode) << "\n";
  out << "domain: " << r.domain << "\n";
  out << "n_way: " << r.n_way << "\nk_shot: " << r.k_shot << "\nm_query: " << r.m_query << "\n";
  out << "tasks: " << r.per_task_accuracy.size() << "\n";
  out << "[tasks]\n";
  for (std::size_t i = 0; i < r.per_task_accuracy.size(); ++i) {
    out << i << " " << r.per_task_accuracy[i] << "\n";
  }
  out << "[summary]\n";
  out << "mean: " << r.mean << "\nci95: " << r.ci95 << "\n";
  char pct[64];
  std::snprintf(pct, sizeof pct, "%.2f +- %.2f", 100.0 * r.mean, 100.0 * r.ci95);
  out << "accuracy_percent: " << pct << "\n";
}

EvalReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report '" + path.string() + "'");
  EvalReport r;
  std::string line, section;
  auto value = [](const std::string& l) { return l.substr(l.find(':') + 2); };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') {
      section = line;
      continue;
    }
    if (section == "[tasks]") {
      std::istringstream is(line);
      std::size_t idx;
      double acc;
      if (!(is >> idx >> acc)) throw FormatError("bad task line: " + line);
      r.per_task_accuracy.push_back(acc);
      continue;
    }
    const std::string key = line.substr(0, line.find(':'));
    if (key == "mode") r.mode = value(line) == "transductive" ? EvalMode::transductive : EvalMode::inductive;
    else if (key == "domain") r.domain = value(line);
    else if (key == "n_way") r.n_way = std::stoi(value(line));
    else if (key == "k_shot") r.k_shot = std::stoi(value(line));
    else if (key == "m_query") r.m_query = std::stoi(value(line));
    else if (key == "mean") r.mean = std::stod(value(line));
    else if (key == "ci95") r.ci95 = std::stod(value(line));
  }
  return r;
}

}  // namespace fpml
