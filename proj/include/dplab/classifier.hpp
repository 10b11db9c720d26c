#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dplab/dataset.hpp"
#include "dplab/dp_optim.hpp"
#include "dplab/engine.hpp"
#include "dplab/inception.hpp"

namespace dplab {

struct ClassifierConfig {
  std::size_t classes = 10;
  std::size_t conv1 = 16;
  std::size_t conv2 = 32;
  std::size_t hidden = 64;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double lr = 1e-3;
};

/// Two stride-2 convolutions and a dense head producing class logits.
struct Classifier {
  std::size_t side = 28;
  std::size_t classes = 10;
  Sequential net{Shape{1, 28, 28}};
  ParamSet params;

  static Sequential build(std::size_t side, const ClassifierConfig& c) {
    Sequential g({1, side, side});
    g.conv2d(c.conv1, 5, 2, 2, "classifier.conv1").leaky_relu(0.2, "classifier.act1")
        .conv2d(c.conv2, 5, 2, 2, "classifier.conv2").leaky_relu(0.2, "classifier.act2")
        .flatten("classifier.flatten").dense(c.hidden, "classifier.fc")
        .leaky_relu(0.2, "classifier.act3").dense(c.classes, "classifier.logits");
    return g;
  }

  /// Softmax class distributions, shape (n, classes).
  ClassifierOutput predict(const Tensor& images, std::size_t chunk = 256) const {
    const std::size_t n = images.batch();
    ClassifierOutput out{Tensor({n, classes})};
    for (std::size_t first = 0; first < n; first += chunk) {
      const std::size_t count = std::min(chunk, n - first);
      const Tensor logits = forward(net, params, images.rows(first, count));
      for (std::size_t i = 0; i < count; ++i)
        softmax(logits.data() + i * classes, out.probs.data() + (first + i) * classes, classes);
    }
    return out;
  }

  double accuracy(const LabeledImages& ds) const {
    const ClassifierOutput p = predict(ds.images);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto r = p.row(i);
      const auto k = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      hit += k == ds.labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(ds.size());
  }

  static void softmax(const double* z, double* p, std::size_t m) {
    const double mx = *std::max_element(z, z + m);
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += (p[k] = std::exp(z[k] - mx));
    for (std::size_t k = 0; k < m; ++k) p[k] /= s;
  }
};

struct ClassifierTrainResult {
  Classifier model;
  double validation_accuracy = 0.0;
  std::vector<double> epoch_losses;  ///< mean training cross-entropy per epoch
};

/// Non-private Adam training with softmax cross-entropy. Every class in
/// [0, classes) must appear in the training set.
inline ClassifierTrainResult train_classifier(const LabeledImages& train,
                                              const LabeledImages& validation, std::uint64_t seed,
                                              const ClassifierConfig& cfg = {}) {
  if (train.size() == 0) throw ParameterError("empty training set");
  const auto hist = train.histogram();
  for (std::size_t k = 0; k < 256; ++k) {
    if (k < cfg.classes && hist[k] == 0)
      throw ParameterError("class " + std::to_string(k) + " is absent from the training data");
    if (k >= cfg.classes && hist[k] != 0)
      throw ParameterError("label " + std::to_string(k) + " exceeds the class count");
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ParameterError("epochs and batch size must be positive");

  ClassifierTrainResult r;
  Classifier& c = r.model;
  c.side = train.side();
  c.classes = cfg.classes;
  c.net = Classifier::build(c.side, cfg);
  CounterRng init(seed, 401);
  c.params = c.net.init_params(init);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Optimizer opt = Optimizer::adam(c.params, ac);
  BatchSampler sampler(SamplingScheme::Shuffle, train.size(),
                       std::min(cfg.batch_size, train.size()), seed);
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<std::uint8_t> labels;
  const ExampleLoss xent = [&](const Tensor& logits, std::size_t i) {
    LossEval e{0.0, Tensor(logits.shape())};
    Classifier::softmax(logits.data(), e.grad.data(), c.classes);
    e.value = -std::log(std::max(e.grad[labels[i]], 1e-300));
    e.grad[labels[i]] -= 1.0;
    return e;
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t step = 0; step < per_epoch; ++step) {
      const LabeledImages batch = select(train, sampler.next());
      labels = batch.labels;
      double loss = 0.0;
      GradRecord g = batch_mean_grad(c.net, c.params, batch.images, xent, &loss);
      opt.step(c.params, g);
      total += loss;
    }
    r.epoch_losses.push_back(total / static_cast<double>(per_epoch));
  }
  r.validation_accuracy = c.accuracy(validation);
  return r;
}

/// Inception score of an image set under a trained classifier.
inline IsResult inception_score(const Classifier& c, const Tensor& images, std::size_t splits = 10) {
  return inception_score(c.predict(images), splits);
}

}  // namespace dplab
