#include "autoddpm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

namespace autoddpm {
namespace {

constexpr std::uint64_t kSplitKey = 0x5350u;
constexpr std::uint64_t kShuffleKey = 0x5348u;
constexpr std::uint64_t kBatchKey = 0x4241u;
constexpr std::uint64_t kValKey = 0x5641u;
constexpr int kMicroBatch = 8;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void check_dataset(const std::vector<Image>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const auto& img : dataset) {
    if (!img.same_shape(dataset.front())) throw std::invalid_argument("train: images differ in shape");
    for (const float v : img.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("train: pixel values must lie in [0, 1]");
    }
  }
}

// Draws (t, eps, x_t) for the given images from one stream.
void noise_batch(const std::vector<Image>& dataset, std::span<const std::size_t> idx, const NoiseSchedule& s,
                 RandomSource& rng, Tensor<float>& x_t, Tensor<float>& eps, std::vector<int>& ts) {
  const int h = dataset[idx[0]].height(), w = dataset[idx[0]].width();
  const int n = static_cast<int>(idx.size());
  x_t = Tensor<float>(n, h, w, 1);
  eps = Tensor<float>(n, h, w, 1);
  ts.resize(n);
  for (int i = 0; i < n; ++i) {
    ts[i] = rng.uniform_int(1, s.t_max());
    const auto noised = forward_to(s, dataset[idx[i]], ts[i], rng);
    std::copy_n(noised.x_t.data(), noised.x_t.size(), x_t.sample(i));
    std::copy_n(noised.eps.data(), noised.eps.size(), eps.sample(i));
  }
}

Tensor<float> slice(const Tensor<float>& t, int start, int count) {
  Tensor<float> out(count, t.h, t.w, t.c);
  std::copy_n(t.sample(start), out.size(), out.data.begin());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("TrainConfig: val_fraction in (0, 1)");
}

std::string LossCurve::to_csv() const {
  std::string s = "epoch,train_loss,val_loss\n";
  for (const auto& e : epochs) {
    s += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," + fmt_double(e.val_loss) + "\n";
  }
  return s;
}

DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 eng(mix_seed(seed, {kSplitKey}));
  std::shuffle(perm.begin(), perm.end(), eng);
  std::size_t n_val = 0;
  if (n >= 2) {
    n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  }
  DataSplit s;
  s.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

double validation_loss(const UNetParams<float>& params, const std::vector<Image>& dataset,
                       const std::vector<std::size_t>& indices, const NoiseSchedule& schedule, std::uint64_t seed,
                       double* zero_predictor_loss) {
  if (indices.empty()) {
    if (zero_predictor_loss) *zero_predictor_loss = std::nan("");
    return std::nan("");
  }
  const UNetModel<float> model(params.config);
  RandomSource rng(mix_seed(seed, {kValKey}));
  Tensor<float> x_t, eps, pred;
  std::vector<int> ts;
  noise_batch(dataset, indices, schedule, rng, x_t, eps, ts);
  double sse = 0.0, zero = 0.0;
  for (int start = 0; start < x_t.n; start += kMicroBatch) {
    const int count = std::min(kMicroBatch, x_t.n - start);
    const Tensor<float> xs = slice(x_t, start, count);
    model.predict(params, xs, std::span<const int>(ts).subspan(start, count), pred);
    const float* e = eps.sample(start);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(pred.data[i]) - e[i];
      sse += d * d;
      zero += static_cast<double>(e[i]) * e[i];
    }
  }
  const double denom = static_cast<double>(eps.size());
  if (zero_predictor_loss) *zero_predictor_loss = zero / denom;
  return sse / denom;
}

TrainResult train(UNetParams<float> params, const std::vector<Image>& dataset, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, const std::optional<AdamState>& resume,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  check_dataset(dataset);
  const int div = params.config.size_divisor();
  if (dataset.front().height() % div != 0 || dataset.front().width() % div != 0) {
    throw std::invalid_argument("train: image size must be divisible by " + std::to_string(div));
  }
  const UNetModel<float> model(params.config);
  const DataSplit split = split_dataset(dataset.size(), cfg.val_fraction, cfg.seed);

  TrainResult result;
  if (resume) {
    if (resume->m.arch_hash() != params.arch_hash()) throw std::invalid_argument("train: optimizer state mismatch");
    result.optimizer = *resume;
  } else {
    result.optimizer.m = params.zeros_like();
    result.optimizer.v = params.zeros_like();
  }
  AdamState& opt = result.optimizer;
  validation_loss(params, dataset, split.val, schedule, cfg.seed, &result.curve.zero_predictor_val_loss);

  const std::size_t pixels = dataset.front().size();
  for (int epoch = static_cast<int>(opt.epochs_done) + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    std::mt19937_64 eng(mix_seed(cfg.seed, {kShuffleKey, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), eng);

    double epoch_sse = 0.0;
    std::size_t epoch_count = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      RandomSource rng(mix_seed(cfg.seed, {kBatchKey, static_cast<std::uint64_t>(epoch), batch_index}));
      Tensor<float> x_t, eps;
      std::vector<int> ts;
      noise_batch(dataset, idx, schedule, rng, x_t, eps, ts);

      UNetParams<float> grad = params.zeros_like();
      const double scale = 1.0 / (static_cast<double>(count) * static_cast<double>(pixels));
      for (int mb = 0; mb < x_t.n; mb += kMicroBatch) {
        const int n = std::min(kMicroBatch, x_t.n - mb);
        epoch_sse += model.loss_and_grad(params, slice(x_t, mb, n), std::span<const int>(ts).subspan(mb, n),
                                         slice(eps, mb, n), scale, grad);
      }
      epoch_count += count * pixels;

      ++opt.step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
      for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        auto& p = params.tensors[k].data;
        auto& m = opt.m.tensors[k].data;
        auto& v = opt.v.tensors[k].data;
        const auto& g = grad.tensors[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g[i];
          const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
          const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
          m[i] = static_cast<float>(mi);
          v[i] = static_cast<float>(vi);
          p[i] = static_cast<float>(p[i] - cfg.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
      }
    }
    opt.epochs_done = static_cast<std::uint32_t>(epoch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_count ? epoch_sse / static_cast<double>(epoch_count) : std::nan("");
    stats.val_loss = validation_loss(params, dataset, split.val, schedule, cfg.seed);
    result.curve.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace autoddpm
