#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "autoddpm/checkpoint.hpp"
#include "autoddpm/diffusion.hpp"
#include "autoddpm/unet.hpp"

namespace autoddpm {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct LossCurve {
  std::vector<EpochStats> epochs;
  // Validation loss of the eps_hat = 0 predictor on the same held-out draws.
  double zero_predictor_val_loss = 0.0;

  std::string to_csv() const;
};

struct TrainResult {
  UNetParams<float> params;
  LossCurve curve;
  AdamState optimizer;
};

// Deterministic train/validation split of dataset indices.
struct DataSplit {
  std::vector<std::size_t> train, val;
};
DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed);

// Minimizes the simple noise-prediction loss with Adam. Every random draw is
// derived from (cfg.seed, epoch, batch), so a run resumed from a saved
// AdamState continues the exact trajectory of an uninterrupted run. Epochs
// already recorded in resume->epochs_done are skipped.
TrainResult train(UNetParams<float> params, const std::vector<Image>& dataset, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, const std::optional<AdamState>& resume = std::nullopt,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Mean simple loss on the fixed validation draws for cfg.seed.
double validation_loss(const UNetParams<float>& params, const std::vector<Image>& dataset,
                       const std::vector<std::size_t>& indices, const NoiseSchedule& schedule, std::uint64_t seed,
                       double* zero_predictor_loss = nullptr);

}  // namespace autoddpm
