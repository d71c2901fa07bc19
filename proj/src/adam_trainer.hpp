#pragma once

// Internal: mini-batch projected Adam shared by stage 1, the baselines and fine-tuning.

#include "captensor/core_model.hpp"
#include "captensor/fitting.hpp"
#include "captensor/random.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace captensor::detail {

Eigen::VectorXd pack(const FactorParams& params, const ParamMask& mask);
Eigen::VectorXd pack(const ParamGradient& grad, const ParamMask& mask);
void unpack(const Eigen::VectorXd& flat, const ParamMask& mask, FactorParams& params);

class Adam {
 public:
  Adam(Eigen::Index size, double beta1, double beta2, double eps);
  void step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, double lr);

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

struct TrainerOptions {
  ParamMask mask;
  AdamSettings adam;
  double learning_rate = 0.05;
  int total_epochs = 1;  // horizon for the learning-rate schedule
  bool normalize_columns = true;
  double projection_eps = 1e-4;
  double l2 = 0.0;  // penalty l2 * (|theta|^2 + |A|^2) on the summed objective
  double probability_floor = kDefaultProbabilityFloor;
  std::uint64_t seed = 0;
};

class AdamTrainer;

// Runs `epochs` epochs and returns the training objective after each one
// (a single entry for the starting point when epochs is 0). Throws FitError
// naming the epoch once the objective stops being finite.
std::vector<double> train(AdamTrainer& trainer, int epochs, const std::string& what);

void clamp_gaps(FactorParams& params, const ParamMask& mask, double eps);
void normalize_columns(Eigen::MatrixXd& m);

class AdamTrainer {
 public:
  AdamTrainer(FactorParams init, ObservationSpan data, TrainerOptions options);

  // One pass over a fresh permutation of the data. Throws FitError if the
  // parameters or the objective stop being finite. When one batch covers all
  // the data the epoch is a single step on the full gradient, computed over
  // distinct observations weighted by their multiplicity.
  void run_epoch();
  // Summed NLL (plus penalty) of the full training data at the current point.
  double objective() const;
  // Full-batch mode only: the objective at the parameters the last step
  // started from, i.e. after the previous epoch.
  double value_before_last_step() const { return last_value_; }
  bool full_batch() const { return full_batch_; }
  const FactorParams& params() const { return params_; }
  int epoch() const { return epoch_; }

 private:
  double current_lr() const;
  void aggregate(ObservationSpan data);
  void take_step(ObservationSpan batch, const double* weights, double share);

  FactorParams params_;
  std::vector<Observation> data_;
  std::vector<Observation> work_;
  bool full_batch_ = false;
  std::vector<Observation> distinct_;
  std::vector<double> multiplicity_;
  TrainerOptions opt_;
  Adam adam_;
  ParamGradient grad_;
  Eigen::VectorXd flat_;
  int epoch_ = 0;
  long step_ = 0;
  long total_steps_ = 1;
  double last_value_ = 0.0;
};

}  // namespace captensor::detail
