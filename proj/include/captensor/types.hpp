#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace captensor {

enum class Template { Pointwise, Pairwise };

const char* to_string(Template t);
Template template_from_string(const std::string& s);

// Rater k with an ordinal scale {0, ..., num_categories - 1}. Rater 0 is the human.
struct RaterSpec {
  int rater_id = 0;
  Template templ = Template::Pointwise;
  int num_categories = 2;

  void validate() const;
  bool operator==(const RaterSpec&) const = default;
};

// A single model (pointwise rating) or an ordered pair (side-by-side rating).
// For a pair the label expresses preference for `second` over `first`.
struct Subject {
  int first = 0;
  int second = -1;

  static Subject single(int model) { return {model, -1}; }
  static Subject pair(int model0, int model1) { return {model0, model1}; }

  bool is_pair() const { return second >= 0; }
  bool involves(int model) const { return first == model || second == model; }
  bool operator==(const Subject&) const = default;
};

struct Observation {
  Subject subject;
  int prompt = 0;
  int rater = 0;
  int label = 0;

  bool operator==(const Observation&) const = default;
};

using ObservationSpan = std::span<const Observation>;

struct Dims {
  int models = 0;
  int prompts = 0;
  int raters = 0;

  bool operator==(const Dims&) const = default;
};

struct Dataset {
  Dims dims;
  std::vector<RaterSpec> raters;
  std::vector<Observation> observations;

  // Throws InputError naming the first offending observation.
  void validate() const;
  std::vector<Observation> human() const;
  std::vector<Observation> autorater() const;
  std::size_t human_count() const;
};

// Checks a single observation against dims and rater specs.
void validate_observation(const Observation& obs, const Dims& dims,
                          const std::vector<RaterSpec>& raters);

// The full parameter set: CP factors plus per-rater ordered cutoffs stored as
// (first cutoff, positive gaps) so monotonicity holds structurally.
struct FactorParams {
  Eigen::MatrixXd theta;  // models x rank
  Eigen::MatrixXd a;      // prompts x rank
  Eigen::MatrixXd gamma;  // raters x rank
  std::vector<RaterSpec> raters;
  Eigen::VectorXd base_cutoff;       // one per rater
  std::vector<Eigen::VectorXd> gaps;  // rater k has num_categories - 2 entries
  bool fine_tuned = false;

  // Zero-initialized parameters with unit gaps and zero base cutoffs.
  static FactorParams zeros(const Dims& dims, int rank, const std::vector<RaterSpec>& raters);

  int rank() const { return static_cast<int>(theta.cols()); }
  int num_models() const { return static_cast<int>(theta.rows()); }
  int num_prompts() const { return static_cast<int>(a.rows()); }
  int num_raters() const { return static_cast<int>(gamma.rows()); }
  Dims dims() const { return {num_models(), num_prompts(), num_raters()}; }
  const RaterSpec& human() const { return raters.at(0); }

  Eigen::VectorXd cutoffs(int rater) const;
  // Sets base and gaps from an explicit strictly increasing cutoff vector.
  void set_cutoffs(int rater, const Eigen::VectorXd& cutoffs);

  void validate() const;
};

struct CovarianceEstimate {
  Eigen::MatrixXd sigma_hat;  // rank x rank, for sqrt(m) (gamma0_hat - gamma0)
  std::int64_t m = 0;
  bool includes_cutoffs = false;  // false: cutoff block was marginalized out
  bool reliable = true;

  void validate() const;
};

enum class IntervalMode { None, Pointwise, Simultaneous };

const char* to_string(IntervalMode mode);

struct IntervalEstimate {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.0;
  IntervalMode mode = IntervalMode::Pointwise;
  // Gaussian quantile for pointwise intervals, calibrated c for simultaneous ones.
  double calibration_constant = 0.0;
  double standard_error = 0.0;
  bool degenerate = false;
  // Intervals treat the representation-learning stage as exact.
  bool ignores_first_stage_error = true;
};

struct CompositeResult {
  Eigen::VectorXd direction;
  double cohesion = 0.0;
  Eigen::VectorXd eigenvalues;  // nonincreasing
  bool tied = false;            // leading eigenvalue not separated
};

}  // namespace captensor
