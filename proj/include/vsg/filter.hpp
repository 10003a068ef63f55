#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vsg/core.hpp"
#include "vsg/dependency.hpp"
#include "vsg/transition.hpp"

namespace vsg {

/// The step prior P(A_t = a) divided out of the observation scores.
enum class StepPrior {
  /// 1/(S+1); dividing by it is a no-op.
  Uniform,
  /// Model scores for "what comes next", supplied per segment.
  NextStep,
  /// Uniform at t = 0, pushed through each segment's transition matrix.
  Propagated,
};

/// prior(i) = sum_j T(j, i) * belief(j).
inline std::vector<double> predict(std::span<const double> belief, const AdjustedTransition& t) {
  const std::size_t n = t.size();
  if (belief.size() != n) throw Error(ErrorCode::DimensionMismatch, "belief/transition size");
  std::vector<double> prior(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double b = belief[j];
    if (b == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) prior[i] += t(j, i) * b;
  }
  return prior;
}

struct UpdateResult {
  Belief belief;
  /// The observation/prior product vanished; `belief` is the prior.
  bool degenerate = false;
};

/// Normalized elementwise product of prior and observation likelihood.
inline UpdateResult update(std::span<const double> prior, std::span<const double> likelihood) {
  if (prior.size() != likelihood.size()) throw Error(ErrorCode::DimensionMismatch, "prior/observation size");
  std::vector<double> product(prior.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    product[i] = prior[i] * likelihood[i];
    sum += product[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) return {Belief::normalized(prior), true};
  for (double& x : product) x /= sum;
  return {Belief(std::move(product)), false};
}

struct FilterOptions {
  TransitionOptions transition;
  StepPrior step_prior = StepPrior::Uniform;
  /// Floor applied to a non-uniform step prior before dividing by it.
  double prior_floor = 1e-12;
};

/// Online predict/update loop for one video. Not shared across threads.
class BayesFilter {
 public:
  BayesFilter(const TaskSpec& task, DependencyMatrix d, FilterOptions options = {})
      : BayesFilter(task, d, init_transition(d, options.transition.fixup), options) {}

  BayesFilter(const TaskSpec& task, DependencyMatrix d, BaseTransition t, FilterOptions options = {})
      : num_steps_(task.num_steps()),
        d_(std::move(d)),
        t_(std::move(t)),
        options_(options),
        tracker_(task.num_steps()),
        belief_(Belief::uniform(task.num_states())),
        step_prior_(Belief::uniform(task.num_states()).vector()),
        alignment_(task.num_states()) {
    if (d_.size() != num_steps_) {
      throw Error(ErrorCode::DimensionMismatch, "dependency matrix is " + std::to_string(d_.size()) +
                                                    "x" + std::to_string(d_.size()) + ", task has " +
                                                    std::to_string(num_steps_) + " steps");
    }
    if (t_.size() != num_steps_) throw Error(ErrorCode::DimensionMismatch, "transition matrix size");
  }

  /// T~_t from the strictly-past progress.
  AdjustedTransition current_transition() const {
    return adjust(t_, readiness(d_, tracker_), validity(d_, tracker_), options_.transition);
  }

  std::vector<double> predict() const { return vsg::predict(belief_.values(), current_transition()); }

  /// predict -> update -> fold in this segment's progress. `next_step_scores`
  /// is required only for StepPrior::NextStep.
  const Belief& step(const ObservationScores& obs, std::span<const double> progress,
                     const ObservationScores* next_step_scores = nullptr) {
    if (obs.size() != num_steps_ + 1) throw Error(ErrorCode::DimensionMismatch, "observation width");
    const AdjustedTransition transition = current_transition();
    const std::vector<double> prior = vsg::predict(belief_.values(), transition);

    std::vector<double> likelihood(obs.values().begin(), obs.values().end());
    if (options_.step_prior == StepPrior::Propagated) {
      step_prior_ = vsg::predict(step_prior_, transition);
      divide_by_prior(likelihood, step_prior_);
    } else if (options_.step_prior == StepPrior::NextStep) {
      if (next_step_scores == nullptr || next_step_scores->size() != obs.size()) {
        throw Error(ErrorCode::MissingObservation, "next-step scores required for segment " + std::to_string(t_index_));
      }
      divide_by_prior(likelihood, next_step_scores->values());
    }

    UpdateResult result = update(prior, likelihood);
    if (result.degenerate) ++degenerate_updates_;
    belief_ = std::move(result.belief);
    alignment_.append(belief_);
    tracker_ = observe_progress(std::move(tracker_), progress);
    ++t_index_;
    return belief_;
  }

  const Belief& belief() const noexcept { return belief_; }
  const ProgressTracker& tracker() const noexcept { return tracker_; }
  const AlignmentMatrix& alignment() const noexcept { return alignment_; }
  const DependencyMatrix& dependencies() const noexcept { return d_; }
  const BaseTransition& base_transition() const noexcept { return t_; }
  std::size_t segments_processed() const noexcept { return t_index_; }
  std::size_t degenerate_updates() const noexcept { return degenerate_updates_; }

 private:
  void divide_by_prior(std::vector<double>& likelihood, std::span<const double> prior) const {
    for (std::size_t i = 0; i < likelihood.size(); ++i) likelihood[i] /= std::max(prior[i], options_.prior_floor);
  }

  std::size_t num_steps_;
  DependencyMatrix d_;
  BaseTransition t_;
  FilterOptions options_;
  ProgressTracker tracker_;
  Belief belief_;
  std::vector<double> step_prior_;
  AlignmentMatrix alignment_;
  std::size_t t_index_ = 0;
  std::size_t degenerate_updates_ = 0;
};

}  // namespace vsg
