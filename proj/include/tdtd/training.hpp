#pragma once

// Maximum-likelihood training shared by the tree decoder, the parser and the
// sequence baseline: curriculum filtering, scheduled sampling, minibatch
// updates and per-epoch reports.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdtd/autodiff.hpp"
#include "tdtd/seq_lm.hpp"
#include "tdtd/tdtd_model.hpp"
#include "tdtd/tdtd_parser.hpp"
#include "tdtd/tree.hpp"

namespace tdtd {

enum class ModelKind { kTdtd, kTdtdP, kSeqLm };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct CurriculumConfig {
  bool enabled = false;
  std::size_t initial_depth = 3;
  std::size_t initial_width = 4;
  std::size_t period = 1;  // epochs between relaxations
  std::size_t depth_increment = 1;
  std::size_t width_increment = 1;

  std::size_t depth_cap(std::size_t epoch) const { return initial_depth + depth_increment * (epoch / period); }
  std::size_t width_cap(std::size_t epoch) const { return initial_width + width_increment * (epoch / period); }
};

enum class AnnealKind { kLinear, kExponential };

struct ScheduledSamplingConfig {
  bool enabled = false;
  double initial_prob = 1.0;
  double final_prob = 0.75;
  std::size_t anneal_steps = 1000;
  AnnealKind anneal = AnnealKind::kLinear;
};

struct TrainConfig {
  ad::OptimizerConfig optimizer{.clip_norm = 5.0};
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t eval_period = 1;  // epochs between dev evaluations
  CurriculumConfig curriculum;
  ScheduledSamplingConfig sampling;

  void validate() const;
};

// Indices of trees with depth <= D(epoch) and widest layer <= W(epoch); every
// index when the curriculum is disabled. Throws when epoch 0 keeps nothing.
std::vector<std::size_t> curriculum_filter(std::span<const Tree> dataset, std::size_t epoch,
                                           const CurriculumConfig& config);

// Probability of feeding the gold symbol at optimizer step `step`.
double teacher_forcing_prob(std::size_t step, const ScheduledSamplingConfig& config);

// Uniform view of a model for the training loop.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual ModelKind kind() const = 0;
  virtual ad::ParamStore& params() = 0;
  // log p of one example; the loss is its negation.
  virtual ad::Var log_prob(ad::Graph& g, const Tree& tree, const TeacherForcing& tf) const = 0;
  virtual double nll(const Tree& tree) const = 0;
  virtual void save(std::ostream& out) const = 0;
};

// The adapters keep a reference; the model must outlive them.
std::unique_ptr<Trainable> make_trainable(TdtdModel& model);
std::unique_ptr<Trainable> make_trainable(TdtdParser& parser);
std::unique_ptr<Trainable> make_trainable(SeqLm& model);

struct EpochRow {
  std::size_t epoch = 0;  // 0 is the state before training
  double train_nll = 0.0;
  double dev_nll = 0.0;
  double tf_prob = 1.0;
  std::optional<std::size_t> depth_cap;
  std::optional<std::size_t> width_cap;
  std::size_t examples = 0;
};

struct TrainReport {
  std::vector<EpochRow> rows;

  // `epoch train_nll dev_nll tf_prob curriculum_depth_cap curriculum_width_cap`
  void write_tsv(std::ostream& out) const;
};

using CheckpointSink = std::function<void(std::size_t epoch, const Trainable& model)>;

// Mean negative log-likelihood; NaN for an empty set.
double mean_nll(const Trainable& model, std::span<const Tree> trees);

TrainReport train(Trainable& model, std::span<const Tree> train_set, std::span<const Tree> dev_set,
                  const TrainConfig& config, const CheckpointSink& sink = {});

}  // namespace tdtd
