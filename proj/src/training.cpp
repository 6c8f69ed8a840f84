#include "tdtd/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "tdtd/error.hpp"

namespace tdtd {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTdtd: return "tdtd";
    case ModelKind::kTdtdP: return "tdtd-p";
    case ModelKind::kSeqLm: return "seq-lm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "tdtd") return ModelKind::kTdtd;
  if (text == "tdtd-p") return ModelKind::kTdtdP;
  if (text == "seq-lm") return ModelKind::kSeqLm;
  throw Error("unknown model kind '" + std::string(text) + "' (expected tdtd, tdtd-p or seq-lm)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (eval_period < 1) throw ContractError("train config: eval_period must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ContractError("train config: learning_rate must be > 0");
  if (curriculum.period < 1) throw ContractError("train config: curriculum period must be >= 1");
  const auto& s = sampling;
  if (!(s.initial_prob >= 0.0 && s.initial_prob <= 1.0 && s.final_prob >= 0.0 && s.final_prob <= 1.0)) {
    throw ContractError("train config: teacher-forcing probabilities must lie in [0, 1]");
  }
  if (s.anneal_steps < 1) throw ContractError("train config: anneal_steps must be >= 1");
  if (s.anneal == AnnealKind::kExponential && (s.initial_prob <= 0.0 || s.final_prob <= 0.0)) {
    throw ContractError("train config: exponential anneal needs positive probabilities");
  }
}

std::vector<std::size_t> curriculum_filter(std::span<const Tree> dataset, std::size_t epoch,
                                           const CurriculumConfig& config) {
  std::vector<std::size_t> keep;
  keep.reserve(dataset.size());
  if (!config.enabled) {
    for (std::size_t i = 0; i < dataset.size(); ++i) keep.push_back(i);
    return keep;
  }
  const std::size_t depth = config.depth_cap(epoch);
  const std::size_t width = config.width_cap(epoch);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tree& t = dataset[i];
    if (t.depth() <= depth && layer_view(t).max_width() <= width) keep.push_back(i);
  }
  if (keep.empty() && epoch == 0 && !dataset.empty()) {
    throw Error("curriculum keeps no training trees at epoch 0 (depth cap " + std::to_string(depth) +
                ", width cap " + std::to_string(width) + "); raise the initial caps");
  }
  return keep;
}

double teacher_forcing_prob(std::size_t step, const ScheduledSamplingConfig& config) {
  if (!config.enabled) return 1.0;
  const double t = static_cast<double>(std::min(step, config.anneal_steps)) /
                   static_cast<double>(config.anneal_steps);
  if (config.anneal == AnnealKind::kExponential) {
    return config.initial_prob * std::pow(config.final_prob / config.initial_prob, t);
  }
  return config.initial_prob + (config.final_prob - config.initial_prob) * t;
}

namespace {

class TdtdTrainable final : public Trainable {
 public:
  explicit TdtdTrainable(TdtdModel& m) : m_(m) {}
  ModelKind kind() const override { return ModelKind::kTdtd; }
  ad::ParamStore& params() override { return m_.params(); }
  ad::Var log_prob(ad::Graph& g, const Tree& t, const TeacherForcing& tf) const override {
    return m_.tree_log_prob(g, t, nullptr, tf);
  }
  double nll(const Tree& t) const override { return -m_.tree_log_prob(t); }
  void save(std::ostream& out) const override { m_.save(out); }

 private:
  TdtdModel& m_;
};

class ParserTrainable final : public Trainable {
 public:
  explicit ParserTrainable(TdtdParser& p) : p_(p) {}
  ModelKind kind() const override { return ModelKind::kTdtdP; }
  ad::ParamStore& params() override { return p_.params(); }
  ad::Var log_prob(ad::Graph& g, const Tree& t, const TeacherForcing& tf) const override {
    const auto words = t.yield();
    return p_.conditional_tree_log_prob(g, t, words, tf);
  }
  double nll(const Tree& t) const override {
    const auto words = t.yield();
    return -p_.conditional_tree_log_prob(t, words);
  }
  void save(std::ostream& out) const override { p_.save(out); }

 private:
  TdtdParser& p_;
};

class SeqTrainable final : public Trainable {
 public:
  explicit SeqTrainable(SeqLm& m) : m_(m) {}
  ModelKind kind() const override { return ModelKind::kSeqLm; }
  ad::ParamStore& params() override { return m_.params(); }
  ad::Var log_prob(ad::Graph& g, const Tree& t, const TeacherForcing& tf) const override {
    return m_.sequence_log_prob(g, linearize_brackets(t), tf);
  }
  double nll(const Tree& t) const override { return -m_.sequence_log_prob(linearize_brackets(t)); }
  void save(std::ostream& out) const override { m_.save(out); }

 private:
  SeqLm& m_;
};

std::string norm_summary(const ad::ParamStore& params) {
  std::vector<std::pair<double, std::string>> norms;
  double total = 0.0;
  bool finite = true;
  for (const auto& [name, t] : params) {
    double s = 0.0;
    for (double v : t.values) s += v * v;
    finite = finite && std::isfinite(s);
    total += s;
    norms.emplace_back(std::sqrt(s), name);
  }
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::ostringstream out;
  out << "parameter norm " << std::sqrt(total) << (finite ? "" : " (non-finite values present)")
      << ", largest:";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, norms.size()); ++i) {
    out << ' ' << norms[i].second << '=' << norms[i].first;
  }
  return out.str();
}

void write_cap(std::ostream& out, const std::optional<std::size_t>& cap) {
  if (cap) {
    out << *cap;
  } else {
    out << "none";
  }
}

}  // namespace

std::unique_ptr<Trainable> make_trainable(TdtdModel& model) { return std::make_unique<TdtdTrainable>(model); }
std::unique_ptr<Trainable> make_trainable(TdtdParser& parser) { return std::make_unique<ParserTrainable>(parser); }
std::unique_ptr<Trainable> make_trainable(SeqLm& model) { return std::make_unique<SeqTrainable>(model); }

void TrainReport::write_tsv(std::ostream& out) const {
  out << "epoch\ttrain_nll\tdev_nll\ttf_prob\tcurriculum_depth_cap\tcurriculum_width_cap\n";
  for (const EpochRow& r : rows) {
    out << r.epoch << '\t' << ad::format_double(r.train_nll) << '\t' << ad::format_double(r.dev_nll) << '\t'
        << ad::format_double(r.tf_prob) << '\t';
    write_cap(out, r.depth_cap);
    out << '\t';
    write_cap(out, r.width_cap);
    out << '\n';
  }
}

double mean_nll(const Trainable& model, std::span<const Tree> trees) {
  if (trees.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const Tree& t : trees) total += model.nll(t);
  return total / static_cast<double>(trees.size());
}

TrainReport train(Trainable& model, std::span<const Tree> train_set, std::span<const Tree> dev_set,
                  const TrainConfig& config, const CheckpointSink& sink) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  const CurriculumConfig& cur = config.curriculum;
  auto caps_for = [&](std::size_t epoch, EpochRow& row) {
    if (cur.enabled) {
      row.depth_cap = cur.depth_cap(epoch);
      row.width_cap = cur.width_cap(epoch);
    }
  };

  TrainReport report;
  EpochRow init;
  init.train_nll = kNaN;
  init.dev_nll = mean_nll(model, dev_set);
  init.tf_prob = teacher_forcing_prob(0, config.sampling);
  caps_for(0, init);
  report.rows.push_back(init);

  Rng rng(config.seed);
  ad::Optimizer optimizer(config.optimizer);
  ad::ParamStore& params = model.params();
  params.zero_grads();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = curriculum_filter(train_set, epoch, cur);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRow row;
    row.epoch = epoch + 1;
    row.examples = order.size();
    caps_for(epoch, row);
    double loss_total = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = -1.0 / static_cast<double>(end - start);
      row.tf_prob = teacher_forcing_prob(step, config.sampling);
      const TeacherForcing tf{row.tf_prob, &rng};
      for (std::size_t k = start; k < end; ++k) {
        ad::Graph g;
        const ad::Var lp = model.log_prob(g, train_set[order[k]], tf);
        const double value = g.scalar_value(lp);
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch + 1 << ", batch " << batch + 1 << " (example "
              << order[k] << ", log-prob " << value << "); " << norm_summary(params);
          throw Error(msg.str());
        }
        loss_total -= value;
        g.backward(g.scale(lp, scale));
      }
      optimizer.step(params);
      ++step;
    }
    row.train_nll = loss_total / static_cast<double>(order.size());
    const bool evaluate = (epoch + 1) % config.eval_period == 0 || epoch + 1 == config.epochs;
    row.dev_nll = evaluate ? mean_nll(model, dev_set) : kNaN;
    report.rows.push_back(row);
    if (sink) sink(epoch + 1, model);
  }
  return report;
}

}  // namespace tdtd
