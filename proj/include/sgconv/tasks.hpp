#pragma once

// Synthetic tasks that can only be solved with a receptive field spanning the
// whole sequence.

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgconv/common.hpp"

namespace sgconv
{

enum class TaskKind
{
  first_token_recall,
  adding_problem,
  sparse_majority
};

inline std::string to_string(TaskKind kind)
{
  switch (kind)
  {
  case TaskKind::first_token_recall: return "first-token-recall";
  case TaskKind::adding_problem: return "adding-problem";
  case TaskKind::sparse_majority: return "sparse-majority";
  }
  return "unknown";
}

inline TaskKind parse_task_kind(std::string s)
{
  for (char& c : s)
    if (c == '_')
      c = '-';
  if (s == "first-token-recall")
    return TaskKind::first_token_recall;
  if (s == "adding-problem")
    return TaskKind::adding_problem;
  if (s == "sparse-majority")
    return TaskKind::sparse_majority;
  throw std::invalid_argument("unknown task: " + s);
}

struct TaskSpec
{
  TaskKind kind = TaskKind::first_token_recall;
  std::size_t seq_len = 1024;
  std::size_t num_classes = 4;
  std::size_t noise_tokens = 8; // first_token_recall distractor vocabulary
  std::size_t num_votes = 5;    // sparse_majority flagged positions (odd)
  std::uint64_t seed = 0;

  void validate() const
  {
    require(seq_len >= 2, "task seq_len must be >= 2");
    require(num_classes >= 2, "task needs at least 2 classes");
    if (kind == TaskKind::first_token_recall)
      require(noise_tokens >= 1, "first_token_recall needs at least one noise token");
    if (kind == TaskKind::sparse_majority)
    {
      require(num_classes == 2, "sparse_majority is a binary task");
      require(num_votes % 2 == 1 && num_votes <= seq_len, "sparse_majority needs an odd vote count <= seq_len");
    }
  }

  bool uses_tokens() const { return kind != TaskKind::adding_problem; }
  bool is_regression() const { return kind == TaskKind::adding_problem; }

  std::size_t vocab_size() const
  {
    switch (kind)
    {
    case TaskKind::first_token_recall: return num_classes + noise_tokens;
    case TaskKind::sparse_majority: return 3;
    case TaskKind::adding_problem: return 0;
    }
    return 0;
  }

  /// Real-valued features per position (adding_problem: value, marker).
  std::size_t input_features() const { return kind == TaskKind::adding_problem ? 2 : 0; }

  /// Model output width: class count, or 1 for regression.
  std::size_t output_dim() const { return is_regression() ? 1 : num_classes; }
};

struct TaskBatch
{
  TaskKind kind = TaskKind::first_token_recall;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t features = 0;
  std::vector<int> tokens;     // B x L (token tasks)
  std::vector<double> values;  // B x L x F (feature tasks)
  std::vector<int> labels;     // B (classification)
  std::vector<double> targets; // B (regression)

  int token(std::size_t b, std::size_t l) const { return tokens[b * seq_len + l]; }
  double value(std::size_t b, std::size_t l, std::size_t f) const { return values[(b * seq_len + l) * features + f]; }

  bool operator==(const TaskBatch&) const = default;
};

inline TaskBatch gen_batch(const TaskSpec& spec, std::size_t batch, std::mt19937_64& rng)
{
  spec.validate();
  const std::size_t L = spec.seq_len;
  TaskBatch out;
  out.kind = spec.kind;
  out.batch = batch;
  out.seq_len = L;
  out.features = spec.input_features();
  std::uniform_int_distribution<std::size_t> position(0, L - 1);

  switch (spec.kind)
  {
  case TaskKind::first_token_recall:
  {
    out.tokens.resize(batch * L);
    out.labels.resize(batch);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(spec.num_classes) - 1);
    std::uniform_int_distribution<int> noise(static_cast<int>(spec.num_classes),
                                             static_cast<int>(spec.num_classes + spec.noise_tokens) - 1);
    for (std::size_t b = 0; b < batch; ++b)
    {
      const int label = cls(rng);
      out.labels[b] = label;
      out.tokens[b * L] = label;
      for (std::size_t l = 1; l < L; ++l)
        out.tokens[b * L + l] = noise(rng);
    }
    break;
  }
  case TaskKind::adding_problem:
  {
    out.values.resize(batch * L * 2);
    out.targets.resize(batch);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t b = 0; b < batch; ++b)
    {
      for (std::size_t l = 0; l < L; ++l)
      {
        out.values[(b * L + l) * 2] = uniform(rng);
        out.values[(b * L + l) * 2 + 1] = 0.0;
      }
      const std::size_t first = position(rng);
      std::size_t second = position(rng);
      while (second == first)
        second = position(rng);
      out.values[(b * L + first) * 2 + 1] = 1.0;
      out.values[(b * L + second) * 2 + 1] = 1.0;
      out.targets[b] = out.values[(b * L + first) * 2] + out.values[(b * L + second) * 2];
    }
    break;
  }
  case TaskKind::sparse_majority:
  {
    out.tokens.assign(batch * L, 0);
    out.labels.resize(batch);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t b = 0; b < batch; ++b)
    {
      int tally = 0;
      std::size_t placed = 0;
      while (placed < spec.num_votes)
      {
        const std::size_t p = position(rng);
        if (out.tokens[b * L + p] != 0)
          continue;
        const bool positive = coin(rng);
        out.tokens[b * L + p] = positive ? 1 : 2;
        tally += positive ? 1 : -1;
        ++placed;
      }
      out.labels[b] = tally > 0 ? 1 : 0;
    }
    break;
  }
  }
  return out;
}

/// Batch number `index` of the stream identified by spec.seed.
inline TaskBatch gen_batch(const TaskSpec& spec, std::size_t batch, std::uint64_t index)
{
  std::mt19937_64 rng(mix_seed(spec.seed, index));
  return gen_batch(spec, batch, rng);
}

/// Re-derives sample b's label from its input.
inline bool label_consistent(const TaskSpec& spec, const TaskBatch& batch, std::size_t b)
{
  const std::size_t L = batch.seq_len;
  switch (spec.kind)
  {
  case TaskKind::first_token_recall:
  {
    const int first = batch.token(b, 0);
    if (first != batch.labels[b] || first < 0 || first >= static_cast<int>(spec.num_classes))
      return false;
    for (std::size_t l = 1; l < L; ++l)
    {
      const int t = batch.token(b, l);
      if (t < static_cast<int>(spec.num_classes) || t >= static_cast<int>(spec.vocab_size()))
        return false;
    }
    return true;
  }
  case TaskKind::adding_problem:
  {
    double sum = 0.0;
    int markers = 0;
    for (std::size_t l = 0; l < L; ++l)
      if (batch.value(b, l, 1) == 1.0)
      {
        sum += batch.value(b, l, 0);
        ++markers;
      }
    return markers == 2 && sum == batch.targets[b];
  }
  case TaskKind::sparse_majority:
  {
    int tally = 0;
    std::size_t votes = 0;
    for (std::size_t l = 0; l < L; ++l)
    {
      const int t = batch.token(b, l);
      if (t == 1)
        ++tally;
      else if (t == 2)
        --tally;
      if (t != 0)
        ++votes;
    }
    return votes == spec.num_votes && batch.labels[b] == (tally > 0 ? 1 : 0);
  }
  }
  return false;
}

/// One JSON object per line: {"input": [...], "label": ...}.
inline void write_dataset_jsonl(std::ostream& os, const TaskBatch& batch)
{
  for (std::size_t b = 0; b < batch.batch; ++b)
  {
    nlohmann::json row;
    if (batch.kind == TaskKind::adding_problem)
    {
      nlohmann::json input = nlohmann::json::array();
      for (std::size_t l = 0; l < batch.seq_len; ++l)
        input.push_back({batch.value(b, l, 0), batch.value(b, l, 1)});
      row["input"] = std::move(input);
      row["label"] = batch.targets[b];
    }
    else
    {
      row["input"] = std::vector<int>(batch.tokens.begin() + static_cast<std::ptrdiff_t>(b * batch.seq_len),
                                      batch.tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.seq_len));
      row["label"] = batch.labels[b];
    }
    os << row.dump() << '\n';
  }
}

} // namespace sgconv
