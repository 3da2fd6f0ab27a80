#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "sgconv/tasks.hpp"

using namespace sgconv;

TEST(TaskKind, ParseAndPrint)
{
  for (auto kind : {TaskKind::first_token_recall, TaskKind::adding_problem, TaskKind::sparse_majority})
    EXPECT_EQ(parse_task_kind(to_string(kind)), kind);
  EXPECT_EQ(parse_task_kind("first_token_recall"), TaskKind::first_token_recall);
  EXPECT_THROW(parse_task_kind("copy"), std::invalid_argument);
}

TEST(TaskSpec, Validation)
{
  TaskSpec s;
  s.seq_len = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.seq_len = 8;
  s.num_classes = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.kind = TaskKind::sparse_majority;
  s.num_classes = 2;
  s.num_votes = 4;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.num_votes = 3;
  EXPECT_NO_THROW(s.validate());
}

TEST(FirstTokenRecall, LabelIsFirstToken)
{
  TaskSpec s;
  s.seq_len = 8;
  s.num_classes = 4;
  const auto batch = gen_batch(s, 64, std::uint64_t{0});
  bool saw_three = false;
  for (std::size_t b = 0; b < batch.batch; ++b)
  {
    EXPECT_EQ(batch.labels[b], batch.token(b, 0));
    for (std::size_t l = 1; l < 8; ++l)
      EXPECT_GE(batch.token(b, l), 4);
    if (batch.token(b, 0) == 3)
    {
      EXPECT_EQ(batch.labels[b], 3);
      saw_three = true;
    }
  }
  EXPECT_TRUE(saw_three);
}

TEST(AddingProblem, LabelIsSumOfFlaggedValues)
{
  TaskSpec s;
  s.kind = TaskKind::adding_problem;
  s.seq_len = 16;
  auto batch = gen_batch(s, 1, std::uint64_t{3});
  std::vector<std::size_t> flagged;
  for (std::size_t l = 0; l < 16; ++l)
    if (batch.value(0, l, 1) == 1.0)
      flagged.push_back(l);
  ASSERT_EQ(flagged.size(), 2u);
  batch.values[flagged[0] * 2] = 0.2;
  batch.values[flagged[1] * 2] = 0.5;
  batch.targets[0] = 0.2 + 0.5;
  EXPECT_DOUBLE_EQ(batch.targets[0], 0.7);
  EXPECT_TRUE(label_consistent(s, batch, 0));
  batch.targets[0] = 0.8;
  EXPECT_FALSE(label_consistent(s, batch, 0));
}

TEST(SparseMajority, VotesAndLabel)
{
  TaskSpec s;
  s.kind = TaskKind::sparse_majority;
  s.num_classes = 2;
  s.seq_len = 32;
  s.num_votes = 5;
  const auto batch = gen_batch(s, 100, std::uint64_t{4});
  for (std::size_t b = 0; b < batch.batch; ++b)
  {
    int tally = 0, votes = 0;
    for (std::size_t l = 0; l < 32; ++l)
    {
      tally += batch.token(b, l) == 1 ? 1 : batch.token(b, l) == 2 ? -1 : 0;
      votes += batch.token(b, l) != 0;
    }
    EXPECT_EQ(votes, 5);
    EXPECT_EQ(batch.labels[b], tally > 0 ? 1 : 0);
  }
}

TEST(GenBatch, Deterministic)
{
  for (auto kind : {TaskKind::first_token_recall, TaskKind::adding_problem, TaskKind::sparse_majority})
  {
    TaskSpec s;
    s.kind = kind;
    s.seq_len = 64;
    s.num_classes = kind == TaskKind::sparse_majority ? 2 : 4;
    s.seed = 99;
    EXPECT_EQ(gen_batch(s, 8, std::uint64_t{5}), gen_batch(s, 8, std::uint64_t{5}));
    EXPECT_NE(gen_batch(s, 8, std::uint64_t{5}), gen_batch(s, 8, std::uint64_t{6}));
    auto other = s;
    other.seed = 100;
    EXPECT_NE(gen_batch(s, 8, std::uint64_t{5}), gen_batch(other, 8, std::uint64_t{5}));
  }
}

TEST(GenBatch, EverySampleIsLabelConsistent)
{
  for (auto kind : {TaskKind::first_token_recall, TaskKind::adding_problem, TaskKind::sparse_majority})
  {
    TaskSpec s;
    s.kind = kind;
    s.seq_len = 128;
    s.num_classes = kind == TaskKind::sparse_majority ? 2 : 5;
    for (std::uint64_t i = 0; i < 10; ++i)
    {
      const auto batch = gen_batch(s, 50, i);
      for (std::size_t b = 0; b < batch.batch; ++b)
        ASSERT_TRUE(label_consistent(s, batch, b)) << to_string(kind) << " batch " << i << " sample " << b;
    }
  }
}

TEST(FirstTokenRecall, ClassBalance)
{
  TaskSpec s;
  s.seq_len = 4;
  s.num_classes = 4;
  s.seed = 17;
  const std::size_t n = 10000;
  const auto batch = gen_batch(s, n, std::uint64_t{0});
  std::vector<double> counts(4, 0.0);
  for (int label : batch.labels)
    counts[static_cast<std::size_t>(label)] += 1.0;
  const double p = 0.25;
  const double mean = p * n;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (double c : counts)
    EXPECT_LE(std::abs(c - mean), 5 * sigma);
}

TEST(WriteDatasetJsonl, OneObjectPerSample)
{
  TaskSpec s;
  s.seq_len = 6;
  const auto batch = gen_batch(s, 3, std::uint64_t{0});
  std::ostringstream os;
  write_dataset_jsonl(os, batch);
  std::istringstream is(os.str());
  std::string line;
  std::size_t b = 0;
  while (std::getline(is, line))
  {
    const auto row = nlohmann::json::parse(line);
    EXPECT_EQ(row["label"].get<int>(), batch.labels[b]);
    EXPECT_EQ(row["input"].size(), 6u);
    EXPECT_EQ(row["input"][0].get<int>(), batch.token(b, 0));
    ++b;
  }
  EXPECT_EQ(b, 3u);

  s.kind = TaskKind::adding_problem;
  const auto reg = gen_batch(s, 1, std::uint64_t{0});
  std::ostringstream os2;
  write_dataset_jsonl(os2, reg);
  const auto row = nlohmann::json::parse(os2.str());
  EXPECT_EQ(row["input"][0].size(), 2u);
  EXPECT_DOUBLE_EQ(row["label"].get<double>(), reg.targets[0]);
}
