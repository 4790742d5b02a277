#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "ergodic/demos.hpp"
#include "ergodic/errors.hpp"

using namespace ergodic;

namespace
{
Demonstration random_demo(std::mt19937_64& rng, SystemKind system, const std::string& id)
{
  std::uniform_int_distribution<int> len(2, 40);
  std::uniform_real_distribution<double> dt(1e-4, 0.3);
  std::normal_distribution<double> g(0.0, 3.0);
  const int n = len(rng);
  DemoRecorder rec(system, 4);
  double t = g(rng);
  for (int i = 0; i < n; ++i)
  {
    Eigen::VectorXd x(4);
    for (int j = 0; j < 4; ++j)
    {
      x[j] = g(rng) * std::pow(10.0, static_cast<int>(rng() % 9) - 4);
    }
    rec.push(t, x);
    t += dt(rng);
  }
  Demonstration d = rec.finalize(id, rng() % 2 ? Label::positive : Label::negative,
                                 rng() % 2 ? Source::human : Source::synthetic);
  if (rng() % 3 == 0)
  {
    d.weight_override = 0.1 + std::abs(g(rng));
  }
  if (rng() % 3 == 0)
  {
    d.seed = rng();
  }
  return d;
}

DemoSet random_set(std::mt19937_64& rng, int count)
{
  const SystemKind system = rng() % 2 ? SystemKind::cartpole : SystemKind::planar;
  DemoSet set = DemoSet::for_system(system);
  for (int i = 0; i < count; ++i)
  {
    set.demos.push_back(random_demo(rng, system, "d\"" + std::to_string(i)));
  }
  return set;
}
}  // namespace

TEST(Record, DurationAndOrdering)
{
  const std::vector<double> t{0.0, 0.02};
  const std::vector<Eigen::VectorXd> x{Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4)};
  const Demonstration d = record(SystemKind::cartpole, t, x, Label::negative);
  EXPECT_DOUBLE_EQ(d.duration(), 0.02);
  EXPECT_EQ(d.label, Label::negative);

  const std::vector<double> back{0.0, 0.02, 0.01};
  const std::vector<Eigen::VectorXd> x3{x[0], x[1], x[1]};
  EXPECT_THROW(record(SystemKind::cartpole, back, x3, Label::positive), TrajectoryError);
  const std::vector<double> one{0.0};
  const std::vector<Eigen::VectorXd> x1{x[0]};
  EXPECT_THROW(record(SystemKind::cartpole, one, x1, Label::positive), TrajectoryError);
}

TEST(Record, WrongStateDimension)
{
  DemoRecorder rec(SystemKind::planar, 4);
  EXPECT_THROW(rec.push(0.0, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(Serialization, RoundTripIsExact)
{
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 120; ++trial)
  {
    const DemoSet set = random_set(rng, 1 + static_cast<int>(rng() % 4));
    const DemoSet back = parse_demos(serialize_demos(set));
    ASSERT_EQ(back.system, set.system);
    ASSERT_EQ(back.demos.size(), set.demos.size());
    for (std::size_t i = 0; i < set.demos.size(); ++i)
    {
      ASSERT_TRUE(back.demos[i] == set.demos[i]) << "trial " << trial << " demo " << i;
    }
    EXPECT_EQ(back.domain, set.domain);
  }
}

TEST(Serialization, FileRoundTrip)
{
  std::mt19937_64 rng(7);
  const DemoSet set = random_set(rng, 3);
  const auto path = std::filesystem::temp_directory_path() / "ergodic_demo_roundtrip.demos.jsonl";
  save_demos(path, set);
  const DemoSet back = load_demos(path);
  ASSERT_EQ(back.demos.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
  {
    EXPECT_TRUE(back.demos[i] == set.demos[i]);
  }
  std::filesystem::remove(path);
}

TEST(Serialization, HeaderLayout)
{
  DemoSet set = DemoSet::for_system(SystemKind::planar);
  const std::string text = serialize_demos(set);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            R"({"state_dim":4,"state_names":["x","y","x_dot","y_dot"],"system":"planar","version":1})");
}

TEST(Parse, Errors)
{
  const std::string header = R"({"version":1,"system":"cartpole","state_dim":4,"state_names":[]})";
  const std::string good = R"({"id":"a","label":"positive","source":"human","t":[0,1],"x":[[0,0,0,0],[1,1,1,1]]})";
  EXPECT_NO_THROW(parse_demos(header + "\n" + good + "\n"));

  try
  {
    parse_demos(header + "\n" + good + "\n" +
                R"({"id":"b","label":"maybe","source":"human","t":[0,1],"x":[[0,0,0,0],[1,1,1,1]]})");
    FAIL() << "expected ParseError";
  }
  catch (const ParseError& e)
  {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_demos(R"({"version":1,"system":"segway","state_dim":4})"), ParseError);
  EXPECT_THROW(parse_demos(R"({"version":1,"system":"cartpole","state_dim":3})"), DimensionError);
  EXPECT_THROW(
      parse_demos(header + "\n" +
                  R"({"id":"a","label":"positive","source":"human","t":[0,1],"x":[[0,0,0],[1,1,1]]})"),
      DimensionError);
  EXPECT_THROW(parse_demos(header + "\n" + good + "\n" + good), ParseError);
  EXPECT_THROW(parse_demos(header + "\n{not json"), ParseError);
  EXPECT_THROW(parse_demos(""), ParseError);
  EXPECT_THROW(
      parse_demos(header + "\n" +
                  R"({"id":"a","label":"positive","source":"human","t":[1,0],"x":[[0,0,0,0],[1,1,1,1]]})"),
      ParseError);
}

TEST(DemoSet, SplitPreservesOrderAndCount)
{
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial)
  {
    const DemoSet set = random_set(rng, 8);
    const auto [pos, neg] = split_by_label(set);
    EXPECT_EQ(pos.demos.size() + neg.demos.size(), set.demos.size());
    EXPECT_EQ(pos.demos.size(), set.count(Label::positive));
    std::size_t ip = 0, in = 0;
    for (const auto& d : set.demos)
    {
      const auto& side = d.label == Label::positive ? pos.demos[ip++] : neg.demos[in++];
      EXPECT_TRUE(side == d);
    }
  }
}

TEST(DemoSet, FindById)
{
  std::mt19937_64 rng(1);
  const DemoSet set = random_set(rng, 3);
  ASSERT_NE(set.find(set.demos[1].id), nullptr);
  EXPECT_EQ(set.find(set.demos[1].id)->id, set.demos[1].id);
  EXPECT_EQ(set.find("nope"), nullptr);
}

TEST(FormatDouble, SeventeenDigits)
{
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1.0000000000000000");
}
