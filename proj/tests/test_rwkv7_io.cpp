#include "lady/rwkv7_io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace lady;
using namespace lady::rwkv7;
using lady::testing::random_tokens;

namespace
{

template <typename T>
bool same_block(const BlockParams<T> & a, const BlockParams<T> & b)
{
  return a.d == b.d && a.n_heads == b.n_heads && a.W_r == b.W_r && a.W_k == b.W_k &&
         a.W_v == b.W_v && a.W_o == b.W_o && a.W_k_cm == b.W_k_cm && a.W_v_cm == b.W_v_cm &&
         a.mu_w == b.mu_w && a.mu_k_cm == b.mu_k_cm && a.lora_w.A == b.lora_w.A &&
         a.lora_g.B == b.lora_g.B && a.lora_a.lambda == b.lora_a.lambda && a.xi == b.xi &&
         a.alpha == b.alpha && a.rho == b.rho && a.ln_out.gamma == b.ln_out.gamma;
}

}  // namespace

TEST(ParamSnapshot, RoundTripIsExact)
{
  const auto f = random_stack<float>({8, 2, 12, 3}, 2, 5);
  const auto f2 = stack_from_json<float>(nlohmann::json::parse(stack_to_json(f).dump()));
  ASSERT_EQ(f2.size(), 2u);
  EXPECT_TRUE(same_block(f[0], f2[0]));
  EXPECT_TRUE(same_block(f[1], f2[1]));

  const auto d = random_stack<double>({8, 1, 0, 0}, 1, 6);
  const auto path = std::filesystem::temp_directory_path() / "lady_params_test.json";
  save_stack(d, path);
  const auto d2 = load_stack<double>(path);
  EXPECT_TRUE(same_block(d[0], d2[0]));
  std::filesystem::remove(path);
}

TEST(ParamSnapshot, LoaderValidatesShapes)
{
  const auto b = random_block<double>({8, 1, 0, 0}, 7);
  auto j = block_to_json(b);
  j["tensors"].erase("W_r");
  EXPECT_THROW(block_from_json<double>(j), FormatError);

  j = block_to_json(b);
  j["tensors"]["xi"]["shape"] = {7};
  EXPECT_THROW(block_from_json<double>(j), DimensionError);

  j = block_to_json(b);
  j["tensors"]["W_o"]["data"].erase(0);
  EXPECT_THROW(block_from_json<double>(j), DimensionError);

  j = block_to_json(b);
  j["n_heads"] = 3;
  EXPECT_THROW(block_from_json<double>(j), ConfigError);

  j = block_to_json(b);
  j["tensors"]["mu_a"]["data"][0] = 2.0;
  EXPECT_THROW(block_from_json<double>(j), ConfigError);
}

TEST(StateSnapshot, ResumeIsBitExact)
{
  const auto stack = random_stack<float>({16, 4, 0, 0}, 2, 11);
  const auto tokens = random_tokens<float>(30, 16, 12);
  const Tokens<float> head = tokens.topRows(17);
  const Tokens<float> tail = tokens.bottomRows(13);

  auto live = RecurrentState<float>::fresh_for(stack);
  stack_forward(head, stack, live, ExecConfig::chunked(8));

  std::stringstream buf;
  write_state(buf, live, {3});
  SnapshotInfo info;
  auto restored = read_state<float>(buf, &info);
  EXPECT_EQ(info.frames, 3u);
  EXPECT_TRUE(restored == live);
  EXPECT_EQ(restored.byte_size(), live.byte_size());

  const auto a = stack_forward(tail, stack, live, ExecConfig::chunked(8));
  const auto b = stack_forward(tail, stack, restored, ExecConfig::chunked(8));
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(live == restored);
}

TEST(StateSnapshot, RejectsCorruptInput)
{
  const auto state = RecurrentState<double>::fresh(8, 2, 2);
  std::stringstream buf;
  write_state(buf, state);
  const std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_state<double>(truncated), FormatError);

  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  EXPECT_THROW(read_state<double>(bad_magic), FormatError);

  std::stringstream wrong_precision(bytes);
  EXPECT_THROW(read_state<float>(wrong_precision), FormatError);
}

TEST(StateSnapshot, FileRoundTrip)
{
  const auto stack = random_stack<double>({8, 1, 0, 0}, 1, 13);
  auto state = RecurrentState<double>::fresh_for(stack);
  stack_forward(random_tokens<double>(9, 8, 14), stack, state, ExecConfig::sequential());
  const auto path = std::filesystem::temp_directory_path() / "lady_state_test.bin";
  save_state(state, path, {9});
  SnapshotInfo info;
  EXPECT_TRUE(load_state<double>(path, &info) == state);
  EXPECT_EQ(info.frames, 9u);
  std::filesystem::remove(path);
}
