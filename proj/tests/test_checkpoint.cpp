#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace netaug;
using namespace testutil;

namespace {

Supernet sample_net() {
  ArchSpec arch{{1, 6, 6}, 3, parse_layers("conv:3:3:1:1,dense:5,bottleneck:5:8")};
  return build_supernet(arch, {2.5, 3}, {42});
}

ErrorKind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::contract;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const Supernet net = sample_net();
  const auto bytes = encode_checkpoint(net, CheckpointKind::supernet);
  const Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.kind, CheckpointKind::supernet);
  EXPECT_EQ(ck.net.arch, net.arch);
  EXPECT_EQ(ck.net.grid, net.grid);
  EXPECT_DOUBLE_EQ(ck.net.aug.ratio, 2.5);
  ASSERT_EQ(ck.net.params.size(), net.params.size());
  for (std::size_t p = 0; p < net.params.size(); ++p) {
    EXPECT_EQ(ck.net.params.names[p], net.params.names[p]);
    EXPECT_TRUE(bitwise_equal(ck.net.params.tensors[p], net.params.tensors[p]));
  }
  EXPECT_EQ(encode_checkpoint(ck.net, CheckpointKind::supernet), bytes);
}

TEST(Checkpoint, BaseFlagAndShapes) {
  const Supernet base = extract_base(sample_net());
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(base, CheckpointKind::base));
  EXPECT_EQ(ck.kind, CheckpointKind::base);
  EXPECT_EQ(ck.net.params.numel(), param_count(base.arch, base.base()));
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(sample_net(), CheckpointKind::base);
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NAUG");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // flags: base model
}

TEST(Checkpoint, EveryTruncationIsAParseError) {
  const auto bytes = encode_checkpoint(extract_base(sample_net()), CheckpointKind::base);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + std::ptrdiff_t(n));
    EXPECT_EQ(decode_error(cut), ErrorKind::parse) << n;
  }
}

TEST(Checkpoint, CorruptionsAreParseErrors) {
  const auto good = encode_checkpoint(sample_net(), CheckpointKind::supernet);
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorKind::parse);
  bad = good;
  bad[4] = 9;  // version
  EXPECT_EQ(decode_error(bad), ErrorKind::parse);
  bad = good;
  bad[8] = 6;  // unknown flag bits
  EXPECT_EQ(decode_error(bad), ErrorKind::parse);
  bad = good;
  bad[16] = '!';  // inside the json
  EXPECT_EQ(decode_error(bad), ErrorKind::parse);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(decode_error(bad), ErrorKind::parse);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  Supernet net = sample_net();
  net.params.tensors[0] = Tensor({2, 1, 3, 3});
  EXPECT_EQ(decode_error(encode_checkpoint(net, CheckpointKind::supernet)), ErrorKind::parse);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint("/nonexistent/dir/model.naug");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = temp_dir("checkpoint");
  const Supernet net = sample_net();
  save_checkpoint((dir / "a.naug").string(), net, CheckpointKind::supernet);
  EXPECT_EQ(load_checkpoint((dir / "a.naug").string()).net.params, net.params);
}
