#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "test_util.hpp"

using namespace netaug;
using namespace testutil;

TEST(WidthGrid, ThreeTimesWithTwoSteps) {
  EXPECT_EQ(build_width_grid(8, 3.0, 2), (std::vector<std::size_t>{8, 16, 24}));
}

TEST(WidthGrid, NoAugmentationIsSingleton) {
  EXPECT_EQ(build_width_grid(8, 1.0, 4), (std::vector<std::size_t>{8}));
}

TEST(WidthGrid, RoundingCollapsesDuplicates) {
  // 1, 1.125, 1.25, 1.375, 1.5 round to 1, 1, 1, 1, 2
  EXPECT_EQ(build_width_grid(1, 1.5, 4), (std::vector<std::size_t>{1, 2}));
}

TEST(WidthGrid, RejectsBadArguments) {
  EXPECT_THROW(build_width_grid(0, 2.0, 2), Error);
  EXPECT_THROW(build_width_grid(4, 0.5, 2), Error);
  EXPECT_THROW(build_width_grid(4, 2.0, 0), Error);
  EXPECT_THROW(build_width_grid(4, std::nan(""), 2), Error);
}

TEST(WidthGrid, PropertyEndpointsAndMonotone) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t w = 1 + rng.index(64);
    const double r = rng.uniform(1.0, 4.0);
    const std::size_t s = 1 + rng.index(4);
    const auto g = build_width_grid(w, r, s);
    ASSERT_FALSE(g.empty());
    EXPECT_EQ(g.front(), w);
    EXPECT_EQ(g.back(), std::size_t(std::llround(r * double(w)))) << w << ' ' << r << ' ' << s;
    EXPECT_LE(g.size(), s + 1);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i - 1], g[i]);
  }
}

TEST(WidthGrid, NonAugmentableLayerKeepsBaseWidth) {
  ArchSpec arch = mlp_arch(4, {8, 6}, 3);
  arch.layers[1].augmentable = false;
  const WidthGrid grid = build_grid(arch, {3.0, 2});
  EXPECT_EQ(grid.rows[0], (std::vector<std::size_t>{8, 16, 24}));
  EXPECT_EQ(grid.rows[1], (std::vector<std::size_t>{6}));
}

TEST(Sampling, ExcludesBaseAndIsUniform) {
  const WidthGrid grid{{{8, 16, 24}, {4, 6, 8, 10}, {5}}};
  Rng rng(2);
  std::map<std::size_t, int> l0, l1;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const WidthConfig c = sample_aug_config(grid, rng);
    ++l0[c.widths[0]];
    ++l1[c.widths[1]];
    EXPECT_EQ(c.widths[2], 5u);
  }
  EXPECT_EQ(l0.count(8), 0u);
  EXPECT_EQ(l1.count(4), 0u);
  // Each cell ~ Binomial(draws, p): allow 5 standard deviations.
  auto check = [&](const std::map<std::size_t, int>& counts, double p) {
    const double sd = std::sqrt(draws * p * (1 - p));
    for (const auto& [w, n] : counts) EXPECT_NEAR(n, draws * p, 5 * sd) << w;
  };
  check(l0, 1.0 / 2);
  check(l1, 1.0 / 3);
}

TEST(Sampling, AllowBaseIncludesBase) {
  const WidthGrid grid{{{8, 16, 24}}};
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) seen.insert(sample_aug_config(grid, rng, true).widths[0]);
  EXPECT_EQ(seen, (std::set<std::size_t>{8, 16, 24}));
}

TEST(Sampling, NothingToAugmentIsConfigError) {
  const WidthGrid grid{{{8}, {4}}};
  Rng rng(0);
  try {
    sample_aug_config(grid, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Supernet, ParamCountMatchesHandCount) {
  const ArchSpec arch = mlp_arch(2, {8, 8}, 3);
  const Supernet net = build_supernet(arch, {3.0, 2});
  // base: 2*8+8 + 8*8+8 + 8*3+3 ; max: 2*24+24 + 24*24+24 + 24*3+3
  EXPECT_EQ(param_count(arch, net.base()), 24u + 72u + 27u);
  EXPECT_EQ(param_count(arch, net.max()), 72u + 600u + 75u);
  EXPECT_EQ(net.params.numel(), param_count(arch, net.max()));
  EXPECT_EQ(param_count(arch, WidthConfig{{16, 24}}), 2u * 16 + 16 + 16 * 24 + 24 + 24 * 3 + 3);
}

TEST(Supernet, ConvParamCount) {
  const ArchSpec arch = conv_arch({3, 8, 8}, {4, 6}, 5);
  // 3*4*9+4 + 4*6*9+6 + 6*5+5
  EXPECT_EQ(param_count(arch, build_supernet(arch, {1.0, 1}).base()), 112u + 222u + 35u);
}

TEST(Supernet, BottleneckAugmentsInnerWidth) {
  ArchSpec arch{{4}, 3, {LayerSpec{LayerKind::dense, 6}, LayerSpec{LayerKind::bottleneck, 6, 12}}};
  const Supernet net = build_supernet(arch, {2.0, 1});
  EXPECT_EQ(net.grid.rows[1], (std::vector<std::size_t>{12, 24}));
  const auto shapes = net.slices(net.max());
  EXPECT_EQ(shapes[2], (Shape{24, 12}));  // expand: inner x in
  EXPECT_EQ(shapes[4], (Shape{6, 24}));   // project: out x inner, output width fixed
  EXPECT_EQ(shapes[6], (Shape{3, 6}));
}

TEST(Supernet, InitBoundsUseMaxFanIn) {
  const ArchSpec arch = mlp_arch(4, {8, 8}, 3);
  const Supernet net = build_supernet(arch, {3.0, 2}, {7, InitFan::max});
  // layer1 weight [24 x 24]: bound sqrt(6 / 24); head [3 x 24]: sqrt(3 / 24)
  const auto bound_of = [](const Tensor& t) {
    float m = 0.0f;
    for (float v : t.data()) m = std::max(m, std::fabs(v));
    return m;
  };
  EXPECT_LE(bound_of(net.params.tensors[2]), std::sqrt(6.0 / 24.0));
  EXPECT_GT(bound_of(net.params.tensors[2]), 0.9 * std::sqrt(6.0 / 24.0));
  EXPECT_LE(bound_of(net.params.tensors[4]), std::sqrt(3.0 / 24.0));
  EXPECT_TRUE(bitwise_equal(net.params.tensors[1], Tensor({24}, 0.0f)));

  const Supernet base_fan = build_supernet(arch, {3.0, 2}, {7, InitFan::base});
  EXPECT_GT(bound_of(base_fan.params.tensors[2]), std::sqrt(6.0 / 24.0));
  EXPECT_LE(bound_of(base_fan.params.tensors[2]), std::sqrt(6.0 / 8.0));
}

TEST(Supernet, InitIsDeterministic) {
  const ArchSpec arch = mlp_arch(4, {8, 8}, 3);
  EXPECT_EQ(build_supernet(arch, {3.0, 2}, {5}).params, build_supernet(arch, {3.0, 2}, {5}).params);
  EXPECT_FALSE(build_supernet(arch, {3.0, 2}, {5}).params == build_supernet(arch, {3.0, 2}, {6}).params);
}

TEST(Supernet, ForwardMatchesReferenceAtEveryConfig) {
  ArchSpec arch{{2, 5, 5},
                4,
                {LayerSpec{LayerKind::conv, 3}, LayerSpec{LayerKind::dense, 4}, LayerSpec{LayerKind::bottleneck, 4, 6}}};
  Supernet net = build_supernet(arch, {2.0, 2}, {1});
  Rng rng(9);
  jitter_biases(net, rng);
  const Tensor x = random_tensor({3, 2, 5, 5}, rng);
  for (std::size_t a : net.grid.rows[0])
    for (std::size_t b : net.grid.rows[1])
      for (std::size_t c : net.grid.rows[2]) {
        const WidthConfig cfg{{a, b, c}};
        const Tensor y = forward_at(net, cfg, x);
        const auto shapes = net.slices(cfg);
        ParamsF64 p;
        for (std::size_t q = 0; q < shapes.size(); ++q) p.push_back(ref::to_vec(leading_slice(net.params.tensors[q], shapes[q])));
        ref::Region region;
        const ref::Vec expect = ref::forward(arch, shapes, p, ref::to_vec(x), 3, region);
        ASSERT_EQ(y.numel(), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-5);
      }
}

TEST(Supernet, ForwardRejectsBadInputsAndConfigs) {
  const Supernet net = build_supernet(mlp_arch(4, {8}, 3), {2.0, 1});
  EXPECT_THROW(forward_at(net, net.base(), Tensor({2, 5})), Error);
  EXPECT_THROW(forward_at(net, WidthConfig{{9}}, Tensor({2, 4})), Error);
  EXPECT_THROW(forward_at(net, WidthConfig{{8, 8}}, Tensor({2, 4})), Error);
}

TEST(Supernet, ExtractBaseMatchesUnaugmentedBuildAndForward) {
  const ArchSpec arch = mlp_arch(3, {5, 7}, 4);
  Rng rng(1);
  for (double r : {1.5, 2.0, 3.0})
    for (std::size_t s : {1u, 2u, 4u}) {
      const Supernet net = build_supernet(arch, {r, s}, {std::uint64_t(s)});
      const Supernet base = extract_base(net);
      const Supernet plain = build_supernet(arch, {1.0, 1});
      EXPECT_EQ(base.params.numel(), plain.params.numel());
      for (std::size_t p = 0; p < base.params.size(); ++p)
        EXPECT_EQ(base.params.tensors[p].shape(), plain.params.tensors[p].shape());
      const Tensor x = random_tensor({10, 3}, rng);
      EXPECT_TRUE(bitwise_equal(forward_at(base, base.base(), x), forward_at(net, net.base(), x)));
    }
}

TEST(Arch, ParseAndFormatRoundTrip) {
  const auto layers = parse_layers("dense:8,conv:4:5:2:2,bottleneck:16:32:fixed");
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_EQ(layers[1].kernel, 5u);
  EXPECT_EQ(layers[1].stride, 2u);
  EXPECT_FALSE(layers[2].augmentable);
  EXPECT_EQ(layers[2].expand, 32u);
  EXPECT_EQ(parse_layers(format_layers(layers)), layers);
}

TEST(Arch, RejectsMalformedSpecs) {
  for (const char* bad : {"dense", "dense:x", "dense:-1", "pool:3", "dense:8:3", "bottleneck:8", "conv:4:3:1:1:1"}) {
    EXPECT_THROW(parse_layers(bad), Error) << bad;
  }
  for (const char* bad : {"dense:0", "conv:4:0", "conv:4:9:1:0", "bottleneck:8:0"}) {
    EXPECT_THROW(validate(ArchSpec{{1, 6, 6}, 3, parse_layers(bad)}), Error) << bad;
  }
  EXPECT_THROW(validate(ArchSpec{{4}, 3, {LayerSpec{LayerKind::conv, 4}}}), Error);
  EXPECT_THROW(validate(ArchSpec{{4}, 1, {}}), Error);
}

TEST(Arch, JsonRoundTrip) {
  ArchSpec arch{{1, 6, 6}, 3, parse_layers("conv:4:3:1:1,dense:8,bottleneck:8:16")};
  EXPECT_EQ(arch_from_json(to_json(arch)).layers, arch.layers);
  EXPECT_EQ(arch_from_json(to_json(arch)).input, arch.input);
}
