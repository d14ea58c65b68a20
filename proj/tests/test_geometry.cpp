#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tsnet/errors.hpp"
#include "tsnet/geometry.hpp"
#include "tsnet/log.hpp"

using namespace tsnet;
using namespace tsnet::geometry;

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kFloat64);

BoundingBox random_box(std::mt19937_64& rng, int h, int w) {
  std::uniform_int_distribution<int> xs(0, w - 1), ys(0, h - 1);
  int x0 = xs(rng), x1 = xs(rng), y0 = ys(rng), y1 = ys(rng);
  return {static_cast<double>(std::min(x0, x1)), static_cast<double>(std::min(y0, y1)),
          static_cast<double>(std::max(x0, x1)), static_cast<double>(std::max(y0, y1))};
}

SimilarityMatrix with_valid(const torch::Tensor& values, const torch::Tensor& valid) {
  SimilarityMatrix s;
  s.values = values;
  s.valid = valid;
  return s;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("regular grid corner cases and formula") {
  auto one = regular_grid(1, 1, kDouble);
  CHECK(one.coords.sizes() == torch::IntArrayRef({1, 1, 2}));
  CHECK(one.coords[0][0][0].item<double>() == 0.0);
  CHECK(one.coords[0][0][1].item<double>() == 0.0);

  auto two = oracle::to_coords(regular_grid(2, 2, kDouble).coords);
  const oracle::Coords corners{{-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
  CHECK(oracle::max_abs_diff(two, corners) == 0.0);

  auto g = oracle::to_coords(regular_grid(3, 5, kDouble).coords);
  CHECK(oracle::max_abs_diff(g, oracle::regular_grid(3, 5)) < 1e-15);
  CHECK_THROWS_AS(regular_grid(0, 3), ShapeError);
}

TEST_CASE("cosine similarity examples") {
  // Distinct unit vectors per position: the diagonal is one up to the norm epsilon.
  auto e = torch::eye(4, kDouble).reshape({4, 2, 2});
  auto s = geometry::cosine_similarity(e, e);
  for (int p = 0; p < 4; ++p) CHECK(s.values[p][p].item<double>() == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.valid.all().item<bool>());
  CHECK(s.computed_entries == 16);

  // Orthogonal vectors.
  CHECK(s.values[0][1].item<double>() == 0.0);

  // Zero vectors stay finite.
  auto z = geometry::cosine_similarity(torch::zeros({3, 2, 2}, kDouble), e.narrow(0, 0, 3));
  CHECK(torch::isfinite(z.values).all().item<bool>());
  CHECK(z.values.abs().max().item<double>() == 0.0);

  torch::manual_seed(1);
  auto a = torch::randn({4, 2, 2}, kDouble);
  auto b = torch::randn({4, 2, 2}, kDouble);
  CHECK(oracle::max_abs_diff(oracle::to_matrix(geometry::cosine_similarity(a, b).values), oracle::cosine(a, b)) < 1e-6);

  CHECK_THROWS_AS(geometry::cosine_similarity(a, torch::randn({4, 3, 2}, kDouble)), ShapeError);
}

TEST_CASE("cosine entries stay inside [-1, 1]") {
  torch::manual_seed(2);
  for (int i = 0; i < 20; ++i) {
    auto s = geometry::cosine_similarity(torch::randn({5, 3, 4}), torch::randn({5, 3, 4}));
    CHECK(s.values.abs().max().item<double>() <= 1.0);
  }
}

TEST_CASE("mask-aware similarity with whole-map boxes equals full similarity") {
  torch::manual_seed(3);
  auto a = torch::randn({6, 4, 5}, kDouble);
  auto b = torch::randn({6, 4, 5}, kDouble);
  const BoundingBox all{0, 0, 4, 3};
  const auto before = log::warning_count();
  auto masked = mask_aware_similarity(a, b, all, all);
  auto full = geometry::cosine_similarity(a, b);
  CHECK(torch::equal(masked.values, full.values));
  CHECK(masked.valid.all().item<bool>());
  CHECK(masked.computed_entries == full.computed_entries);
  CHECK_FALSE(masked.fell_back);
  CHECK(log::warning_count() == before);
}

TEST_CASE("mask-aware valid entries match explicit index-set counting") {
  std::mt19937_64 rng(4);
  torch::manual_seed(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 2 + trial % 5, w = 2 + (trial * 3) % 5;
    auto a = torch::randn({3, h, w}, kDouble);
    auto b = torch::randn({3, h, w}, kDouble);
    const auto bs = random_box(rng, h, w);
    const auto bd = random_box(rng, h, w);
    auto s = mask_aware_similarity(a, b, bs, bd);
    const auto in_s = oracle::inside(bs, h, w);
    const auto in_d = oracle::inside(bd, h, w);
    const int64_t n_in_s = std::count(in_s.begin(), in_s.end(), true);
    const int64_t n_in_d = std::count(in_d.begin(), in_d.end(), true);
    const int64_t n_out_s = h * w - n_in_s, n_out_d = h * w - n_in_d;
    if (s.fell_back) {
      CHECK((n_out_s > 0 && n_out_d == 0));
      continue;
    }
    CHECK(s.computed_entries == n_in_s * n_in_d + n_out_s * n_out_d);
    CHECK(s.valid.sum().item<int64_t>() == n_in_s * n_in_d + n_out_s * n_out_d);
    const auto valid = oracle::partition_valid(bs, bd, h, w);
    const auto full = oracle::cosine(a, b);
    const auto values = oracle::to_matrix(s.values);
    for (int p = 0; p < h * w; ++p)
      for (int q = 0; q < h * w; ++q) {
        CHECK(s.valid[p][q].item<bool>() == valid[p][q]);
        if (valid[p][q]) CHECK(std::abs(values[p][q] - full[p][q]) < 1e-12);
      }
  }
}

TEST_CASE("mask-aware falls back with a warning when a subject row has no candidate") {
  torch::manual_seed(5);
  auto a = torch::randn({2, 3, 3}, kDouble);
  const auto before = log::warning_count();
  // Driving box covers everything, subject box does not: outside subject rows would be empty.
  auto s = mask_aware_similarity(a, a, BoundingBox{0, 0, 0, 0}, BoundingBox{0, 0, 2, 2});
  CHECK(s.fell_back);
  CHECK(s.valid.all().item<bool>());
  CHECK(log::warning_count() == before + 1);
}

TEST_CASE("mask-aware grid equals full grid with cross-partition masking") {
  std::mt19937_64 rng(6);
  torch::manual_seed(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 2 + trial % 4, w = 2 + (trial / 4) % 4;
    auto a = torch::randn({4, h, w}, kDouble);
    auto b = torch::randn({4, h, w}, kDouble);
    const auto bs = random_box(rng, h, w);
    const auto bd = random_box(rng, h, w);
    auto masked = mask_aware_similarity(a, b, bs, bd);
    if (masked.fell_back) continue;
    auto full = geometry::cosine_similarity(a, b);
    auto valid = inside_mask(bs, h, w).unsqueeze(1) == inside_mask(bd, h, w).unsqueeze(0);
    const auto grid = regular_grid(h, w, kDouble);
    auto g1 = weighted_grid(masked, grid, {});
    auto g2 = weighted_grid(with_valid(full.values, valid), grid, {});
    CHECK(torch::equal(g1.coords, g2.coords));
  }
}

TEST_CASE("weighted grid examples") {
  const auto grid = regular_grid(3, 3, kDouble);
  auto constant = with_valid(torch::full({9, 9}, 0.3, kDouble), torch::ones({9, 9}, torch::kBool));
  auto centroid = weighted_grid(constant, grid, {});
  CHECK(centroid.coords.abs().max().item<double>() < 1e-12);

  torch::manual_seed(7);
  auto s = with_valid(torch::rand({9, 9}, kDouble) * 2 - 1, torch::ones({9, 9}, torch::kBool));
  auto cold = weighted_grid(s, grid, {1e-8});
  CHECK(cold.coords.abs().max().item<double>() < 1e-5);

  // One entry per row larger by 0.5 than the rest: e^{50} dominance.
  auto values = torch::full({9, 9}, 0.2, kDouble);
  std::vector<int> target{4, 0, 8, 3, 3, 1, 7, 2, 6};
  for (int p = 0; p < 9; ++p) values[p][target[p]] = 0.7;
  auto peaked = weighted_grid(with_valid(values, torch::ones({9, 9}, torch::kBool)), grid, {100.0});
  const auto coords = oracle::to_coords(peaked.coords);
  const auto reg = oracle::regular_grid(3, 3);
  for (int p = 0; p < 9; ++p) {
    CHECK(std::abs(coords[p][0] - reg[target[p]][0]) < 1e-4);
    CHECK(std::abs(coords[p][1] - reg[target[p]][1]) < 1e-4);
  }
}

TEST_CASE("weighted grid matches the softmax oracle and stays in the grid hull") {
  torch::manual_seed(8);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + trial % 4, w = 1 + (trial / 2) % 5;
    const int n = h * w;
    auto values = torch::rand({n, n}, kDouble) * 2 - 1;
    auto valid = torch::rand({n, n}) > 0.4;
    for (int p = 0; p < n; ++p) valid[p][trial % n] = true;
    const double tau = std::vector<double>{1.0, 10.0, 100.0}[trial % 3];
    const auto grid = regular_grid(h, w, kDouble);
    auto g = weighted_grid(with_valid(values, valid), grid, {tau});
    std::vector<std::vector<bool>> vb(n, std::vector<bool>(n));
    for (int p = 0; p < n; ++p)
      for (int q = 0; q < n; ++q) vb[p][q] = valid[p][q].item<bool>();
    const auto expected = oracle::weighted_grid(oracle::to_matrix(values), vb, oracle::regular_grid(h, w), tau);
    CHECK(oracle::max_abs_diff(oracle::to_coords(g.coords), expected) < 1e-9);
    CHECK(g.coords.abs().max().item<double>() <= 1.0);
  }
}

TEST_CASE("weighted grid approaches the argmax coordinate monotonically in tau") {
  torch::manual_seed(9);
  const auto grid = regular_grid(3, 4, kDouble);
  auto values = torch::rand({12, 12}, kDouble) * 2 - 1;
  auto s = with_valid(values, torch::ones({12, 12}, torch::kBool));
  auto argmax = values.argmax(1);
  auto flat = grid.flat();
  std::vector<double> previous(12, std::numeric_limits<double>::infinity());
  for (double tau : {1.0, 10.0, 100.0, 1000.0}) {
    auto g = weighted_grid(s, grid, {tau}).flat();
    for (int p = 0; p < 12; ++p) {
      const double d = (g[p] - flat[argmax[p].item<int64_t>()]).norm().item<double>();
      CHECK(d <= previous[p] + 1e-12);
      previous[p] = d;
    }
  }
}

TEST_CASE("weighted grid rejects rows without valid entries and bad tau") {
  const auto grid = regular_grid(2, 2, kDouble);
  auto valid = torch::ones({4, 4}, torch::kBool);
  valid[2] = false;
  CHECK_THROWS_AS(weighted_grid(with_valid(torch::zeros({4, 4}, kDouble), valid), grid, {}), ShapeError);
  CHECK_THROWS_AS(weighted_grid(with_valid(torch::zeros({4, 4}, kDouble), torch::ones({4, 4}, torch::kBool)),
                                grid, {0.0}),
                  ConfigError);
  CHECK_THROWS_AS(weighted_grid(with_valid(torch::zeros({3, 4}, kDouble), torch::ones({3, 4}, torch::kBool)),
                                grid, {}),
                  ShapeError);
}

TEST_CASE("warp features: identity, corner and bilinear oracle") {
  torch::manual_seed(10);
  auto e = torch::randn({5, 4, 6});
  CHECK(torch::equal(warp_features(e, regular_grid(4, 6)), e));
  auto ed = e.to(torch::kFloat64);
  CHECK(torch::equal(warp_features(ed, regular_grid(4, 6, kDouble)), ed));

  auto corner = SamplingGrid{torch::full({4, 6, 2}, 1.0)};
  auto out = warp_features(e, corner);
  auto expected = e.index({torch::indexing::Slice(), 3, 5}).view({5, 1, 1}).expand({5, 4, 6});
  CHECK(torch::equal(out, expected));

  for (int trial = 0; trial < 10; ++trial) {
    auto map = torch::randn({3, 4, 4}, kDouble);
    auto coords = torch::rand({4, 4, 2}, kDouble) * 2 - 1;
    auto got = warp_features(map, SamplingGrid{coords});
    const auto want = oracle::bilinear(map, oracle::to_coords(coords));
    CHECK(oracle::max_abs_diff(oracle::positions(got), want) < 1e-6);
  }
}

TEST_CASE("warp features clamps out-of-range coordinates to the border") {
  auto map = torch::arange(9, kDouble).view({1, 3, 3});
  auto coords = torch::tensor({-3.0, -3.0, 5.0, 5.0}, kDouble).view({1, 2, 2});
  auto out = warp_features(map, SamplingGrid{coords});
  CHECK(out[0][0][0].item<double>() == 0.0);
  CHECK(out[0][0][1].item<double>() == 8.0);
}

TEST_CASE("patch-wise image warp") {
  torch::manual_seed(11);
  auto image = torch::rand({3, 32, 40});
  CHECK(torch::equal(warp_image_patchwise(image, regular_grid(4, 5)), image));

  auto corner = SamplingGrid{torch::full({4, 5, 2}, -1.0)};
  auto c = warp_image_patchwise(image, corner);
  CHECK(torch::equal(c, image.index({torch::indexing::Slice(), 0, 0}).view({3, 1, 1}).expand({3, 32, 40})));

  CHECK_THROWS_AS(warp_image_patchwise(image, regular_grid(4, 4)), ShapeError);
}

TEST_CASE("patch-wise warp shifts interior pixels by whole patches") {
  torch::manual_seed(12);
  auto image = torch::rand({3, 64, 64}, kDouble);
  auto base = regular_grid(8, 8, kDouble);

  // A normalized shift of exactly 8 pixels at the image resolution.
  const double eight_px = 16.0 / 63.0;
  auto shifted = base.coords.clone();
  shifted.select(2, 0).add_(eight_px);
  auto out = warp_image_patchwise(image, SamplingGrid{shifted});
  using torch::indexing::Slice;
  // Output pixel x samples source x + 8; compare away from the clamped right border.
  auto got = out.index({Slice(), Slice(), Slice(0, 56)});
  auto want = image.index({Slice(), Slice(), Slice(8, 64)});
  CHECK((got - want).abs().max().item<double>() < 1e-9);

  // One feature cell under align-corners is (64 - 1) / (8 - 1) = 9 pixels.
  auto cell = base.coords.clone();
  cell.select(2, 1).add_(2.0 / 7.0);
  auto out9 = warp_image_patchwise(image, SamplingGrid{cell});
  auto got9 = out9.index({Slice(), Slice(0, 55), Slice()});
  auto want9 = image.index({Slice(), Slice(9, 64), Slice()});
  CHECK((got9 - want9).abs().max().item<double>() < 1e-9);
}

TEST_CASE("upsampled regular grid is the fine regular grid") {
  auto up = upsample_grid(regular_grid(4, 5, kDouble), 32, 40);
  CHECK((up.coords - regular_grid(32, 40, kDouble).coords).abs().max().item<double>() < 1e-12);
}

TEST_CASE("geometry gradients agree with finite differences") {
  torch::manual_seed(13);
  // warp_features wrt features and grid, 3x3.
  auto map = torch::randn({2, 3, 3}, kDouble);
  auto coords = (torch::rand({3, 3, 2}, kDouble) * 1.6 - 0.8);
  auto readout = torch::randn({2, 3, 3}, kDouble);

  auto f_map = map.clone().requires_grad_(true);
  auto f_coords = coords.clone().requires_grad_(true);
  (warp_features(f_map, SamplingGrid{f_coords}) * readout).sum().backward();

  auto as_vec = [](const torch::Tensor& t) {
    auto c = t.contiguous().to(torch::kFloat64);
    return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  };
  auto eval_map = [&](const std::vector<double>& x) {
    auto m = torch::tensor(x, kDouble).view({2, 3, 3});
    return (warp_features(m, SamplingGrid{coords}) * readout).sum().item<double>();
  };
  auto eval_grid = [&](const std::vector<double>& x) {
    auto g = torch::tensor(x, kDouble).view({3, 3, 2});
    return (warp_features(map, SamplingGrid{g}) * readout).sum().item<double>();
  };
  CHECK(oracle::max_relative_error(as_vec(f_map.grad()), oracle::numeric_gradient(eval_map, as_vec(map))) < 1e-3);
  CHECK(oracle::max_relative_error(as_vec(f_coords.grad()), oracle::numeric_gradient(eval_grid, as_vec(coords))) <
        1e-3);

  // weighted_grid wrt S.
  const auto grid = regular_grid(3, 3, kDouble);
  auto values = torch::rand({9, 9}, kDouble) * 2 - 1;
  auto valid = torch::ones({9, 9}, torch::kBool);
  auto grid_readout = torch::randn({3, 3, 2}, kDouble);
  for (double tau : {1.0, 10.0, 100.0}) {
    auto v = values.clone().requires_grad_(true);
    (weighted_grid(with_valid(v, valid), grid, {tau}).coords * grid_readout).sum().backward();
    auto eval_s = [&](const std::vector<double>& x) {
      auto s = torch::tensor(x, kDouble).view({9, 9});
      return (weighted_grid(with_valid(s, valid), grid, {tau}).coords * grid_readout).sum().item<double>();
    };
    CHECK(oracle::max_relative_error(as_vec(v.grad()), oracle::numeric_gradient(eval_s, as_vec(values))) < 1e-3);
  }
}

}  // TEST_SUITE
