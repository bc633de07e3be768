#include <doctest.h>

#include <Eigen/Dense>
#include <sstream>

#include "oracles.hpp"
#include "toys.hpp"
#include "tribranch/evalkit.hpp"

using namespace tribranch;

namespace {

// Gaussian blobs around scaled basis directions.
LabeledFeatures blobs(std::size_t n, int classes, std::size_t dim, double spread, double noise, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> x({n, dim});
  std::vector<std::int64_t> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    y[r] = static_cast<std::int64_t>(r % static_cast<std::size_t>(classes));
    for (std::size_t c = 0; c < dim; ++c) {
      x.at(r, c) = noise * rng.normal() + (c == static_cast<std::size_t>(y[r]) ? spread : 0.0);
    }
  }
  return make_features(x, y);
}

}  // namespace

TEST_CASE("feature rows are unit length") {
  Tensor<double> x = Tensor<double>::matrix({{3, 4}, {0, 0}, {-1, 0}});
  const auto f = make_features(x, {0, 1, 2});
  CHECK(f.features.at(0, 0) == doctest::Approx(0.6));
  CHECK(f.features.at(0, 1) == doctest::Approx(0.8));
  CHECK(f.features.at(1, 0) == 0.0);
  CHECK(f.features.at(2, 0) == -1.0);
  CHECK_THROWS_AS(make_features(x, {0, 1}), DimensionError);
}

TEST_CASE("k-NN on its own training set with k = 1 is perfect") {
  const auto f = blobs(90, 3, 8, 0.3, 1.0, 1);
  CHECK(knn_eval(f, f, {1, 0.07}) == 1.0);
}

TEST_CASE("k-NN separates well-separated classes") {
  const auto train = blobs(300, 3, 6, 5.0, 1.0, 2);
  const auto test = blobs(150, 3, 6, 5.0, 1.0, 3);
  CHECK(knn_eval(train, test) > 0.95);
}

TEST_CASE("k-NN on random labels sits near chance") {
  Rng rng(4);
  const int classes = 4;
  auto random_set = [&](std::size_t n) {
    Tensor<double> x = oracle::random_tensor<double>({n, 16}, rng);
    std::vector<std::int64_t> y(n);
    for (auto& v : y) v = static_cast<std::int64_t>(rng.below(classes));
    return make_features(x, y);
  };
  const auto train = random_set(3000);
  const auto test = random_set(2000);
  CHECK(std::abs(knn_eval(train, test) - 1.0 / classes) < 0.04);
}

TEST_CASE("k-NN accuracy is unchanged by a rotation of feature space") {
  const auto train = blobs(200, 4, 10, 1.0, 1.0, 5);
  const auto test = blobs(100, 4, 10, 1.0, 1.0, 6);
  Rng rng(7);
  Eigen::MatrixXd a(10, 10);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  auto rotate = [&](const LabeledFeatures& f) {
    Tensor<double> out(f.features.shape());
    for (std::size_t r = 0; r < f.size(); ++r) {
      for (std::size_t c = 0; c < 10; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < 10; ++k) s += q(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) * f.features.at(r, k);
        out.at(r, c) = s;
      }
    }
    return make_features(out, f.labels);
  };
  const double base = knn_eval(train, test);
  CHECK(std::abs(knn_eval(rotate(train), rotate(test)) - base) <= 1.0 / 100 + 1e-12);
}

TEST_CASE("k-NN argument checks") {
  const auto f = blobs(10, 2, 4, 1.0, 1.0, 8);
  CHECK_THROWS_AS(knn_eval(f, f, {0, 0.07}), ParameterError);
  CHECK_THROWS_AS(knn_eval(f, f, {11, 0.07}), ParameterError);
  CHECK_NOTHROW(knn_eval(f, f, {10, 0.07}));
}

TEST_CASE("linear probe") {
  const auto train = blobs(300, 3, 6, 5.0, 0.5, 9);
  const auto test = blobs(150, 3, 6, 5.0, 0.5, 10);
  CHECK(linear_probe(train, test) == 1.0);

  LabeledFeatures one = blobs(30, 1, 4, 1.0, 1.0, 11);
  CHECK(linear_probe(one, one) == 1.0);

  const auto htrain = blobs(600, 4, 8, 0.6, 1.0, 12);
  const auto htest = blobs(400, 4, 8, 0.6, 1.0, 13);
  const double probe = linear_probe(htrain, htest);
  const double ls = least_squares_classifier(htrain, htest);
  CHECK(probe > 0.4);
  CHECK(std::abs(probe - ls) < 0.05);
}

TEST_CASE("image resizing") {
  Rng rng(14);
  const auto img = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
  CHECK(resize_images(img, 8) == img);
  Tensor<double> flat({1, 3, 8, 8}, 0.25);
  const auto up = resize_images(flat, 12);
  CHECK(up.shape() == Shape{1, 3, 12, 12});
  for (double v : up.data()) REQUIRE(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("image corruptions") {
  Tensor<double> ones({2, 3, 16, 16}, 1.0);
  const auto half = occlude_patches(ones, 4, 0.5, 1);
  double s = 0;
  for (double v : half.data()) s += v;
  CHECK(s == 2 * 3 * 8 * 16);
  CHECK(occlude_patches(ones, 4, 0.0, 1) == ones);
  CHECK_THROWS_AS(occlude_patches(ones, 5, 0.5, 1), ParameterError);
  CHECK_THROWS_AS(occlude_patches(ones, 4, 1.5, 1), ParameterError);

  Rng rng(15);
  const auto img = oracle::random_tensor<double>({2, 3, 16, 16}, rng);
  CHECK(shuffle_grid(img, 1, 3) == img);
  const auto sh = shuffle_grid(img, 4, 3);
  std::vector<double> a(img.data().begin(), img.data().end()), b(sh.data().begin(), sh.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK_FALSE(sh == img);
  CHECK_THROWS_AS(shuffle_grid(img, 3, 3), ParameterError);
}

TEST_CASE("sweep covers the grid and matches direct evaluation") {
  auto store = make_store<float>(toys::vit(), toys::vit_grid(), toys::heads(), 16, false);
  const auto data = make_shapes<float>(60, 30, 16, 17);
  const SweepReport rep = sweep(store, toys::vit_grid(), data);
  REQUIRE(rep.rows.size() == 9);
  const auto ids = enumerate(toys::vit_grid());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    CHECK(rep.rows[k].id == ids[k]);
    CHECK(rep.rows[k].metric == "knn_top1");
  }
  CHECK(rep.rows[0].width == 32);
  CHECK(rep.rows[0].depth == "4");
  const auto v = intact_view(store);
  CHECK(rep.rows[0].value == knn_eval(view_features(v, data.train), view_features(v, data.test)));
  const auto small = materialize(store, toys::vit_grid(), ids[8]);
  CHECK(rep.rows[8].value == knn_eval(view_features(small, data.train), view_features(small, data.test)));

  ElasticGrid wrong = toys::vit_grid();
  wrong.depth_max = 6;
  CHECK_THROWS_AS(sweep(store, wrong, data), GridError);
}

TEST_CASE("sweep CSV round trip") {
  SweepReport rep;
  rep.grid = toys::vit_grid();
  for (const SubNetId id : enumerate(rep.grid)) {
    rep.rows.push_back({id, width_of(rep.grid, id.i), depth_label(rep.grid, id.j), "knn_top1",
                        1.0 / 3.0 + 0.01 * id.i + 0.1 * id.j, 0.125});
  }
  std::stringstream ss;
  rep.write_csv(ss);
  CHECK(ss.str().rfind("depth,width,metric,value,seconds\n", 0) == 0);
  const SweepReport back = SweepReport::read_csv(ss);
  REQUIRE(back.rows.size() == rep.rows.size());
  for (std::size_t k = 0; k < rep.rows.size(); ++k) {
    CHECK(back.rows[k].width == rep.rows[k].width);
    CHECK(back.rows[k].depth == rep.rows[k].depth);
    CHECK(back.rows[k].metric == rep.rows[k].metric);
    CHECK(back.rows[k].value == rep.rows[k].value);
  }
  std::stringstream table;
  rep.write_table(table);
  CHECK(table.str().find("32") != std::string::npos);

  std::stringstream bad("depth,width,metric,value,seconds\n4,thirty,knn_top1,0.5,1\n");
  CHECK_THROWS_AS(SweepReport::read_csv(bad), FormatError);
  std::stringstream header("nope\n");
  CHECK_THROWS_AS(SweepReport::read_csv(header), FormatError);
}

TEST_CASE("robustness probes") {
  auto store = make_store<float>(toys::vit(), toys::vit_grid(), toys::heads(), 18, false);
  const auto data = make_shapes<float>(60, 30, 16, 19);
  const auto v = intact_view(store);
  const double clean = knn_eval(view_features(v, data.train), view_features(v, data.test));
  const auto occ = robustness_probe(store, data, ProbeMode::occlusion, {0.0, 1.0}, 1);
  CHECK(occ[0] == clean);
  // blank images share one feature vector so every test image gets the same vote
  CHECK(occ[1] == doctest::Approx(1.0 / 3.0));
  const auto sh = robustness_probe(store, data, ProbeMode::shuffle, {1.0, 4.0}, 1);
  CHECK(sh[0] == clean);
  CHECK_THROWS_AS(robustness_probe(store, data, ProbeMode::shuffle, {3.0}, 1), ParameterError);
  CHECK_THROWS_AS(robustness_probe(store, data, ProbeMode::occlusion, {-0.5}, 1), ParameterError);
  auto res = make_store<float>(toys::resnet(), toys::resnet_grid(), toys::heads(), 1, false);
  const auto small = make_shapes<float>(6, 3, 8, 1);
  CHECK_THROWS_AS(robustness_probe(res, small, ProbeMode::occlusion, {0.5}, 1), ParameterError);
}
