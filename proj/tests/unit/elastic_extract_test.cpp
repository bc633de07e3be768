#include <doctest.h>

#include "oracles.hpp"
#include "toys.hpp"
#include "tribranch/backbone.hpp"
#include "tribranch/extract.hpp"
#include "tribranch/ops.hpp"

using namespace tribranch;

namespace {

// Tensor whose flat entry k holds k.
Tensor<double> iota(Shape s) {
  Tensor<double> t(std::move(s));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(k);
  return t;
}

Tensor<double> images(std::size_t b, int size, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor<double>({b, 3, static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, rng);
}

struct Family3 {
  BackboneSpec spec;
  ElasticGrid grid;
};

std::vector<Family3> families() { return {{toys::vit(), toys::vit_grid()}, {toys::swin(), toys::swin_grid()}, {toys::resnet(), toys::resnet_grid()}}; }

}  // namespace

TEST_CASE("attention output projection slice") {
  const auto plan = slicing::msa<double>("vit.0", 2, 2.0);
  const Tensor<double> w = iota({4, 4});
  CHECK(take_prefix(w, plan.at("vit.0.attn_proj.weight")) == Tensor<double>::matrix({{0, 2}, {8, 10}}));
  CHECK(take_prefix(iota({4}), plan.at("vit.0.attn_proj.bias")) == Tensor<double>(Shape{2}, std::vector<double>{0, 1}));
  for (const char* p : {"attn_q", "attn_k", "attn_v"}) {
    const auto& s = plan.at(std::string("vit.0.") + p + ".weight");
    CHECK(s.extents == Shape{2, 2});
    CHECK(s.alpha == 2.0);
    CHECK(plan.at(std::string("vit.0.") + p + ".bias").alpha == 1.0);
  }
  const auto full = slicing::msa<double>("vit.0", 4, 1.0);
  CHECK(take_prefix(w, full.at("vit.0.attn_proj.weight")) == w);
}

TEST_CASE("mlp slice") {
  const auto plan = slicing::mlp<double>("vit.1", 2, 2, 2.0);
  const Tensor<double> w1 = iota({8, 4});
  Tensor<double> expect(Shape{4, 2});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 2; ++c) expect.at(r, c) = 2.0 * static_cast<double>(4 * r + c);
  }
  CHECK(take_prefix(w1, plan.at("vit.1.mlp_fc1.weight")) == expect);
  CHECK(plan.at("vit.1.mlp_fc2.weight").extents == Shape{2, 4});
  CHECK(plan.at("vit.1.mlp_fc2.weight").alpha == 2.0);
  CHECK(plan.at("vit.1.mlp_fc1.bias").extents == Shape{4});
  CHECK(plan.at("vit.1.mlp_fc2.bias").alpha == 1.0);
}

TEST_CASE("layer norm slice is an unscaled prefix") {
  const auto plan = slicing::layer_norm<double>("vit.0.norm1", 2);
  const Tensor<double> gamma(Shape{4}, std::vector<double>{1, 2, 3, 4});
  CHECK(take_prefix(gamma, plan.at("vit.0.norm1.weight")) == Tensor<double>(Shape{2}, std::vector<double>{1, 2}));
  CHECK(plan.at("vit.0.norm1.bias").alpha == 1.0);
}

TEST_CASE("bottleneck middle-channel slice") {
  BackboneSpec spec = toys::resnet();
  const auto plan = slicing::resnet_block<double>(spec, 0, 0, 2, 2.0);
  const std::string b = "resnet.0.0";
  // conv2 [4, 4, 3, 3] restricted to one kernel location matches the 2D rule
  const Tensor<double> w2 = iota({4, 4, 3, 3});
  const Tensor<double> s2 = take_prefix(w2, plan.at(b + ".conv2.weight"));
  REQUIRE(s2.shape() == Shape{2, 2, 3, 3});
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(s2[(o * 2 + c) * 9] == 2.0 * static_cast<double>((o * 4 + c) * 9));
  }
  CHECK(plan.at(b + ".conv1.weight").alpha == 1.0);
  CHECK(plan.at(b + ".conv1.weight").extents[0] == 2);
  CHECK(plan.at(b + ".conv3.weight").extents == Shape{16, 2, 1, 1});
  CHECK(plan.at(b + ".conv3.weight").alpha == 2.0);
  CHECK(plan.at(b + ".shortcut.weight").alpha == 1.0);
}

TEST_CASE("patch merging slice") {
  BackboneSpec spec = toys::swin();
  const auto plan = slicing::swin_stage<double>(spec, 0, {0, 1}, 8, 2.0);
  CHECK(plan.at("swin.0.merge.reduction.weight").extents == Shape{16, 32});
  CHECK(plan.at("swin.0.merge.reduction.weight").alpha == 2.0);
  CHECK(plan.at("swin.0.merge.norm.weight").extents == Shape{32});
  CHECK(plan.at("swin.0.merge.norm.weight").alpha == 1.0);
  CHECK(plan.at("swin.0.1.mlp_fc1.weight").extents == Shape{16, 8});
}

TEST_CASE("head first layer slice") {
  const HeadConfig heads{3, 2, {5}};
  const auto plan = slicing::head_first_layer<double>(heads, 0, 3, 2, 4, 2.0);
  Tensor<double> w = iota({3, 4});
  CHECK(take_prefix(w, plan.at("head0.fc1.weight")) == Tensor<double>::matrix({{0, 2}, {8, 10}, {16, 18}}));
  for (const char* n : {"head0.fc2.weight", "head0.fc3.weight", "head0.proto.weight", "head0.fc1.bias"}) {
    CHECK(plan.at(n).alpha == 1.0);
  }
  const auto same = slicing::head_first_layer<double>(heads, 0, 3, 4, 4, 2.0);
  CHECK(same.at("head0.fc1.weight").alpha == 1.0);
}

TEST_CASE("identity lattice point is the identity plan") {
  for (const auto& f : families()) {
    auto store = make_store<double>(f.spec, f.grid, toys::heads(), 1);
    const auto view = intact_view(store);
    CHECK(view.is_identity());
    CHECK(view.alpha() == 1.0);
    CHECK(view.plan().size() == store.size());
    CHECK_FALSE(materialize(store, f.grid, SubNetId{1, 0}).is_identity());
    CHECK_THROWS_AS(materialize(store, f.grid, SubNetId{f.grid.width_steps + 1, 0}), RangeError);
    CHECK_THROWS_AS(materialize(store, f.grid, SubNetId{0, f.grid.depth_count()}), RangeError);
  }
}

TEST_CASE("alpha is the exact width ratio") {
  auto store = make_store<float>(toys::vit(), toys::vit_grid(), toys::heads(), 2);
  CHECK(materialize(store, toys::vit_grid(), SubNetId{1, 0}).alpha() == 32.0f / 24.0f);
  CHECK(materialize(store, toys::vit_grid(), SubNetId{2, 0}).alpha() == 2.0f);
}

TEST_CASE("a grid that does not describe the store is rejected") {
  auto store = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 1);
  ElasticGrid wrong = toys::vit_grid();
  wrong.depth_max = 6;
  CHECK_THROWS_AS(materialize(store, wrong, SubNetId{0, 0}), GridError);
  wrong = toys::vit_grid();
  wrong.head_dim = 4;
  CHECK_THROWS_AS(materialize(store, wrong, SubNetId{0, 0}), GridError);
}

TEST_CASE("view forward matches the loop-copied network") {
  for (const auto& f : families()) {
    auto store = make_store<double>(f.spec, f.grid, toys::heads(), 3, false);
    oracle::jitter_params(store, 4, 0.1);
    const auto x = images(2, f.spec.image_size, 5);
    for (const SubNetId id : enumerate(f.grid)) {
      auto copy = oracle::loop_subnet(store, f.grid, id);
      Graph<double> g1, g2;
      const auto a = forward(g1, materialize(store, f.grid, id), x);
      const auto b = forward(g2, copy, x);
      CAPTURE(to_string(f.spec.family));
      CAPTURE(id.i);
      CAPTURE(id.j);
      CHECK(max_abs_diff(a.pooled.value(), b.pooled.value()) < 1e-12);
      CHECK(max_abs_diff(a.tokens.value(), b.tokens.value()) < 1e-12);
    }
  }
}

TEST_CASE("bake agrees with the loop oracle and with the live view") {
  for (const auto& f : families()) {
    auto store = make_store<double>(f.spec, f.grid, toys::heads(), 6);
    oracle::jitter_params(store, 7, 0.1);
    const SubNetId id{1, 1};
    const auto view = materialize(store, f.grid, id);
    const auto baked = bake(view);
    const auto copy = oracle::loop_subnet(store, f.grid, id);
    CHECK(baked.spec() == copy.spec());
    REQUIRE(baked.size() == copy.size());
    for (const auto& [name, p] : copy) {
      REQUIRE(baked.contains(name));
      CHECK(baked.at(name).value == p.value);
    }
    CHECK_FALSE(baked.has_heads());
    auto baked_mut = baked;
    const auto x = images(2, f.spec.image_size, 8);
    Graph<double> g1, g2;
    CHECK(max_abs_diff(forward(g1, view, x).pooled.value(), forward(g2, baked_mut, x).pooled.value()) < 1e-12);
  }
}

TEST_CASE("bake of the full network copies every backbone tensor byte for byte") {
  for (const auto& f : families()) {
    auto store = make_store<float>(f.spec, f.grid, toys::heads(), 9);
    const auto baked = bake(intact_view(store));
    for (const auto& [name, p] : baked) CHECK(p.value == store.at(name).value);
    // seven head tensors per head are left out
    CHECK(baked.size() + 7 * static_cast<std::size_t>(toys::heads().count()) == store.size());
  }
}

TEST_CASE("view forward equals loop copy in 32-bit within 1e-6") {
  auto store = make_store<float>(toys::vit(), toys::vit_grid(), toys::heads(), 10, false);
  oracle::jitter_params(store, 11, 0.1);
  const auto x = images(2, 16, 12).cast<float>();
  const SubNetId id{2, 2};
  auto copy = oracle::loop_subnet(store, toys::vit_grid(), id);
  Graph<float> g1, g2;
  const auto a = forward(g1, materialize(store, toys::vit_grid(), id), x);
  const auto b = forward(g2, copy, x);
  CHECK(max_abs_diff(a.tokens.value(), b.tokens.value()) < 1e-6f);
}

TEST_CASE("gradients through a view land only in the sliced regions") {
  for (const auto& f : families()) {
    auto store = make_store<double>(f.spec, f.grid, toys::heads(), 13, false);
    oracle::jitter_params(store, 14, 0.1);
    const SubNetId id{2, 2};
    const auto view = materialize(store, f.grid, id);
    Graph<double> g;
    const auto out = forward(g, view, images(2, f.spec.image_size, 15));
    g.backward(ops::sum(ops::gelu(out.pooled)));
    for (const auto& [name, p] : store) {
      CAPTURE(name);
      if (!view.contains(name)) {
        for (double v : p.grad.data()) REQUIRE(v == 0.0);
        continue;
      }
      const Shape& ext = view.slice(name).extents;
      bool any = false;
      for (std::size_t k = 0; k < p.grad.size(); ++k) {
        std::size_t rem = k;
        bool inside = true;
        for (std::size_t a = p.grad.rank(); a-- > 0;) {
          inside = inside && (rem % p.grad.dim(a)) < ext[a];
          rem /= p.grad.dim(a);
        }
        if (!inside) REQUIRE(p.grad[k] == 0.0);
        any = any || p.grad[k] != 0.0;
      }
      // key biases cancel in the attention softmax
      if (name.ends_with(".weight")) CHECK(any);
    }
  }
}

TEST_CASE("heads share every layer after the first") {
  auto store = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 16);
  const auto view = materialize(store, toys::vit_grid(), SubNetId{2, 1});
  CHECK(view.slice("head1.fc2.weight").is_identity(store.at("head1.fc2.weight").value.shape()));
  store.at("head1.fc2.weight").value[0] = 42.0;
  Graph<double> g;
  CHECK(view.leaf(g, "head1.fc2.weight").value()[0] == 42.0);
  CHECK(view.slice("head1.fc1.weight").extents == Shape{16, 16});
  CHECK(view.slice("head1.fc1.weight").alpha == 2.0);
}

TEST_CASE("large grid resolves the small lattice corner to the small shape") {
  BackboneSpec large;
  large.family = Family::vit;
  large.image_size = 224;
  large.patch_size = 16;
  large.head_dim = 64;
  large.num_heads = 16;
  large.depth = 24;
  const ElasticGrid grid{64, 16, 10, 24, 12, {}};
  const SubNetId id{width_index(grid, 384), depth_index(grid, {12})};
  const BackboneSpec small = sub_spec(large, grid, id);
  CHECK(small.max_width() == 384);
  CHECK(small.num_heads == 6);
  CHECK(small.depth == 12);
  CHECK(small == oracle::sub_spec(large, grid, id));
  const ResolvedArch arch = resolve_arch(large, grid, id);
  CHECK(arch.stage_blocks.at(0) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 23});
  const auto shapes = backbone_param_shapes(small);
  std::size_t blocks = 0;
  for (const auto& [name, shape] : shapes) {
    if (name.ends_with(".attn_q.weight")) {
      ++blocks;
      CHECK(shape == Shape{384, 384});
    }
    if (name.ends_with(".mlp_fc1.weight")) CHECK(shape == Shape{1536, 384});
  }
  CHECK(blocks == 12);
}

TEST_CASE("block renaming") {
  const BackboneSpec spec = toys::vit();
  const ResolvedArch arch = resolve_arch(spec, toys::vit_grid(), SubNetId{0, 2});
  CHECK(arch.stage_blocks.at(0) == std::vector<int>{0, 3});
  CHECK(renumbered_name("vit.3.attn_q.weight", spec, arch) == "vit.1.attn_q.weight");
  CHECK(renumbered_name("vit.pos_embed", spec, arch) == "vit.pos_embed");
}
