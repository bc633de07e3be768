#pragma once

#include "tribranch/extract.hpp"
#include "tribranch/graph.hpp"
#include "tribranch/rng.hpp"

namespace tribranch {

/// Backbone outputs.
///
/// `tokens` is [B, T, D] for transformers (ViT includes the class token at
/// position 0) and channel-last [B, H, W, C] for ResNet. `pooled` is [B, F].
template <typename T>
struct FeatureBatch {
  Var<T> tokens;
  Var<T> pooled;
};

struct ForwardOptions {
  bool training = false;  // enables drop path
  Rng* rng = nullptr;     // required when training with a positive drop-path rate
};

/// Forward pass of the sub-network described by `view` on images [B, C, H, W].
///
/// H must equal W and, for transformers, be a multiple of the patch size; a
/// size different from the spec's image size uses bilinearly resized
/// positional embeddings. Throws DimensionError on channel or size mismatch.
template <typename T>
FeatureBatch<T> forward(Graph<T>& g, const SubNetView<T>& view, const Tensor<T>& images,
                        const ForwardOptions& opts = {});

// Intact network.
template <typename T>
FeatureBatch<T> forward(Graph<T>& g, ParamStore<T>& store, const Tensor<T>& images, const ForwardOptions& opts = {}) {
  return forward(g, intact_view(store), images, opts);
}

/// Stochastic depth: each sample's residual branch is dropped with
/// probability `rate` and survivors are scaled by 1 / (1 - rate). Identity
/// when not training or when rate is 0. Throws ParameterError unless
/// 0 <= rate < 1.
template <typename T>
Var<T> drop_path(Var<T> x, double rate, bool training, Rng* rng);

/// Bilinear resampling matrix [dst*dst, src*src] (half-pixel centers, edge
/// clamped) for a square grid of positional embeddings.
template <typename T>
Tensor<T> resize_matrix(std::size_t src, std::size_t dst);

// [B, C, H, W] -> [B * (H/p) * (W/p), C*p*p], rows in raster order, columns
// ordered (c, dy, dx).
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);

/// Pooled features of every image, evaluated without gradients in chunks.
template <typename T>
Tensor<T> pooled_features(const SubNetView<T>& view, const Tensor<T>& images, std::size_t chunk = 256);

}  // namespace tribranch
