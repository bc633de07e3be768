#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tribranch/dataset.hpp"
#include "tribranch/extract.hpp"

namespace tribranch {

/// Row-normalized pooled features and their labels.
struct LabeledFeatures {
  Tensor<double> features;  // [N, D]
  std::vector<std::int64_t> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;  // DimensionError on count mismatch, ParameterError on non-finite values
};

// L2-normalizes every row (rows with zero norm stay zero).
LabeledFeatures make_features(const Tensor<double>& raw, std::vector<std::int64_t> labels);

struct KnnConfig {
  int k = 20;
  double temperature = 0.07;
};

/// Weighted k-NN top-1 accuracy: each of the k most cosine-similar training
/// rows votes exp(sim / temperature) for its label; ties in similarity go to
/// the lower training index and ties in votes to the lower label.
/// ParameterError when k <= 0 or k > N_train.
double knn_eval(const LabeledFeatures& train, const LabeledFeatures& test, const KnnConfig& cfg = {});

struct ProbeConfig {
  int epochs = 300;
  double lr = 0.5;
  double weight_decay = 1e-4;
};

/// Multinomial logistic regression trained full-batch by gradient descent on
/// frozen features (with a bias column); returns test top-1 accuracy.
double linear_probe(const LabeledFeatures& train, const LabeledFeatures& test, const ProbeConfig& cfg = {});

// Closed-form ridge regression onto one-hot targets; reference classifier.
double least_squares_classifier(const LabeledFeatures& train, const LabeledFeatures& test, double ridge = 1e-3);

// Bilinear resize of [N, C, H, W] to [N, C, size, size] (half-pixel centers).
template <typename T>
Tensor<T> resize_images(const Tensor<T>& images, int size);

/// Features of one sub-network on a dataset (images resized to the
/// backbone's image size when needed).
template <typename T>
LabeledFeatures view_features(const SubNetView<T>& view, const LabeledImages<T>& data);

struct SweepRow {
  SubNetId id;
  int width = 0;
  std::string depth;  // depth label, "12" or "8x36"
  std::string metric;
  double value = 0;
  double seconds = 0;
};

struct SweepReport {
  ElasticGrid grid;
  std::vector<SweepRow> rows;  // canonical enumerate() order

  // Header `depth,width,metric,value,seconds`; values at full precision.
  void write_csv(std::ostream& out) const;
  static SweepReport read_csv(std::istream& in);  // FormatError on malformed input

  // Pivoted metric table: one row per depth, one column per width.
  void write_table(std::ostream& out) const;
};

/// k-NN accuracy of every sub-network of the grid, evaluated from `store`.
/// GridError when the grid does not match the store.
template <typename T>
SweepReport sweep(ParamStore<T>& store, const ElasticGrid& grid, const Dataset<T>& data, const KnnConfig& knn = {});

enum class ProbeMode { occlusion, shuffle };

/// k-NN accuracy of the intact network with corrupted test images (training
/// features stay clean), one value per level. Occlusion levels are the
/// fraction of patches zeroed in each image, in [0, 1]. Shuffle levels are
/// grid sizes g: the image is cut into g x g cells which are permuted; g must
/// divide the image size. ParameterError on invalid levels or a ResNet store.
template <typename T>
std::vector<double> robustness_probe(ParamStore<T>& store, const Dataset<T>& data, ProbeMode mode,
                                     const std::vector<double>& levels, std::uint64_t seed,
                                     const KnnConfig& knn = {});

// Image-level corruptions used by the probe.
template <typename T>
Tensor<T> occlude_patches(const Tensor<T>& images, int patch, double fraction, std::uint64_t seed);
template <typename T>
Tensor<T> shuffle_grid(const Tensor<T>& images, int grid, std::uint64_t seed);

}  // namespace tribranch
