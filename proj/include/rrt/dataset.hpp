#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rrt/tensor.hpp"

namespace rrt {

struct DatasetProvenance {
  std::vector<std::string> sources;  // file paths in load order
  std::vector<std::string> sha256;   // hex digest per source file
  bool normalized = false;           // extra per-channel normalization applied
};

/// Labeled image batch: pixels scaled to [0,1], shape (n, c, h, w).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int class_count = 10;
  DatasetProvenance provenance;

  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
  std::vector<Eigen::Index> sample_shape() const {
    return {images.shape().begin() + 1, images.shape().end()};
  }
  /// Contiguous slice [first, first+count) as a batch tensor.
  Tensor batch(Eigen::Index first, Eigen::Index count) const;
  Dataset subset(const std::vector<std::uint64_t>& indices) const;
};

/// Reads an IDX image/label file pair (optionally gzip-compressed) into a
/// dataset. Images: magic 0x00000803, dims, raw bytes scaled by 1/255.
/// Labels: magic 0x00000801.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Reads CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
/// in R,G,B planes; every file size must be a multiple of 3073.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

/// Seeded sample of n entries without replacement; returns (sampled, rest),
/// disjoint and exhaustive.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, Eigen::Index n,
                                             std::uint64_t seed);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace rrt
