#include "rrt/dataset.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cstring>
#include <fstream>

#include "rrt/errors.hpp"
#include "rrt/rng.hpp"

namespace rrt {

namespace {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

bool is_gzip(const std::vector<unsigned char>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& bytes,
                                  const std::string& name) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw io_error("zlib init failure");
  std::vector<unsigned char> out;
  out.reserve(bytes.size() * 4);
  unsigned char buffer[1 << 16];
  zs.next_in = const_cast<unsigned char*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buffer;
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw io_error("corrupt gzip stream: " + name);
    }
    out.insert(out.end(), buffer, buffer + (sizeof(buffer) - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

/// File payload with transparent gzip decompression.
std::vector<unsigned char> read_payload(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  if (is_gzip(bytes)) return gunzip(bytes, path.string());
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset) {
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw io_error("sha256 failure for " + path.string());
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

Tensor Dataset::batch(Eigen::Index first, Eigen::Index count) const {
  if (first < 0 || count < 0 || first + count > size())
    throw value_error("Dataset::batch: slice out of range");
  auto shape = images.shape();
  shape[0] = count;
  Tensor out(shape);
  const Eigen::Index width = images.numel() / size();
  std::memcpy(out.data(), images.data() + first * width,
              sizeof(double) * static_cast<std::size_t>(count * width));
  return out;
}

Dataset Dataset::subset(const std::vector<std::uint64_t>& indices) const {
  Dataset out;
  out.class_count = class_count;
  out.provenance = provenance;
  if (indices.empty()) return out;  // empty dataset: null tensor, no labels
  auto shape = images.shape();
  shape[0] = static_cast<Eigen::Index>(indices.size());
  out.images = Tensor(shape);
  out.labels.reserve(indices.size());
  const Eigen::Index width = images.numel() / size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(indices[i]);
    if (src >= size()) throw value_error("Dataset::subset: index out of range");
    std::memcpy(out.images.data() + static_cast<Eigen::Index>(i) * width,
                images.data() + src * width, sizeof(double) * static_cast<std::size_t>(width));
    out.labels.push_back(labels[static_cast<std::size_t>(src)]);
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img = read_payload(images_path);
  const auto lab = read_payload(labels_path);

  if (img.size() < 16) throw io_error("IDX image file too short: " + images_path.string());
  if (read_be32(img, 0) != kIdxImagesMagic)
    throw io_error("bad IDX image magic in " + images_path.string());
  const std::uint32_t n = read_be32(img, 4);
  const std::uint32_t h = read_be32(img, 8);
  const std::uint32_t w = read_be32(img, 12);
  const std::size_t expected_img = 16 + std::size_t(n) * h * w;
  if (img.size() != expected_img)
    throw io_error("truncated IDX image payload in " + images_path.string() + ": expected " +
                   std::to_string(expected_img) + " bytes, got " + std::to_string(img.size()));

  if (lab.size() < 8) throw io_error("IDX label file too short: " + labels_path.string());
  if (read_be32(lab, 0) != kIdxLabelsMagic)
    throw io_error("bad IDX label magic in " + labels_path.string());
  const std::uint32_t n_labels = read_be32(lab, 4);
  const std::size_t expected_lab = 8 + std::size_t(n_labels);
  if (lab.size() != expected_lab)
    throw io_error("truncated IDX label payload in " + labels_path.string() + ": expected " +
                   std::to_string(expected_lab) + " bytes, got " + std::to_string(lab.size()));
  if (n != n_labels)
    throw io_error("IDX image/label count mismatch: " + std::to_string(n) + " images vs " +
                   std::to_string(n_labels) + " labels");

  Dataset out;
  out.images = Tensor({static_cast<Eigen::Index>(n), 1, static_cast<Eigen::Index>(h),
                       static_cast<Eigen::Index>(w)});
  out.labels.resize(n);
  double* px = out.images.data();
  const std::size_t pixels = std::size_t(n) * h * w;
  for (std::size_t i = 0; i < pixels; ++i) px[i] = img[16 + i] / 255.0;
  for (std::uint32_t i = 0; i < n; ++i) out.labels[i] = lab[8 + i];
  out.class_count = 10;
  out.provenance.sources = {images_path.string(), labels_path.string()};
  out.provenance.sha256 = {sha256_file(images_path), sha256_file(labels_path)};
  return out;
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw value_error("load_cifar10_bin: no input files");
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  std::vector<std::vector<unsigned char>> payloads;
  std::size_t total = 0;
  for (const auto& path : paths) {
    auto bytes = read_payload(path);
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw io_error("CIFAR-10 file size " + std::to_string(bytes.size()) +
                     " is not a multiple of 3073: " + path.string());
    total += bytes.size() / kRecord;
    payloads.push_back(std::move(bytes));
  }
  Dataset out;
  out.images = Tensor({static_cast<Eigen::Index>(total), 3, 32, 32});
  out.labels.reserve(total);
  double* px = out.images.data();
  for (const auto& bytes : payloads) {
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      out.labels.push_back(rec[0]);
      for (std::size_t i = 0; i < 3072; ++i) *px++ = rec[1 + i] / 255.0;
    }
  }
  out.class_count = 10;
  for (const auto& path : paths) {
    out.provenance.sources.push_back(path.string());
    out.provenance.sha256.push_back(sha256_file(path));
  }
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, Eigen::Index n,
                                             std::uint64_t seed) {
  if (n < 0 || n > data.size())
    throw value_error("split_validation: requested " + std::to_string(n) + " of " +
                      std::to_string(data.size()) + " samples");
  Xoshiro256ss rng(seed);
  auto picked = sample_without_replacement(static_cast<std::uint64_t>(data.size()),
                                           static_cast<std::uint64_t>(n), rng);
  std::vector<char> taken(static_cast<std::size_t>(data.size()), 0);
  for (auto i : picked) taken[static_cast<std::size_t>(i)] = 1;
  std::vector<std::uint64_t> rest;
  rest.reserve(static_cast<std::size_t>(data.size() - n));
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(data.size()); ++i)
    if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);
  return {data.subset(picked), data.subset(rest)};
}

}  // namespace rrt
