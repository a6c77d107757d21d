// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lp {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()),
                       static_cast<std::streamsize>(size))) {
    throw Error("read error on '" + path.string() + "'");
  }
  return bytes;
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic,
                   const std::string& what) {
  if (bytes.size() < 4) {
    throw Error(what + ": truncated header, " + std::to_string(bytes.size()) +
                " bytes at offset 0");
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected_magic) {
    throw Error(what + ": bad magic " + std::to_string(magic) + " at offset 0, expected " +
                std::to_string(expected_magic));
  }
  const int rank = static_cast<int>(magic & 0xff);
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) {
    throw Error(what + ": truncated header, expected " + std::to_string(header) +
                " bytes, got " + std::to_string(bytes.size()));
  }
  IdxArray out;
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = read_be32(bytes, 4 + 4 * static_cast<std::size_t>(i));
    out.dims.push_back(static_cast<int>(d));
    count *= d;
  }
  if (bytes.size() != header + count) {
    throw Error(what + ": expected " + std::to_string(header + count) +
                " bytes for dims " + dims_string(out.dims) + ", got " +
                std::to_string(bytes.size()) + " (payload starts at offset " +
                std::to_string(header) + ")");
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  const auto bytes = read_file(path);
  return parse_idx(bytes, expected_magic, path.string());
}

Normalization compute_normalization(std::span<const std::uint8_t> pixels, int channels,
                                    std::size_t area, bool per_channel) {
  if (pixels.empty()) throw Error("cannot normalize an empty pixel set");
  if (channels < 1 || area == 0 || pixels.size() % (area * channels) != 0) {
    throw Error("compute_normalization: " + std::to_string(pixels.size()) +
                " pixels is not a whole number of " + std::to_string(channels) + "x" +
                std::to_string(area) + " images");
  }
  const int groups = per_channel ? channels : 1;
  std::vector<double> sum(groups, 0.0);
  std::vector<double> sum_sq(groups, 0.0);
  const std::size_t images = pixels.size() / (area * channels);
  for (std::size_t i = 0; i < images; ++i) {
    for (int c = 0; c < channels; ++c) {
      const int g = per_channel ? c : 0;
      const std::uint8_t* p = pixels.data() + (i * channels + c) * area;
      for (std::size_t a = 0; a < area; ++a) {
        const double v = p[a] / 255.0;
        sum[g] += v;
        sum_sq[g] += v * v;
      }
    }
  }
  Normalization norm;
  norm.mean.assign(groups, 0.0);
  norm.std.assign(groups, 0.0);
  const double n = static_cast<double>(pixels.size() / groups);
  for (int g = 0; g < groups; ++g) {
    const double m = sum[g] / n;
    norm.mean[g] = m;
    // Sample variance (n - 1).
    norm.std[g] = std::sqrt(std::max(0.0, (sum_sq[g] - n * m * m) / (n - 1.0)));
    if (!(norm.std[g] > 0)) throw Error("compute_normalization: constant pixels");
  }
  return norm;
}

Dataset dataset_from_pixels(std::string id, Split split, const Dims& example_dims,
                            std::span<const std::uint8_t> pixels, std::vector<int> labels,
                            int num_classes, const Normalization& norm) {
  Dataset ds;
  ds.id = std::move(id);
  ds.split = split;
  ds.num_classes = num_classes;
  ds.normalization = norm;
  const std::size_t m = element_count(example_dims);
  if (pixels.size() != labels.size() * m) {
    throw Error(ds.id + ": " + std::to_string(pixels.size()) + " pixels for " +
                std::to_string(labels.size()) + " labels of size " + std::to_string(m));
  }
  Dims dims = example_dims;
  dims.insert(dims.begin(), static_cast<int>(labels.size()));
  std::vector<float> values(pixels.size());
  const int channels = example_dims.size() == 3 ? example_dims[0] : 1;
  const std::size_t area = m / static_cast<std::size_t>(channels);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int c = static_cast<int>((i / area) % static_cast<std::size_t>(channels));
    values[i] = static_cast<float>((pixels[i] / 255.0 - norm.mean_for(c)) / norm.std_for(c));
  }
  ds.images = Tensor(std::move(dims), std::move(values));
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

DatasetPair load_mnist(const std::filesystem::path& dir) {
  auto train_x = read_idx(dir / "train-images-idx3-ubyte", kIdxImageMagic);
  auto train_y = read_idx(dir / "train-labels-idx1-ubyte", kIdxLabelMagic);
  auto test_x = read_idx(dir / "t10k-images-idx3-ubyte", kIdxImageMagic);
  auto test_y = read_idx(dir / "t10k-labels-idx1-ubyte", kIdxLabelMagic);
  auto check = [](const IdxArray& x, const IdxArray& y, const char* split) {
    if (x.dims.size() != 3 || y.dims.size() != 1 || x.dims[0] != y.dims[0]) {
      throw Error(std::string("mnist ") + split + ": image dims " + dims_string(x.dims) +
                  " disagree with label dims " + dims_string(y.dims));
    }
  };
  check(train_x, train_y, "train");
  check(test_x, test_y, "test");
  const Dims example{1, train_x.dims[1], train_x.dims[2]};
  const Normalization norm = compute_normalization(train_x.data, 1, example[1] * std::size_t(example[2]), false);
  auto labels = [](const IdxArray& y) { return std::vector<int>(y.data.begin(), y.data.end()); };
  DatasetPair out;
  out.train = dataset_from_pixels("mnist", Split::train, example, train_x.data,
                                  labels(train_y), 10, norm);
  out.test = dataset_from_pixels("mnist", Split::test, example, test_x.data,
                                 labels(test_y), 10, norm);
  return out;
}

void decode_cifar_records(std::span<const std::uint8_t> bytes, const std::string& what,
                          std::vector<std::uint8_t>& pixels, std::vector<int>& labels) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(what + ": " + std::to_string(bytes.size()) +
                " bytes is not a whole number of " + std::to_string(kCifarRecordBytes) +
                "-byte records");
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    if (bytes[off] >= 10) {
      throw Error(what + ": label " + std::to_string(bytes[off]) + " at offset " +
                  std::to_string(off) + " outside [0, 10)");
    }
    labels.push_back(bytes[off]);
    pixels.insert(pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                  bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
  }
}

DatasetPair load_cifar10(const std::filesystem::path& dir, bool per_channel) {
  std::vector<std::uint8_t> train_px;
  std::vector<int> train_labels;
  for (int b = 1; b <= 5; ++b) {
    const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
    decode_cifar_records(read_file(path), path.string(), train_px, train_labels);
  }
  std::vector<std::uint8_t> test_px;
  std::vector<int> test_labels;
  const auto test_path = dir / "test_batch.bin";
  decode_cifar_records(read_file(test_path), test_path.string(), test_px, test_labels);
  const Dims example{3, 32, 32};
  const Normalization norm = compute_normalization(train_px, 3, 32 * 32, per_channel);
  DatasetPair out;
  out.train = dataset_from_pixels("cifar10", Split::train, example, train_px,
                                  std::move(train_labels), 10, norm);
  out.test = dataset_from_pixels("cifar10", Split::test, example, test_px,
                                 std::move(test_labels), 10, norm);
  return out;
}

std::vector<std::uint8_t> encode_cifar_record(const Dataset& dataset, std::size_t index) {
  if (dataset.example_dims() != Dims{3, 32, 32}) {
    throw Error("encode_cifar_record: dataset examples are not [3, 32, 32]");
  }
  std::vector<std::uint8_t> rec(kCifarRecordBytes);
  rec[0] = static_cast<std::uint8_t>(dataset.labels.at(index));
  const float* img = dataset.images.data() + index * (kCifarRecordBytes - 1);
  for (std::size_t i = 0; i + 1 < kCifarRecordBytes; ++i) {
    const int c = static_cast<int>(i / 1024);
    const double px = (img[i] * dataset.normalization.std_for(c) +
                       dataset.normalization.mean_for(c)) * 255.0;
    rec[i + 1] = static_cast<std::uint8_t>(std::clamp(std::lround(px), 0L, 255L));
  }
  return rec;
}

AugmentPolicy AugmentPolicy::standard(const Dataset& dataset) {
  AugmentPolicy p;
  p.enabled = true;
  const int channels = dataset.example_dims().size() == 3 ? dataset.example_dims()[0] : 1;
  p.pad_value.resize(channels);
  for (int c = 0; c < channels; ++c) {
    p.pad_value[c] = static_cast<float>(-dataset.normalization.mean_for(c) /
                                        dataset.normalization.std_for(c));
  }
  return p;
}

void crop_flip(const float* image, int channels, int height, int width,
               const AugmentPolicy& policy, int dy, int dx, bool flip, float* out) {
  for (int c = 0; c < channels; ++c) {
    const float pad = policy.pad_value.size() == 1 ? policy.pad_value[0]
                                                   : policy.pad_value.at(c);
    for (int i = 0; i < height; ++i) {
      const int si = i + dy - policy.pad;
      for (int j = 0; j < width; ++j) {
        const int sj = (flip ? width - 1 - j : j) + dx - policy.pad;
        const bool inside = si >= 0 && si < height && sj >= 0 && sj < width;
        out[(static_cast<std::size_t>(c) * height + i) * width + j] =
            inside ? image[(static_cast<std::size_t>(c) * height + si) * width + sj] : pad;
      }
    }
  }
}

Tensor augment(const Tensor& batch, const AugmentPolicy& policy, Rng& rng) {
  if (!policy.enabled) return batch;
  if (batch.rank() != 4) throw Error("augment: batch must be [N, C, H, W]");
  const int n = batch.dim(0);
  const int c = batch.dim(1);
  const int h = batch.dim(2);
  const int w = batch.dim(3);
  const std::size_t m = static_cast<std::size_t>(c) * h * w;
  Tensor out(batch.dims());
  for (int i = 0; i < n; ++i) {
    int dy = policy.pad;
    int dx = policy.pad;
    if (policy.random_crop) {
      dy = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(policy.pad) + 1));
      dx = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(policy.pad) + 1));
    }
    const bool flip = policy.horizontal_flip && rng.bernoulli_half();
    crop_flip(batch.data() + i * m, c, h, w, policy, dy, dx, flip, out.data() + i * m);
  }
  return out;
}

namespace {

std::vector<std::vector<double>> class_centers(const SyntheticSpec& spec) {
  const std::size_t d = element_count(spec.dims);
  Rng rng(mix_seed(spec.seed, fnv1a64("synthetic.centers")));
  std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(d));
  for (auto& c : centers) {
    double norm = 0;
    for (double& v : c) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v *= spec.margin / norm;
  }
  return centers;
}

Dataset sample_blobs(const SyntheticSpec& spec, std::size_t n, Split split,
                     std::uint64_t stream) {
  if (n == 0) throw Error("synthetic dataset: N must be positive");
  if (spec.num_classes < 1) throw Error("synthetic dataset: K must be positive");
  const std::size_t d = element_count(spec.dims);
  const auto centers = class_centers(spec);
  Rng rng(mix_seed(spec.seed, stream));
  Dataset ds;
  ds.id = "synthetic";
  ds.split = split;
  ds.num_classes = spec.num_classes;
  ds.pixel_data = false;
  Dims dims = spec.dims;
  dims.insert(dims.begin(), static_cast<int>(n));
  std::vector<float> values(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    ds.labels[i] = y;
    for (std::size_t k = 0; k < d; ++k) {
      values[i * d + k] = static_cast<float>(centers[y][k] + spec.noise * rng.normal());
    }
  }
  ds.images = Tensor(std::move(dims), std::move(values));
  ds.validate();
  return ds;
}

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec, Split split) {
  return sample_blobs(spec, spec.n, split,
                      fnv1a64(split == Split::train ? "synthetic.train" : "synthetic.test"));
}

DatasetPair synthetic_pair(const SyntheticSpec& spec, std::size_t test_n) {
  DatasetPair out;
  out.train = synthetic_dataset(spec, Split::train);
  out.test = sample_blobs(spec, test_n, Split::test, fnv1a64("synthetic.test"));
  return out;
}

}  // namespace lp
