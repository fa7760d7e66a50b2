// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Samples are rows of `features`; `shards[k]` lists the rows owned by device k.
struct Dataset {
    RowMatrix features;
    std::vector<int> labels;
    std::vector<std::vector<std::size_t>> shards;

    [[nodiscard]] std::size_t num_samples() const { return labels.size(); }
    [[nodiscard]] Eigen::Index feature_dim() const { return features.cols(); }
    [[nodiscard]] std::size_t num_devices() const { return shards.size(); }

    [[nodiscard]] std::vector<std::size_t> all_indices() const
    {
        std::vector<std::size_t> idx(num_samples());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }

    /// S_k / S over the shards (sums to one when the shards cover the set).
    [[nodiscard]] std::vector<double> shard_weights() const
    {
        std::size_t total = 0;
        for (const auto& s : shards) total += s.size();
        std::vector<double> w;
        w.reserve(shards.size());
        for (const auto& s : shards) w.push_back(static_cast<double>(s.size()) / static_cast<double>(total));
        return w;
    }
};

enum class Partition { random_even, by_class };

/// Even split (sizes differ by at most one). `by_class` sorts by label first, so
/// each device sees as few classes as possible.
inline void partition_dataset(Dataset& ds, std::size_t K, Partition mode, const RngSpec& rng)
{
    if (K == 0) throw InvalidConfig("partition_dataset: K must be >= 1");
    if (K > ds.num_samples()) throw InvalidConfig("partition_dataset: more devices than samples");
    auto order = ds.all_indices();
    auto eng = rng.engine(Stream::data, 1);
    std::shuffle(order.begin(), order.end(), eng);
    if (mode == Partition::by_class)
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
    ds.shards.assign(K, {});
    const std::size_t S = order.size();
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t n = S / K + (k < S % K ? 1 : 0);
        ds.shards[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
    }
}

struct MixtureSpec {
    int classes = 4;
    int feature_dim = 20;
    double separation = 1.5; ///< norm of each class mean; unit-variance isotropic noise
};

/**
 * Balanced Gaussian mixture. Class means depend only on (rng, spec), so a training
 * set and a test set drawn with different `split` values share the same classes.
 */
inline Dataset make_gaussian_mixture(const MixtureSpec& spec, std::size_t S, const RngSpec& rng, std::uint64_t split)
{
    if (spec.classes < 2 || spec.feature_dim < 1 || S == 0)
        throw InvalidConfig("make_gaussian_mixture: need >= 2 classes, >= 1 feature, >= 1 sample");
    const int V = spec.classes;
    const int b = spec.feature_dim;
    RowMatrix means(V, b);
    {
        auto eng = rng.engine(Stream::data, 0, 0);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int v = 0; v < V; ++v) {
            for (int j = 0; j < b; ++j) means(v, j) = nd(eng);
            means.row(v) *= spec.separation / means.row(v).norm();
        }
    }
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(S), b);
    ds.labels.resize(S);
    auto eng = rng.engine(Stream::data, 2, split);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < S; ++i) {
        const int v = static_cast<int>(i % static_cast<std::size_t>(V));
        ds.labels[i] = v;
        for (int j = 0; j < b; ++j) ds.features(static_cast<Eigen::Index>(i), j) = means(v, j) + nd(eng);
    }
    ds.shards = {ds.all_indices()};
    return ds;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline std::vector<unsigned char> read_payload(std::istream& in, const std::string& path, std::size_t offset,
                                               std::size_t expected)
{
    std::vector<unsigned char> buf(expected);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != expected)
        throw FormatError(path + ": truncated payload at byte offset " + std::to_string(offset + got) +
                          ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(got));
    return buf;
}

} // namespace detail

/**
 * Reads an IDX image/label file pair (big-endian magic 0x00000803 / 0x00000801).
 * Pixels are scaled to [0, 1]. `limit` keeps only the first n samples (0 = all).
 * The returned set has a single shard holding every sample.
 */
inline Dataset ingest_mnist(const std::string& images_path, const std::string& labels_path, std::size_t limit = 0)
{
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError(images_path + ": cannot open");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError(labels_path + ": cannot open");

    const auto img_magic = detail::read_be32(img, images_path, 0);
    if (img_magic != 0x00000803U)
        throw FormatError(images_path + ": bad magic at byte offset 0 (expected 0x00000803)");
    const std::size_t n_img = detail::read_be32(img, images_path, 4);
    const std::size_t rows = detail::read_be32(img, images_path, 8);
    const std::size_t cols = detail::read_be32(img, images_path, 12);

    const auto lab_magic = detail::read_be32(lab, labels_path, 0);
    if (lab_magic != 0x00000801U)
        throw FormatError(labels_path + ": bad magic at byte offset 0 (expected 0x00000801)");
    const std::size_t n_lab = detail::read_be32(lab, labels_path, 4);
    if (n_lab != n_img)
        throw FormatError(labels_path + ": label count " + std::to_string(n_lab) + " does not match image count " +
                          std::to_string(n_img));

    const std::size_t n = limit == 0 ? n_img : std::min(limit, n_img);
    const std::size_t pix = rows * cols;
    const auto pixels = detail::read_payload(img, images_path, 16, n * pix);
    const auto labels = detail::read_payload(lab, labels_path, 8, n);

    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pix));
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < pix; ++j)
            ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pixels[i * pix + j] / 255.0;
        if (labels[i] > 9)
            throw FormatError(labels_path + ": label out of range at byte offset " + std::to_string(8 + i));
        ds.labels[i] = labels[i];
    }
    ds.shards = {ds.all_indices()};
    return ds;
}

} // namespace otafl
