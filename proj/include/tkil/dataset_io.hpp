#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "tkil/dataset.hpp"

namespace tkil {

// Shift inputs to zero mean / unit variance using statistics of `stats_source`
// (normally the train split). Grayscale images are one channel, so the
// statistics are global over all pixels.
void normalize_like(DatasetHandle& target, const DatasetHandle& stats_source);
void normalize_pair(DatasetHandle& train, DatasetHandle& test);

// IDX byte format (the classic digit-benchmark layout). A dataset directory
// holds train-images-idx3-ubyte / train-labels-idx1-ubyte and the t10k-
// prefixed test files. Loaded values start in [0,1], then train/test are
// normalized with train statistics.
std::pair<DatasetHandle, DatasetHandle> load_idx_dir(const std::string& dir);
void write_idx_images(const std::string& path, const DatasetHandle& ds);
void write_idx_labels(const std::string& path, const DatasetHandle& ds);
void write_idx_dir(const std::string& dir, const DatasetHandle& train, const DatasetHandle& test);

// Directory-of-arrays format: meta.txt (key=value: classes, shape, dtype)
// plus <split>-inputs.f64 and <split>-labels.i32, little-endian raw arrays.
std::pair<DatasetHandle, DatasetHandle> load_array_dir(const std::string& dir);
void write_array_dir(const std::string& dir, const DatasetHandle& train,
                     const DatasetHandle& test);

// Synthetic grayscale digit benchmark: glyph bitmaps for digits 0..9 rendered
// onto a size x size canvas with per-sample rotation, scale, shear, shift,
// intensity and noise jitter. Pixel values lie in [0,1]; callers normalize.
// Deterministic under seed.
DatasetHandle make_synthetic_digits(int per_class, int image_size, uint64_t seed,
                                    const std::string& split);

// Convenience wrapper used by dataset configs: generates train and test splits
// and normalizes both with train statistics.
std::pair<DatasetHandle, DatasetHandle> make_digit_benchmark(int per_class_train,
                                                             int per_class_test, int image_size,
                                                             uint64_t seed);

} // namespace tkil
