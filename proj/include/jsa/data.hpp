#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "jsa/dense_array.hpp"
#include "jsa/models.hpp"

namespace jsa {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an unsigned-byte IDX file, gzipped or plain. Images come back as
/// [n, rows, cols] scaled to [0, 1]; labels as [n] with their raw values.
DenseArray load_idx(const std::string& path);
/// Writes a rank-3 array as images (values * 255, rounded) or a rank-1 array
/// as labels. Paths ending in ".gz" are compressed.
void write_idx(const std::string& path, const DenseArray& a);

enum class Split { Train, Valid, Test };
const char* split_name(Split s);

/// Binary items with optional aligned contexts.
struct Dataset {
  DenseArray items;     // [n, width]
  DenseArray contexts;  // [n, context width] or empty
  Split split = Split::Train;

  std::size_t size() const noexcept { return items.rows(); }
  std::size_t width() const noexcept { return items.cols(); }
  /// Throws domain_error on non-binary entries, shape_error on misaligned contexts.
  void validate() const;
};

/// Checked constructor.
Dataset make_dataset(DenseArray items, DenseArray contexts = {}, Split split = Split::Train);

enum class BinarizeMode { Threshold, FixedStandard };

/// Threshold: 1 iff value > 0.5. FixedStandard: reads the binarization from
/// `standard_file` (one row of 0/1 per image, optionally space separated)
/// instead of thresholding; the row count must match the images.
Dataset binarize(const DenseArray& images, BinarizeMode mode, Split split = Split::Train,
                 const std::string& standard_file = "");

/// Reads a standard-binarization file; rows of 0/1 characters.
DenseArray load_binary_rows(const std::string& path);

/// Top 14 image rows become the contexts, bottom 14 rows the items.
Dataset split_halves(const Dataset& images);

struct SyntheticSpec {
  std::string architecture = "enc: 4-4s~B4; dec: B4-4s";
  std::size_t n = 500;
  double theta_scale = 1.5;
};

struct SyntheticData {
  Dataset data;
  ModelPair truth;  // generating parameters; phi is left at its initialization
};

/// IID draws from a tiny random generative model. Points are sampled from the
/// exact marginal p(x | c), so the observed width is limited to 16 bits and the
/// latent support to the enumeration cap. Contexts, if the architecture has
/// them, are uniform random bits.
SyntheticData synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

struct MnistOptions {
  std::string root;  // empty: $JSA_DATA_ROOT, then "data/mnist5k"
  BinarizeMode mode = BinarizeMode::Threshold;
  // Explicit sizes for files other than the full 60000-image training set.
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_valid;
};

struct MnistSplits {
  Dataset train, valid, test;
  bool test_is_valid = false;  // no test file was found
  std::string root;
};

/// Standard partitions. With the full training file: 50000 / 10000 and the
/// 10000-image test file. Otherwise the last n_valid images (default one
/// sixth) are held out. FixedStandard reads binarized_mnist_{train,valid,test}.amat
/// from the root instead of IDX files.
MnistSplits load_mnist(const MnistOptions& options);

/// Resolves the data root from the option, the environment and the default.
std::string resolve_data_root(const std::string& root);

}  // namespace jsa
