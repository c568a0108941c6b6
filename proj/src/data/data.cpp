#include "jsa/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "jsa/architecture.hpp"
#include "jsa/errors.hpp"
#include "jsa/eval.hpp"

namespace jsa {

namespace {

class GzReader {
 public:
  explicit GzReader(const std::string& path) {
    if (!std::filesystem::exists(path)) throw config_error("no such file: " + path);
    f_ = gzopen(path.c_str(), "rb");
    if (!f_) throw config_error("cannot open " + path);
  }
  ~GzReader() {
    if (f_) gzclose(f_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read(void* dst, std::size_t n, const char* what) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t got = 0;
    while (got < n) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - got, 1u << 30));
      const int r = gzread(f_, out + got, chunk);
      if (r < 0) throw format_error(std::string("corrupt compressed stream while reading ") + what, pos_ + got);
      if (r == 0) throw format_error(std::string("file truncated while reading ") + what, pos_ + got);
      got += static_cast<std::size_t>(r);
    }
    pos_ += n;
  }

  std::uint32_t read_be32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  std::size_t pos() const noexcept { return pos_; }
  bool at_end() {
    unsigned char b;
    return gzread(f_, &b, 1) == 0;
  }

 private:
  gzFile f_ = nullptr;
  std::size_t pos_ = 0;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string find_file(const std::string& root, const std::string& stem) {
  for (const std::string& cand : {stem + ".gz", stem}) {
    const auto p = std::filesystem::path(root) / cand;
    if (std::filesystem::exists(p)) return p.string();
  }
  return {};
}

DenseArray flatten_images(const DenseArray& images) {
  if (images.rank() == 2) return images;
  if (images.rank() != 3) throw shape_error("images must be [n, width] or [n, rows, cols]");
  DenseArray out = images;
  out.reshape({images.shape()[0], images.shape()[1] * images.shape()[2]});
  return out;
}

DenseArray slice_rows(const DenseArray& a, std::size_t begin, std::size_t end) {
  if (a.empty()) return a;
  DenseArray out = DenseArray::matrix(end - begin, a.cols());
  std::copy(a.storage().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
            a.storage().begin() + static_cast<std::ptrdiff_t>(end * a.cols()), out.storage().begin());
  return out;
}

}  // namespace

DenseArray load_idx(const std::string& path) {
  GzReader in(path);
  const std::uint32_t magic = in.read_be32("magic number");
  if (magic != kIdxImagesMagic && magic != kIdxLabelsMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw format_error(std::string("bad IDX magic number ") + buf, 0);
  }
  const std::size_t ndim = magic & 0xff;
  std::vector<std::size_t> dims(ndim);
  std::size_t total = 1;
  for (auto& d : dims) {
    d = in.read_be32("dimension");
    total *= d;
  }
  std::vector<unsigned char> bytes(total);
  in.read(bytes.data(), total, "payload");
  if (!in.at_end()) throw format_error("trailing bytes after IDX payload", in.pos());
  DenseArray out(dims);
  const double scale = magic == kIdxImagesMagic ? 1.0 / 255.0 : 1.0;
  for (std::size_t i = 0; i < total; ++i) out[i] = bytes[i] * scale;
  return out;
}

void write_idx(const std::string& path, const DenseArray& a) {
  const bool images = a.rank() == 3;
  if (!images && a.rank() != 1) throw shape_error("write_idx expects [n, rows, cols] images or [n] labels");
  std::vector<unsigned char> buf;
  auto be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<unsigned char>(v >> s));
  };
  be32(images ? kIdxImagesMagic : kIdxLabelsMagic);
  for (std::size_t d : a.shape()) be32(static_cast<std::uint32_t>(d));
  for (double v : a.storage()) {
    const double raw = images ? v * 255.0 : v;
    if (!(raw >= -0.5 && raw < 255.5)) throw domain_error("value does not fit an unsigned byte");
    buf.push_back(static_cast<unsigned char>(std::lround(raw)));
  }
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw config_error("cannot write " + path);
    const int w = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
    gzclose(f);
    if (w != static_cast<int>(buf.size())) throw config_error("short write to " + path);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

void Dataset::validate() const {
  if (items.rank() != 2) throw shape_error("dataset items must be a matrix");
  auto binary = [](const DenseArray& a, const char* what) {
    for (double v : a.storage()) {
      if (v != 0.0 && v != 1.0) throw domain_error(std::string("dataset ") + what + " must be binary");
    }
  };
  binary(items, "items");
  if (!contexts.empty()) {
    if (contexts.rank() != 2 || contexts.rows() != items.rows()) {
      throw shape_error("contexts are not aligned with items");
    }
    binary(contexts, "contexts");
  }
}

Dataset make_dataset(DenseArray items, DenseArray contexts, Split split) {
  Dataset d{std::move(items), std::move(contexts), split};
  d.validate();
  return d;
}

DenseArray load_binary_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open binarization file " + path);
  std::vector<double> values;
  std::size_t width = 0, rows = 0, offset = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::size_t w = 0;
    for (std::size_t k = 0; k < line.size(); ++k) {
      const char ch = line[k];
      if (ch == '0' || ch == '1') {
        values.push_back(ch == '1' ? 1.0 : 0.0);
        ++w;
      } else if (ch != ' ' && ch != '\t' && ch != '\r') {
        throw format_error("unexpected character in binarization file", offset + k);
      }
    }
    offset += line.size() + 1;
    if (w == 0) continue;
    if (rows > 0 && w != width) throw format_error("binarization rows have different widths", offset - line.size() - 1);
    width = w;
    ++rows;
  }
  if (rows == 0) throw format_error("binarization file is empty", 0);
  return DenseArray({rows, width}, std::move(values));
}

Dataset binarize(const DenseArray& images, BinarizeMode mode, Split split, const std::string& standard_file) {
  const DenseArray flat = flatten_images(images);
  if (mode == BinarizeMode::FixedStandard) {
    if (standard_file.empty()) throw config_error("FixedStandard binarization needs a binarization file");
    DenseArray fixed = load_binary_rows(standard_file);
    if (!flat.empty() && (fixed.rows() != flat.rows() || fixed.cols() != flat.cols())) {
      throw shape_error("binarization file does not match the images");
    }
    return make_dataset(std::move(fixed), {}, split);
  }
  DenseArray out = DenseArray::matrix(flat.rows(), flat.cols());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double v = flat[i];
    if (!(v >= 0.0 && v <= 1.0)) throw domain_error("pixel values must lie in [0, 1]");
    out[i] = v > 0.5 ? 1.0 : 0.0;
  }
  return make_dataset(std::move(out), {}, split);
}

Dataset split_halves(const Dataset& images) {
  if (images.items.rank() != 2 || images.width() != 784) {
    throw shape_error("split_halves expects 28x28 images (width 784), got width " + std::to_string(images.width()));
  }
  const std::size_t n = images.size(), half = 392;
  DenseArray top = DenseArray::matrix(n, half), bottom = DenseArray::matrix(n, half);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = images.items.row(i);
    std::copy(r.begin(), r.begin() + half, top.row(i).begin());
    std::copy(r.begin() + half, r.end(), bottom.row(i).begin());
  }
  return make_dataset(std::move(bottom), std::move(top), images.split);
}

SyntheticData synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelPair truth = build_architecture(spec.architecture, seed);
  const std::size_t w = truth.gen.obs_width, cw = truth.gen.context_width;
  if (w > 16) throw config_error("synthetic datasets need an observed width of at most 16");
  {
    std::normal_distribution<double> nd(0.0, spec.theta_scale);
    std::vector<double> theta(truth.num_theta());
    for (double& v : theta) v = nd(rng);
    truth.gen.set_params(theta);
  }
  const EnumerableSupport support(truth.gen.latents);
  const std::size_t nx = std::size_t{1} << w;
  DenseArray all_x = DenseArray::matrix(nx, w);
  for (std::size_t code = 0; code < nx; ++code) {
    for (std::size_t j = 0; j < w; ++j) all_x(code, j) = static_cast<double>((code >> (w - 1 - j)) & 1u);
  }

  // p(x | c) over all x, cached per distinct context.
  std::map<std::vector<double>, std::discrete_distribution<std::size_t>> tables;
  auto table_for = [&](const DenseArray& c) -> std::discrete_distribution<std::size_t>& {
    auto it = tables.find(c.storage());
    if (it != tables.end()) return it->second;
    std::vector<double> lp(nx);
    for (std::size_t code = 0; code < nx; ++code) {
      const std::size_t r[1] = {code};
      lp[code] = log_sum_exp(log_joint_table(truth.gen, support, gather_rows(all_x, r), c));
    }
    const double top = *std::max_element(lp.begin(), lp.end());
    for (double& v : lp) v = std::exp(v - top);
    return tables.emplace(c.storage(), std::discrete_distribution<std::size_t>(lp.begin(), lp.end())).first->second;
  };

  DenseArray items = DenseArray::matrix(spec.n, w);
  DenseArray contexts = cw ? DenseArray::matrix(spec.n, cw) : DenseArray{};
  for (std::size_t i = 0; i < spec.n; ++i) {
    DenseArray c;
    if (cw) {
      c = DenseArray::matrix(1, cw);
      for (double& v : c.storage()) v = static_cast<double>(rng() & 1u);
      std::copy(c.storage().begin(), c.storage().end(), contexts.row(i).begin());
    }
    const std::size_t code = table_for(c)(rng);
    std::copy(all_x.row(code).begin(), all_x.row(code).end(), items.row(i).begin());
  }
  return {make_dataset(std::move(items), std::move(contexts), Split::Train), std::move(truth)};
}

std::string resolve_data_root(const std::string& root) {
  if (!root.empty()) return root;
  if (const char* env = std::getenv("JSA_DATA_ROOT"); env && *env) return env;
  return "data/mnist5k";
}

MnistSplits load_mnist(const MnistOptions& options) {
  MnistSplits out;
  out.root = resolve_data_root(options.root);
  const std::string& root = out.root;
  if (options.mode == BinarizeMode::FixedStandard) {
    auto path = [&](const char* name) { return (std::filesystem::path(root) / name).string(); };
    for (const char* f : {"binarized_mnist_train.amat", "binarized_mnist_valid.amat", "binarized_mnist_test.amat"}) {
      if (!std::filesystem::exists(path(f))) throw config_error("FixedStandard binarization needs " + path(f));
    }
    out.train = make_dataset(load_binary_rows(path("binarized_mnist_train.amat")), {}, Split::Train);
    out.valid = make_dataset(load_binary_rows(path("binarized_mnist_valid.amat")), {}, Split::Valid);
    out.test = make_dataset(load_binary_rows(path("binarized_mnist_test.amat")), {}, Split::Test);
    return out;
  }

  const std::string train_file = find_file(root, "train-images-idx3-ubyte");
  if (train_file.empty()) throw config_error("no train-images-idx3-ubyte[.gz] under " + root);
  const Dataset all = binarize(load_idx(train_file), BinarizeMode::Threshold);
  const std::size_t n = all.size();
  std::size_t n_valid, n_train;
  if (n == 60000 && !options.n_train && !options.n_valid) {
    n_train = 50000;
    n_valid = 10000;
  } else {
    n_valid = options.n_valid.value_or((n + 3) / 6);
    n_train = options.n_train.value_or(n - n_valid);
  }
  if (n_valid == 0 || n_train == 0 || n_train + n_valid > n) {
    throw config_error("split sizes " + std::to_string(n_train) + "/" + std::to_string(n_valid) +
                       " do not fit " + std::to_string(n) + " images");
  }
  out.train = make_dataset(slice_rows(all.items, 0, n_train), {}, Split::Train);
  out.valid = make_dataset(slice_rows(all.items, n - n_valid, n), {}, Split::Valid);
  const std::string test_file = find_file(root, "t10k-images-idx3-ubyte");
  if (!test_file.empty()) {
    out.test = binarize(load_idx(test_file), BinarizeMode::Threshold, Split::Test);
  } else {
    out.test = out.valid;
    out.test.split = Split::Test;
    out.test_is_valid = true;
  }
  return out;
}

}  // namespace jsa
