#include "jsa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "jsa/architecture.hpp"
#include "jsa/errors.hpp"

namespace jsa {

namespace {

constexpr std::uint32_t kEndMarker = 0x454e4421;  // "END!"

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(data_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(data_[pos_++])} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw format_error("checkpoint truncated", pos_);
  }

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state, std::string_view meta) {
  Writer w;
  for (char ch : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  w.str(state.pair.architecture);
  w.str(meta);
  w.u64(state.epoch);
  w.u64(state.t);
  w.u8(state.stage == Stage::Cache ? 1 : 0);
  w.doubles(state.pair.get_lambda());

  const AdamState adam = state.adam.value_or(AdamState{});
  w.u64(adam.step);
  w.f64(adam.beta1);
  w.f64(adam.beta2);
  w.f64(adam.eps);
  w.f64(adam.lr);
  w.doubles(adam.m);
  w.doubles(adam.v);

  w.doubles(state.best_lambda);
  w.f64(state.best_valid);
  w.u64(state.best_epoch);

  const LatentCache& cache = state.cache;
  w.u64(cache.size());
  w.u64(cache.entry_width());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const auto& bits = cache.raw(i);
    w.u8(bits.empty() ? 0 : 1);
    if (bits.empty()) continue;
    for (std::size_t j = 0; j < bits.size(); j += 8) {
      std::uint8_t packed = 0;
      for (std::size_t b = 0; b < 8 && j + b < bits.size(); ++b) packed |= bits[j + b] << b;
      w.u8(packed);
    }
  }

  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.u32(kEndMarker);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write checkpoint " + tmp);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw config_error("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw config_error("cannot move checkpoint into " + path);
}

TrainState load_checkpoint(const std::string& path, std::string* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));

  for (char ch : kCheckpointMagic) {
    if (r.u8() != static_cast<std::uint8_t>(ch)) throw format_error("not a checkpoint (bad magic)", 0);
  }
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw format_error("unsupported checkpoint version " + std::to_string(version), version_at);
  }

  TrainState st;
  const std::string arch = r.str();
  const std::string m = r.str();
  if (meta) *meta = m;
  st.pair = build_architecture(arch, 0);
  st.epoch = r.u64();
  st.t = r.u64();
  st.stage = r.u8() ? Stage::Cache : Stage::NoCache;
  const std::size_t lambda_at = r.pos();
  const std::vector<double> lambda = r.doubles();
  if (lambda.size() != st.pair.num_theta() + st.pair.num_phi()) {
    throw format_error("parameter count does not match the architecture", lambda_at);
  }
  st.pair.set_lambda(lambda);

  AdamState adam;
  adam.step = r.u64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.eps = r.f64();
  adam.lr = r.f64();
  adam.m = r.doubles();
  adam.v = r.doubles();
  st.adam = std::move(adam);

  st.best_lambda = r.doubles();
  st.best_valid = r.f64();
  st.best_epoch = r.u64();

  const std::size_t n = r.u64();
  const std::size_t width_at = r.pos();
  const std::size_t width = r.u64();
  st.cache = LatentCache(n, st.pair.gen.latents);
  if (width != st.cache.entry_width()) throw format_error("cache width does not match the architecture", width_at);
  for (std::size_t i = 0; i < n; ++i) {
    if (!r.u8()) continue;
    std::vector<std::uint8_t> bits(width);
    for (std::size_t j = 0; j < width; j += 8) {
      const std::uint8_t packed = r.u8();
      for (std::size_t b = 0; b < 8 && j + b < width; ++b) bits[j + b] = (packed >> b) & 1u;
    }
    st.cache.set_raw(i, std::move(bits));
  }

  std::istringstream rng(r.str());
  rng >> st.rng;
  if (!rng) throw format_error("corrupt rng state", r.pos());
  const std::size_t end_at = r.pos();
  if (r.u32() != kEndMarker || r.pos() != r.size()) throw format_error("checkpoint trailer missing", end_at);
  return st;
}

}  // namespace jsa
