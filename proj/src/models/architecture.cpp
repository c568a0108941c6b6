#include "jsa/architecture.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "jsa/errors.hpp"

namespace jsa {

namespace {

constexpr std::array<std::pair<std::string_view, std::string_view>, 5> kPresets{{
    {"linear", "enc: 784-200s~B200; dec: B200-784s"},
    {"nonlinear", "enc: 784-200r-200r-200s~B200; dec: B200-200r-200r-784s"},
    {"two-layers", "enc: 784-200s~B200-200s~B200; dec: B200-200s~B200-784s"},
    {"categorical-20x10", "enc: 784-512r-256r-200m~C20x10; dec: C20x10-256r-512r-784s"},
    {"structured-50",
     "ctx: 392; prior: 392-200t-200t-50s~B50; enc: 784-200t-200t-50s~B50; dec: B50-200t-200t-392s"},
}};

struct Token {
  enum class Kind { Width, Latent } kind;
  char sep = 0;  // '-', '~' or 0 for the first token
  std::size_t width = 0;
  char act = 0;
  StochasticLayerSpec latent;
  std::size_t pos = 0;
};

class ChainParser {
 public:
  ChainParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  std::vector<Token> parse() {
    std::vector<Token> out;
    skip_space();
    if (at_end()) fail("empty chain");
    while (!at_end()) {
      Token t;
      if (!out.empty()) {
        const char c = peek();
        if (c != '-' && c != '~') fail(std::string("expected '-' or '~' but found '") + c + "'");
        t.sep = c;
        ++i_;
        skip_space();
      }
      t.pos = base_ + i_;
      const char c = at_end() ? '\0' : peek();
      if (c == 'B' || c == 'C') {
        ++i_;
        t.kind = Token::Kind::Latent;
        const std::size_t a = number();
        if (c == 'B') {
          t.latent = StochasticLayerSpec::bernoulli(a);
        } else {
          if (at_end() || peek() != 'x') fail("categorical latent needs the form C<vars>x<categories>");
          ++i_;
          const std::size_t k = number();
          if (k < 2) fail("a categorical variable needs at least 2 categories");
          t.latent = StochasticLayerSpec::categorical(a, k);
        }
        if (t.sep == '-') fail("a latent must be introduced with '~'", t.pos);
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        t.kind = Token::Kind::Width;
        t.width = number();
        if (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) {
          t.act = peek();
          if (std::string_view("srtm").find(t.act) == std::string_view::npos) {
            fail(std::string("unknown activation '") + t.act + "'");
          }
          ++i_;
        }
        if (t.sep == '~') fail("'~' must be followed by a latent (B<w> or C<n>x<k>)", t.pos);
      } else {
        fail("expected a width or a latent");
      }
      out.push_back(t);
      skip_space();
    }
    return out;
  }

 private:
  bool at_end() const { return i_ >= text_.size(); }
  char peek() const { return text_[i_]; }
  void skip_space() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++i_;
  }
  std::size_t number() {
    const std::size_t start = i_;
    std::size_t v = 0;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + static_cast<std::size_t>(peek() - '0');
      if (v > 1'000'000) fail("width too large", base_ + start);
      ++i_;
    }
    if (i_ == start) fail("expected a number");
    if (v == 0) fail("widths must be positive", base_ + start);
    return v;
  }
  [[noreturn]] void fail(const std::string& msg) const { fail(msg, base_ + i_); }
  [[noreturn]] void fail(const std::string& msg, std::size_t pos) const {
    throw parse_error("architecture: " + msg, pos);
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t i_ = 0;
};

void add_activation(LayeredNet& net, char act, const Token* next) {
  switch (act) {
    case 's': net.add_sigmoid(); break;
    case 'r': net.add_leaky_relu(); break;
    case 't': net.add_tanh(); break;
    case 'm':
      if (next == nullptr || next->kind != Token::Kind::Latent ||
          next->latent.kind != LatentKind::Categorical) {
        throw parse_error("architecture: 'm' must directly precede a categorical latent", next ? next->pos : 0);
      }
      net.add_group_softmax(next->latent.n_vars, next->latent.n_categories);
      break;
    default: break;
  }
}

// Checks that the net feeding a sampled latent ends in the matching squashing layer.
void check_feeds(const LayeredNet& net, const Token& dense, const Token& latent) {
  if (net.layers().empty()) throw parse_error("architecture: a latent needs a dense layer before it", latent.pos);
  if (dense.width != latent.latent.width) {
    throw parse_error("architecture: layer width " + std::to_string(dense.width) +
                          " does not match latent " + latent.latent.describe(),
                      latent.pos);
  }
  const char want = latent.latent.kind == LatentKind::Bernoulli ? 's' : 'm';
  if (dense.act != want) {
    throw parse_error(std::string("architecture: the layer before ") + latent.latent.describe() +
                          " must end in '" + want + "'",
                      dense.pos);
  }
}

struct Segment {
  LayeredNet net;
  std::optional<StochasticLayerSpec> latent;  // empty for the observation segment
};

// Splits a chain after its first token into nets ending at each latent.
std::vector<Segment> build_segments(const std::vector<Token>& toks, std::size_t first_input,
                                    std::size_t last_extra_input) {
  std::vector<Segment> segs;
  std::size_t input = first_input;
  std::size_t i = 1;
  while (i < toks.size()) {
    std::size_t j = i;
    while (j < toks.size() && toks[j].kind == Token::Kind::Width) ++j;
    const bool ends_in_latent = j < toks.size();
    LayeredNet net(ends_in_latent ? input : input + last_extra_input);
    if (j == i) throw parse_error("architecture: a latent needs a dense layer before it", toks[i].pos);
    for (std::size_t k = i; k < j; ++k) {
      net.add_linear(toks[k].width);
      add_activation(net, toks[k].act, k + 1 < toks.size() ? &toks[k + 1] : nullptr);
    }
    if (ends_in_latent) {
      check_feeds(net, toks[j - 1], toks[j]);
      segs.push_back({std::move(net), toks[j].latent});
      input = toks[j].latent.width;
      i = j + 1;
    } else {
      segs.push_back({std::move(net), std::nullopt});
      i = j;
    }
  }
  return segs;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s, std::size_t& offset) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
    ++offset;
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string expand_preset(std::string_view spec) {
  std::size_t off = 0;
  const std::string key = lower(trim(spec, off));
  for (const auto& [name, body] : kPresets) {
    if (key == name) return std::string(body);
  }
  return std::string(spec);
}

ModelPair build_architecture(std::string_view spec_in, std::uint64_t seed) {
  const std::string spec = expand_preset(spec_in);

  struct Section {
    std::string_view body;
    std::size_t pos;
  };
  std::map<std::string, Section> sections;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t stop = spec.find(';', start);
    if (stop == std::string::npos) stop = spec.size();
    std::size_t off = start;
    const std::string_view part = trim(std::string_view(spec).substr(start, stop - start), off);
    if (!part.empty()) {
      const std::size_t colon = part.find(':');
      if (colon == std::string_view::npos) throw parse_error("architecture: expected 'key: chain'", off);
      std::size_t key_off = off;
      const std::string key = lower(trim(part.substr(0, colon), key_off));
      if (key != "enc" && key != "dec" && key != "ctx" && key != "prior") {
        throw parse_error("architecture: unknown section '" + key + "'", key_off);
      }
      if (sections.count(key) != 0) throw parse_error("architecture: duplicate section '" + key + "'", key_off);
      sections[key] = Section{part.substr(colon + 1), off + colon + 1};
    }
    start = stop + 1;
  }
  if (sections.count("enc") == 0) throw parse_error("architecture: missing 'enc' section", spec.size());
  if (sections.count("dec") == 0) throw parse_error("architecture: missing 'dec' section", spec.size());

  std::size_t ctx = 0;
  if (auto it = sections.find("ctx"); it != sections.end()) {
    const auto toks = ChainParser(it->second.body, it->second.pos).parse();
    if (toks.size() != 1 || toks[0].kind != Token::Kind::Width || toks[0].act != 0) {
      throw parse_error("architecture: 'ctx' takes a single width", it->second.pos);
    }
    ctx = toks[0].width;
  }

  const auto enc_toks = ChainParser(sections["enc"].body, sections["enc"].pos).parse();
  const auto dec_toks = ChainParser(sections["dec"].body, sections["dec"].pos).parse();
  if (enc_toks[0].kind != Token::Kind::Width || enc_toks[0].act != 0) {
    throw parse_error("architecture: encoder must start with its input width", enc_toks[0].pos);
  }
  if (dec_toks[0].kind != Token::Kind::Latent) {
    throw parse_error("architecture: decoder must start with the top latent", dec_toks[0].pos);
  }

  ModelPair pair;
  pair.architecture = spec;

  // Encoder: bottom-up, every segment must end in a latent.
  auto enc = build_segments(enc_toks, enc_toks[0].width, 0);
  if (enc.empty() || !enc.back().latent) {
    throw parse_error("architecture: encoder must end with a latent", enc_toks.back().pos);
  }
  for (auto& s : enc) {
    pair.inf.latents.push_back(*s.latent);
    pair.inf.encoders.push_back(std::move(s.net));
  }

  // Decoder: top-down, the final segment produces x.
  auto dec = build_segments(dec_toks, dec_toks[0].latent.width, ctx);
  if (dec.empty() || dec.back().latent) {
    throw parse_error("architecture: decoder must end with the observation layer", dec_toks.back().pos);
  }
  const Token& last = dec_toks.back();
  if (last.act != 's') throw parse_error("architecture: the observation layer must end in 's'", last.pos);

  std::vector<StochasticLayerSpec> dec_latents{dec_toks[0].latent};
  for (const auto& s : dec) {
    if (s.latent) dec_latents.push_back(*s.latent);
  }
  std::reverse(dec_latents.begin(), dec_latents.end());
  if (dec_latents != pair.inf.latents) {
    throw parse_error("architecture: encoder and decoder latents disagree", sections["dec"].pos);
  }
  for (auto it = dec.rbegin(); it != dec.rend(); ++it) pair.gen.decoders.push_back(std::move(it->net));

  pair.gen.latents = pair.inf.latents;
  pair.gen.obs_width = last.width;
  pair.gen.context_width = ctx;
  pair.inf.obs_width = last.width;
  pair.inf.context_width = ctx;
  if (enc_toks[0].width != last.width + ctx) {
    throw parse_error("architecture: encoder input width " + std::to_string(enc_toks[0].width) +
                          " must equal observation width " + std::to_string(last.width) +
                          (ctx ? " plus context width " + std::to_string(ctx) : std::string()),
                      enc_toks[0].pos);
  }

  const StochasticLayerSpec& top = pair.gen.latents.back();
  if (ctx > 0) {
    auto it = sections.find("prior");
    if (it == sections.end()) throw parse_error("architecture: 'ctx' requires a 'prior' section", spec.size());
    const auto toks = ChainParser(it->second.body, it->second.pos).parse();
    if (toks[0].kind != Token::Kind::Width || toks[0].width != ctx || toks[0].act != 0) {
      throw parse_error("architecture: prior must start with the context width", toks[0].pos);
    }
    auto segs = build_segments(toks, ctx, 0);
    if (segs.size() != 1 || !segs[0].latent || !(*segs[0].latent == top)) {
      throw parse_error("architecture: prior must end with the top latent " + top.describe(),
                        toks.back().pos);
    }
    pair.gen.prior = std::move(segs[0].net);
  } else {
    if (sections.count("prior") != 0) {
      throw parse_error("architecture: 'prior' section needs 'ctx'", sections["prior"].pos);
    }
    pair.gen.prior = LayeredNet(0);
    pair.gen.prior.add_linear(top.width);
    if (top.kind == LatentKind::Bernoulli) {
      pair.gen.prior.add_sigmoid();
    } else {
      pair.gen.prior.add_group_softmax(top.n_vars, top.n_categories);
    }
  }

  std::mt19937_64 rng(seed);
  pair.gen.prior.init_params(rng);
  for (auto& d : pair.gen.decoders) d.init_params(rng);
  for (auto& e : pair.inf.encoders) e.init_params(rng);
  return pair;
}

}  // namespace jsa
