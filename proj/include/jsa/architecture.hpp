#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "jsa/models.hpp"

namespace jsa {

/// Builds a freshly initialized ModelPair from an architecture string.
///
/// Presets: linear, nonlinear, two-layers, categorical-20x10, structured-50.
///
/// Explicit form: sections `key: chain` separated by ';'.
///
///   enc: 784-200s~B200            input width, dense layers, sampled latent(s)
///   dec: B200-784s                top latent, dense layers, observation
///   ctx: 392                      context width (conditional models only)
///   prior: 392-200t-200t-50s~B50  conditional prior net, required with ctx
///
/// A dense layer is `-<width>` optionally followed by an activation letter:
/// s sigmoid, r LeakyReLU, t tanh, m group softmax. `~B<w>` samples w
/// Bernoulli units (the preceding layer must end in s); `~C<n>x<k>` samples n
/// categorical variables with k categories (the preceding layer must end in m).
/// Encoder chains list latents bottom-up, decoder chains top-down; a chain
/// may contain several latents. With a context, the first encoder sees
/// [c | x] and the bottom decoder sees [h_1 | c].
///
/// Throws parse_error (carrying the character position) on malformed input.
ModelPair build_architecture(std::string_view spec, std::uint64_t seed);

/// Expands a preset name to its explicit form; other strings are returned unchanged.
std::string expand_preset(std::string_view spec);

}  // namespace jsa
