#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fdbq/bitplane.hpp"
#include "fdbq/quantcore.hpp"

namespace fdbq::codec {

struct PlaneStats {
    double density = 0.0;
    double shannon_bits_per_weight = 0.0;
    double encoded_bits_per_weight = 0.0;
};

// -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0.
double binary_entropy_bits(double p) noexcept;

// Shannon part only; encoded_bits_per_weight is left at 0.
PlaneStats plane_entropy(const BitPlane& p);

// Sum of both planes' binary entropies: bits per original weight.
double effective_bits(const quant::DualBinaryWeight& d);

// Fixed-width symbols taken from the row-major stream of valid bits (no row
// padding). Bit i of the stream lands at bit position i % symbol_bits of its
// symbol, least significant first; the final symbol is zero-filled.
std::vector<std::uint32_t> plane_symbols(const BitPlane& p, int symbol_bits);

// Entropy of the empirical symbol histogram divided by symbol_bits: the
// lower bound for any prefix code over these symbols, per weight.
double symbol_entropy_bits_per_weight(const BitPlane& p, int symbol_bits);

struct EncodedPlane {
    std::vector<std::uint8_t> blob;
    PlaneStats stats;
    double symbol_entropy_bits_per_weight = 0.0;
};

inline constexpr std::array<std::uint8_t, 4> blob_magic = {'F', 'D', 'B', 'H'};
inline constexpr std::uint8_t blob_version = 1;
inline constexpr int max_code_length = 31;

// Canonical Huffman coding of the plane's symbols. See docs/FORMATS.md for
// the byte layout of the blob.
EncodedPlane huffman_encode(const BitPlane& p, int symbol_bits = 8);
BitPlane huffman_decode(std::span<const std::uint8_t> blob);

// Code lengths for a histogram (0 for absent symbols), at most `limit` long.
// Ties in frequency are broken by symbol value, so the result is
// deterministic.
std::vector<int> huffman_code_lengths(std::span<const std::uint64_t> histogram, int limit = max_code_length);

}  // namespace fdbq::codec
