#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fdbq::corpus {

// English-like text over a fixed pseudo-word lexicon: word frequencies follow
// a Zipf law and each word prefers a few successors, so a small model can
// learn both spelling and short-range structure. The lexicon is the same for
// every seed; the seed only drives which sentences are drawn.
std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed);

// Byte-level tokenization: token id = byte value, vocab 256.
std::vector<int> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(const std::vector<int>& tokens);

// Reads a whole file; throws Error(io) naming the path on failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Token counts over [0, vocab_size); ids outside the range are rejected.
std::vector<std::size_t> token_frequencies(const std::vector<int>& tokens, std::size_t vocab_size);

}  // namespace fdbq::corpus
