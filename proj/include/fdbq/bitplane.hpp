#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fdbq {

// A {0,1} matrix packed into 64-bit words, row-major. Each row starts on a
// fresh word; bit j of a row lives in word j / 64 at position j % 64.
// Padding bits past `cols` are always zero and ones_count() is kept exact.
class BitPlane {
public:
    static constexpr std::size_t word_bits = 64;

    BitPlane() = default;
    BitPlane(std::size_t rows, std::size_t cols);

    // `bits` holds rows*cols entries, row-major, any nonzero byte is a one.
    static BitPlane pack(std::size_t rows, std::size_t cols, std::span<const std::uint8_t> bits);
    // Build from raw words; padding is validated, ones are recounted.
    static BitPlane from_words(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> words);

    std::vector<std::uint8_t> unpack() const;

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }
    std::size_t words_per_row() const noexcept { return words_per_row_; }
    std::size_t ones_count() const noexcept { return ones_; }

    bool get(std::size_t r, std::size_t c) const noexcept {
        return (words_[r * words_per_row_ + c / word_bits] >> (c % word_bits)) & 1u;
    }
    void set(std::size_t r, std::size_t c, bool value) noexcept;

    std::span<const std::uint64_t> row_words(std::size_t r) const noexcept {
        return {words_.data() + r * words_per_row_, words_per_row_};
    }
    const std::vector<std::uint64_t>& words() const noexcept { return words_; }

    bool operator==(const BitPlane&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t words_per_row_ = 0;
    std::size_t ones_ = 0;
    std::vector<std::uint64_t> words_;
};

}  // namespace fdbq
