#include "fdbq/bitplane.hpp"

#include <bit>

#include "fdbq/error.hpp"

namespace fdbq {

BitPlane::BitPlane(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_per_row_((cols + word_bits - 1) / word_bits), words_(rows * words_per_row_, 0) {
    if (rows == 0 || cols == 0) throw Error(ErrorKind::invalid_argument, "BitPlane needs rows >= 1 and cols >= 1");
}

BitPlane BitPlane::pack(std::size_t rows, std::size_t cols, std::span<const std::uint8_t> bits) {
    if (bits.size() != rows * cols) throw Error(ErrorKind::shape_mismatch, "BitPlane::pack: bit count does not match shape");
    BitPlane p(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::uint64_t* row = p.words_.data() + r * p.words_per_row_;
        for (std::size_t c = 0; c < cols; ++c) {
            if (bits[r * cols + c]) row[c / word_bits] |= std::uint64_t{1} << (c % word_bits);
        }
    }
    for (std::uint64_t w : p.words_) p.ones_ += static_cast<std::size_t>(std::popcount(w));
    return p;
}

BitPlane BitPlane::from_words(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> words) {
    BitPlane p(rows, cols);
    if (words.size() != p.words_.size())
        throw Error(ErrorKind::shape_mismatch, "BitPlane::from_words: word count does not match shape");
    const std::size_t tail = cols % word_bits;
    if (tail != 0) {
        const std::uint64_t pad_mask = ~((std::uint64_t{1} << tail) - 1);
        for (std::size_t r = 0; r < rows; ++r) {
            if (words[r * p.words_per_row_ + p.words_per_row_ - 1] & pad_mask)
                throw Error(ErrorKind::format, "BitPlane::from_words: nonzero padding bits");
        }
    }
    p.words_ = std::move(words);
    for (std::uint64_t w : p.words_) p.ones_ += static_cast<std::size_t>(std::popcount(w));
    return p;
}

std::vector<std::uint8_t> BitPlane::unpack() const {
    std::vector<std::uint8_t> out(rows_ * cols_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) out[r * cols_ + c] = get(r, c) ? 1 : 0;
    return out;
}

void BitPlane::set(std::size_t r, std::size_t c, bool value) noexcept {
    std::uint64_t& w = words_[r * words_per_row_ + c / word_bits];
    const std::uint64_t mask = std::uint64_t{1} << (c % word_bits);
    const bool old = (w & mask) != 0;
    if (old == value) return;
    if (value) {
        w |= mask;
        ++ones_;
    } else {
        w &= ~mask;
        --ones_;
    }
}

}  // namespace fdbq
