#include "fdbq/codec.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

#include "fdbq/error.hpp"

namespace fdbq::codec {

namespace {

void check_symbol_bits(int symbol_bits) {
    if (symbol_bits != 4 && symbol_bits != 8)
        throw Error(ErrorKind::invalid_argument, "huffman: symbol_bits must be 4 or 8");
}

class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void put(std::uint32_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) {
            if (fill_ == 0) out_.push_back(0);
            if ((value >> i) & 1u) out_.back() |= static_cast<std::uint8_t>(0x80u >> fill_);
            fill_ = (fill_ + 1) % 8;
            ++count_;
        }
    }
    std::uint64_t count() const noexcept { return count_; }

private:
    std::vector<std::uint8_t>& out_;
    int fill_ = 0;
    std::uint64_t count_ = 0;
};

class BitReader {
public:
    BitReader(std::span<const std::uint8_t> data, std::uint64_t nbits) : data_(data), nbits_(nbits) {}
    int bit() {
        if (pos_ >= nbits_) throw Error(ErrorKind::format, "huffman_decode: payload truncated");
        const int b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1;
        ++pos_;
        return b;
    }
    std::uint32_t bits(int n) {
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 1) | static_cast<std::uint32_t>(bit());
        return v;
    }
    std::uint64_t position() const noexcept { return pos_; }

private:
    std::span<const std::uint8_t> data_;
    std::uint64_t nbits_;
    std::uint64_t pos_ = 0;
};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
    if (at + static_cast<std::size_t>(bytes) > in.size()) throw Error(ErrorKind::format, "huffman_decode: blob truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
    return v;
}

std::vector<std::uint32_t> canonical_codes(const std::vector<int>& lengths) {
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < lengths.size(); ++s)
        if (lengths[s] > 0) order.push_back(s);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    std::vector<std::uint32_t> codes(lengths.size(), 0);
    std::uint32_t code = 0;
    int prev = 0;
    for (std::size_t s : order) {
        code <<= (lengths[s] - prev);
        codes[s] = code++;
        prev = lengths[s];
    }
    return codes;
}

std::vector<int> unlimited_lengths(std::span<const std::uint64_t> freq) {
    struct Node {
        std::uint64_t weight;
        std::size_t id;
    };
    auto heavier = [](const Node& a, const Node& b) {
        return a.weight != b.weight ? a.weight > b.weight : a.id > b.id;
    };
    std::priority_queue<Node, std::vector<Node>, decltype(heavier)> heap(heavier);
    const std::size_t n = freq.size();
    std::vector<std::size_t> parent(2 * n, 0);
    for (std::size_t s = 0; s < n; ++s)
        if (freq[s] > 0) heap.push({freq[s], s});

    std::vector<int> lengths(n, 0);
    if (heap.empty()) return lengths;
    if (heap.size() == 1) {
        lengths[heap.top().id] = 1;
        return lengths;
    }
    std::size_t next = n;
    while (heap.size() > 1) {
        const Node a = heap.top();
        heap.pop();
        const Node b = heap.top();
        heap.pop();
        parent[a.id] = next;
        parent[b.id] = next;
        heap.push({a.weight + b.weight, next});
        ++next;
    }
    const std::size_t root = next - 1;
    std::vector<int> depth(next, 0);
    for (std::size_t id = root; id-- > 0;) {
        // Internal nodes are created after their children, so parents have
        // larger ids and their depth is already known.
        if (id >= n || freq[id] > 0) depth[id] = depth[parent[id]] + 1;
    }
    for (std::size_t s = 0; s < n; ++s)
        if (freq[s] > 0) lengths[s] = depth[s];
    return lengths;
}

}  // namespace

double binary_entropy_bits(double p) noexcept {
    double h = 0.0;
    if (p > 0.0) h -= p * std::log2(p);
    if (p < 1.0) h -= (1.0 - p) * std::log2(1.0 - p);
    return h;
}

PlaneStats plane_entropy(const BitPlane& p) {
    if (p.size() == 0) throw Error(ErrorKind::invalid_argument, "plane_entropy: empty plane");
    PlaneStats st;
    st.density = static_cast<double>(p.ones_count()) / static_cast<double>(p.size());
    st.shannon_bits_per_weight = binary_entropy_bits(st.density);
    return st;
}

double effective_bits(const quant::DualBinaryWeight& d) {
    return plane_entropy(d.plane1).shannon_bits_per_weight + plane_entropy(d.plane2).shannon_bits_per_weight;
}

std::vector<std::uint32_t> plane_symbols(const BitPlane& p, int symbol_bits) {
    check_symbol_bits(symbol_bits);
    const std::size_t total = p.size();
    const std::size_t sb = static_cast<std::size_t>(symbol_bits);
    std::vector<std::uint32_t> symbols((total + sb - 1) / sb, 0);
    std::size_t i = 0;
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t c = 0; c < p.cols(); ++c, ++i)
            if (p.get(r, c)) symbols[i / sb] |= 1u << (i % sb);
    return symbols;
}

double symbol_entropy_bits_per_weight(const BitPlane& p, int symbol_bits) {
    const auto symbols = plane_symbols(p, symbol_bits);
    std::vector<std::uint64_t> hist(std::size_t{1} << symbol_bits, 0);
    for (std::uint32_t s : symbols) ++hist[s];
    const double n = static_cast<double>(symbols.size());
    double h = 0.0;
    for (std::uint64_t c : hist)
        if (c > 0) {
            const double q = static_cast<double>(c) / n;
            h -= q * std::log2(q);
        }
    return h * n / static_cast<double>(p.size());
}

std::vector<int> huffman_code_lengths(std::span<const std::uint64_t> histogram, int limit) {
    if (limit < 1) throw Error(ErrorKind::invalid_argument, "huffman_code_lengths: limit must be positive");
    std::vector<std::uint64_t> freq(histogram.begin(), histogram.end());
    std::size_t present = 0;
    for (std::uint64_t f : freq) present += f > 0;
    if (present > (std::size_t{1} << std::min(limit, 62)))
        throw Error(ErrorKind::invalid_argument, "huffman_code_lengths: too many symbols for the length limit");
    for (;;) {
        auto lengths = unlimited_lengths(freq);
        if (*std::max_element(lengths.begin(), lengths.end()) <= limit) return lengths;
        // Flatten the distribution and retry; present symbols stay present.
        for (std::uint64_t& f : freq)
            if (f > 0) f = std::max<std::uint64_t>(1, f >> 1);
    }
}

EncodedPlane huffman_encode(const BitPlane& p, int symbol_bits) {
    check_symbol_bits(symbol_bits);
    if (p.size() == 0) throw Error(ErrorKind::invalid_argument, "huffman_encode: empty plane");
    const auto symbols = plane_symbols(p, symbol_bits);
    const std::size_t alphabet = std::size_t{1} << symbol_bits;
    std::vector<std::uint64_t> hist(alphabet, 0);
    for (std::uint32_t s : symbols) ++hist[s];
    const auto lengths = huffman_code_lengths(hist);
    const auto codes = canonical_codes(lengths);

    EncodedPlane enc;
    auto& out = enc.blob;
    out.insert(out.end(), blob_magic.begin(), blob_magic.end());
    out.push_back(blob_version);
    out.push_back(static_cast<std::uint8_t>(symbol_bits));
    out.push_back(static_cast<std::uint8_t>(*std::max_element(lengths.begin(), lengths.end())));
    out.push_back(0);
    put_le(out, p.rows(), 4);
    put_le(out, p.cols(), 4);
    put_le(out, symbols.size(), 8);
    {
        BitWriter table(out);
        for (int len : lengths) table.put(static_cast<std::uint32_t>(len), 5);
    }
    const std::size_t count_at = out.size();
    put_le(out, 0, 8);
    std::vector<std::uint8_t> payload;
    BitWriter writer(payload);
    for (std::uint32_t s : symbols) writer.put(codes[s], lengths[s]);
    for (int i = 0; i < 8; ++i) out[count_at + i] = static_cast<std::uint8_t>(writer.count() >> (8 * i));
    out.insert(out.end(), payload.begin(), payload.end());

    enc.stats = plane_entropy(p);
    enc.stats.encoded_bits_per_weight = 8.0 * static_cast<double>(out.size()) / static_cast<double>(p.size());
    enc.symbol_entropy_bits_per_weight = symbol_entropy_bits_per_weight(p, symbol_bits);
    return enc;
}

BitPlane huffman_decode(std::span<const std::uint8_t> blob) {
    if (blob.size() < 24 || !std::equal(blob_magic.begin(), blob_magic.end(), blob.begin()))
        throw Error(ErrorKind::format, "huffman_decode: bad magic");
    if (blob[4] != blob_version) throw Error(ErrorKind::format, "huffman_decode: unsupported version");
    const int symbol_bits = blob[5];
    check_symbol_bits(symbol_bits);
    const std::size_t rows = get_le(blob, 8, 4);
    const std::size_t cols = get_le(blob, 12, 4);
    const std::uint64_t nsym = get_le(blob, 16, 8);
    const std::size_t alphabet = std::size_t{1} << symbol_bits;
    if (rows == 0 || cols == 0 || nsym != (rows * cols + symbol_bits - 1) / symbol_bits)
        throw Error(ErrorKind::format, "huffman_decode: inconsistent header");

    const std::size_t table_bytes = (alphabet * 5 + 7) / 8;
    if (blob.size() < 24 + table_bytes + 8) throw Error(ErrorKind::format, "huffman_decode: blob truncated");
    std::vector<int> lengths(alphabet);
    {
        BitReader table(blob.subspan(24, table_bytes), alphabet * 5);
        for (auto& len : lengths) len = static_cast<int>(table.bits(5));
    }
    const std::size_t count_at = 24 + table_bytes;
    const std::uint64_t payload_bits = get_le(blob, count_at, 8);
    const auto payload = blob.subspan(count_at + 8);
    if (payload.size() * 8 < payload_bits) throw Error(ErrorKind::format, "huffman_decode: payload truncated");

    // Canonical decoding tables: first code and symbol offset per length.
    std::vector<std::size_t> sorted;
    for (std::size_t s = 0; s < alphabet; ++s)
        if (lengths[s] > 0) sorted.push_back(s);
    std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    std::vector<std::uint32_t> count(max_code_length + 1, 0), first(max_code_length + 2, 0), offset(max_code_length + 2, 0);
    for (std::size_t s : sorted) ++count[lengths[s]];
    std::uint32_t code = 0;
    std::uint32_t off = 0;
    for (int len = 1; len <= max_code_length; ++len) {
        code = (code + count[len - 1]) << 1;
        first[len] = code;
        offset[len] = off;
        off += count[len];
    }

    BitPlane plane(rows, cols);
    BitReader reader(payload, payload_bits);
    std::size_t bit_index = 0;
    const std::size_t total = rows * cols;
    for (std::uint64_t k = 0; k < nsym; ++k) {
        std::uint32_t c = 0;
        int len = 0;
        std::size_t symbol = alphabet;
        while (symbol == alphabet) {
            c = (c << 1) | static_cast<std::uint32_t>(reader.bit());
            ++len;
            if (len > max_code_length) throw Error(ErrorKind::format, "huffman_decode: invalid code");
            if (count[len] > 0 && c >= first[len] && c - first[len] < count[len]) symbol = sorted[offset[len] + c - first[len]];
        }
        for (int b = 0; b < symbol_bits && bit_index < total; ++b, ++bit_index)
            if ((symbol >> b) & 1u) plane.set(bit_index / cols, bit_index % cols, true);
    }
    if (reader.position() != payload_bits) throw Error(ErrorKind::format, "huffman_decode: trailing payload bits");
    return plane;
}

}  // namespace fdbq::codec
