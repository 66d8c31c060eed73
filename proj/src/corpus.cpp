#include "fdbq/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fdbq/error.hpp"
#include "fdbq/rng.hpp"

namespace fdbq::corpus {

namespace {

constexpr std::uint64_t lexicon_seed = 0x6c657869636f6e;
constexpr std::size_t lexicon_size = 400;
constexpr std::size_t successors_per_word = 4;

struct Lexicon {
    std::vector<std::string> words;
    std::vector<double> cdf;                         // Zipf over word rank
    std::vector<std::vector<std::size_t>> successors;  // preferred next words
};

std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

const Lexicon& lexicon() {
    static const Lexicon lex = [] {
        static const char* onsets[] = {"b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w",
                                       "br", "ch", "st", "th", "tr", "pl", "sh"};
        static const char* vowels[] = {"a", "e", "i", "o", "u", "ea", "ou", "ai"};
        static const char* codas[] = {"", "", "", "n", "r", "s", "t", "l", "nd", "st"};
        Rng rng(lexicon_seed);
        Lexicon l;
        while (l.words.size() < lexicon_size) {
            // short words are the frequent ones, as in natural text
            const std::size_t rank = l.words.size();
            const std::size_t syllables = rank < 40 ? 1 : (rank < 200 ? 2 : 3);
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += onsets[rng.below(std::size(onsets))];
                w += vowels[rng.below(std::size(vowels))];
            }
            w += codas[rng.below(std::size(codas))];
            if (std::find(l.words.begin(), l.words.end(), w) == l.words.end()) l.words.push_back(w);
        }
        double acc = 0.0;
        for (std::size_t r = 0; r < lexicon_size; ++r) {
            acc += 1.0 / static_cast<double>(r + 1);
            l.cdf.push_back(acc);
        }
        l.successors.resize(lexicon_size);
        for (auto& s : l.successors)
            for (std::size_t k = 0; k < successors_per_word; ++k) s.push_back(draw(l.cdf, rng));
        return l;
    }();
    return lex;
}

}  // namespace

std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed) {
    const Lexicon& lex = lexicon();
    Rng rng(seed, 0x636f72707573);
    std::string out;
    out.reserve(n_bytes + 64);
    while (out.size() < n_bytes) {
        const std::size_t len = 4 + rng.below(9);
        std::size_t word = draw(lex.cdf, rng);
        for (std::size_t i = 0; i < len; ++i) {
            std::string w = lex.words[word];
            if (i == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
            out += w;
            out += (i + 1 == len) ? (rng.below(5) == 0 ? "? " : ". ") : (rng.below(12) == 0 ? ", " : " ");
            if (rng.uniform() < 0.7)
                word = lex.successors[word][rng.below(successors_per_word)];
            else
                word = draw(lex.cdf, rng);
        }
        if (rng.below(8) == 0) out += '\n';
    }
    out.resize(n_bytes);
    return out;
}

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> t;
    t.reserve(text.size());
    for (char c : text) t.push_back(static_cast<int>(static_cast<unsigned char>(c)));
    return t;
}

std::string detokenize_bytes(const std::vector<int>& tokens) {
    std::string s;
    s.reserve(tokens.size());
    for (int t : tokens) {
        if (t < 0 || t > 255) throw Error(ErrorKind::invalid_argument, "detokenize_bytes: token id outside byte range");
        s.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return s;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error(ErrorKind::io, "error while reading '" + path.string() + "'");
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::io, "error while writing '" + path.string() + "'");
}

std::vector<std::size_t> token_frequencies(const std::vector<int>& tokens, std::size_t vocab_size) {
    std::vector<std::size_t> f(vocab_size, 0);
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
            throw Error(ErrorKind::invalid_argument, "token_frequencies: token id outside vocabulary");
        ++f[static_cast<std::size_t>(t)];
    }
    return f;
}

}  // namespace fdbq::corpus
