#include "fdbq/checkpoint.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "fdbq/error.hpp"

namespace fdbq::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

struct Tensor {
    std::string name;
    std::string dtype;  // "f64", "i8", "u64"
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> data;
};

template <typename T>
std::vector<std::uint8_t> raw_bytes(const T* p, std::size_t n) {
    std::vector<std::uint8_t> out(n * sizeof(T));
    if (n) std::memcpy(out.data(), p, out.size());
    return out;
}

Tensor f64_tensor(std::string name, const Matrix& m) {
    return {std::move(name), "f64", {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
            raw_bytes(m.data(), static_cast<std::size_t>(m.size()))};
}

Tensor f64_tensor(std::string name, const Vector& v) {
    return {std::move(name), "f64", {static_cast<std::size_t>(v.size())},
            raw_bytes(v.data(), static_cast<std::size_t>(v.size()))};
}

Tensor f64_tensor(std::string name, const std::vector<double>& v) {
    return {std::move(name), "f64", {v.size()}, raw_bytes(v.data(), v.size())};
}

Tensor plane_tensor(std::string name, const BitPlane& p) {
    return {std::move(name), "u64", {p.rows(), p.words_per_row()}, raw_bytes(p.words().data(), p.words().size())};
}

const char* range_name(quant::RangeMode r) {
    return r == quant::RangeMode::symmetric ? "symmetric" : "asymmetric_shifted";
}

quant::RangeMode parse_range(const std::string& s) {
    if (s == "symmetric") return quant::RangeMode::symmetric;
    if (s == "asymmetric_shifted") return quant::RangeMode::asymmetric_shifted;
    throw Error(ErrorKind::format, "checkpoint: unknown range mode '" + s + "'");
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_le(const std::vector<std::uint8_t>& b, std::size_t at, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

class TensorTable {
public:
    TensorTable(const json& list, const std::uint8_t* payload, std::size_t payload_size) {
        std::size_t end = 0;
        for (const auto& t : list) {
            Entry e;
            e.dtype = t.at("dtype").get<std::string>();
            e.shape = t.at("shape").get<std::vector<std::size_t>>();
            const auto offset = t.at("offset").get<std::size_t>();
            const auto nbytes = t.at("nbytes").get<std::size_t>();
            if (offset > payload_size || nbytes > payload_size - offset)
                throw Error(ErrorKind::format, "checkpoint: tensor '" + t.at("name").get<std::string>() +
                                                   "' extends past the end of the file");
            std::size_t elems = 1;
            for (auto d : e.shape) elems *= d;
            const std::size_t width = e.dtype == "i8" ? 1 : 8;
            if (e.dtype != "f64" && e.dtype != "i8" && e.dtype != "u64")
                throw Error(ErrorKind::format, "checkpoint: unknown dtype '" + e.dtype + "'");
            if (elems * width != nbytes)
                throw Error(ErrorKind::format, "checkpoint: tensor '" + t.at("name").get<std::string>() +
                                                   "' size does not match its shape");
            e.data = payload + offset;
            e.nbytes = nbytes;
            end = std::max(end, offset + nbytes);
            const auto name = t.at("name").get<std::string>();
            if (!entries_.emplace(name, e).second)
                throw Error(ErrorKind::format, "checkpoint: duplicate tensor '" + name + "'");
        }
        if (end != payload_size) throw Error(ErrorKind::format, "checkpoint: trailing bytes after the last tensor");
    }

    Matrix matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        const Entry& e = take(name, "f64", {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
        Matrix m(rows, cols);
        if (e.nbytes) std::memcpy(m.data(), e.data, e.nbytes);
        return m;
    }

    Vector vector(const std::string& name, Eigen::Index n) {
        const Entry& e = take(name, "f64", {static_cast<std::size_t>(n)});
        Vector v(n);
        if (e.nbytes) std::memcpy(v.data(), e.data, e.nbytes);
        return v;
    }

    std::vector<double> doubles(const std::string& name, std::size_t n) {
        const Entry& e = take(name, "f64", {n});
        std::vector<double> v(n);
        if (e.nbytes) std::memcpy(v.data(), e.data, e.nbytes);
        return v;
    }

    std::vector<std::int8_t> int8s(const std::string& name, std::size_t rows, std::size_t cols) {
        const Entry& e = take(name, "i8", {rows, cols});
        std::vector<std::int8_t> v(rows * cols);
        if (e.nbytes) std::memcpy(v.data(), e.data, e.nbytes);
        return v;
    }

    BitPlane plane(const std::string& name, std::size_t rows, std::size_t cols) {
        const std::size_t wpr = (cols + BitPlane::word_bits - 1) / BitPlane::word_bits;
        const Entry& e = take(name, "u64", {rows, wpr});
        std::vector<std::uint64_t> words(rows * wpr);
        if (e.nbytes) std::memcpy(words.data(), e.data, e.nbytes);
        try {
            return BitPlane::from_words(rows, cols, std::move(words));
        } catch (const Error& err) {
            throw Error(ErrorKind::format, "checkpoint: tensor '" + name + "': " + err.what());
        }
    }

    void expect_consumed() const {
        for (const auto& [name, e] : entries_)
            if (!e.used) throw Error(ErrorKind::format, "checkpoint: unexpected tensor '" + name + "'");
    }

private:
    struct Entry {
        std::string dtype;
        std::vector<std::size_t> shape;
        const std::uint8_t* data = nullptr;
        std::size_t nbytes = 0;
        bool used = false;
    };

    const Entry& take(const std::string& name, const char* dtype, const std::vector<std::size_t>& shape) {
        const auto it = entries_.find(name);
        if (it == entries_.end()) throw Error(ErrorKind::format, "checkpoint: missing tensor '" + name + "'");
        if (it->second.dtype != dtype || it->second.shape != shape)
            throw Error(ErrorKind::format, "checkpoint: tensor '" + name + "' has unexpected dtype or shape");
        it->second.used = true;
        return it->second;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace

json config_to_json(const model::ModelConfig& c) {
    json modes = json::object();
    for (const auto& [name, mode] : c.quant_mode) modes[name] = model::to_string(mode);
    return json{{"n_layers", c.n_layers},   {"d_model", c.d_model},         {"n_heads", c.n_heads},
                {"d_ffn", c.d_ffn},         {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                {"quant_mode", modes}};
}

model::ModelConfig config_from_json(const json& j) {
    model::ModelConfig c;
    try {
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ffn = j.at("d_ffn").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        if (j.contains("quant_mode"))
            for (const auto& [name, mode] : j.at("quant_mode").items())
                c.quant_mode[name] = model::parse_linear_mode(mode.get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
    const model::TransformerLM& m = c.model;
    std::vector<Tensor> tensors;
    tensors.push_back(f64_tensor("tok_emb", m.tok_emb));
    tensors.push_back(f64_tensor("pos_emb", m.pos_emb));
    json layers = json::object();
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const model::Block& b = m.blocks[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        tensors.push_back(f64_tensor(p + "norm1", b.norm1));
        tensors.push_back(f64_tensor(p + "norm2", b.norm2));
        for (const model::QuantLinear* lin : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) {
            const std::string& n = lin->name();
            tensors.push_back(f64_tensor(n + ".weight", lin->weight()));
            json info{{"mode", model::to_string(lin->mode())}};
            switch (lin->mode()) {
                case model::LinearMode::fp: break;
                case model::LinearMode::rtn: {
                    const auto& q = *lin->rtn();
                    info["bits"] = q.spec.bits;
                    info["group_size"] = q.spec.group_size;
                    info["range"] = range_name(q.spec.range);
                    tensors.push_back({n + ".codes", "i8", {q.rows(), q.cols()}, raw_bytes(q.codes.data(), q.codes.size())});
                    tensors.push_back(f64_tensor(n + ".scales", q.scales));
                    break;
                }
                case model::LinearMode::sign: {
                    const auto& s = *lin->sign();
                    info["group_size"] = s.layout.group_size;
                    tensors.push_back(plane_tensor(n + ".bits", s.bits));
                    tensors.push_back(f64_tensor(n + ".scales", s.scales));
                    break;
                }
                case model::LinearMode::fdb: {
                    const auto& d = *lin->fdb();
                    info["group_size"] = d.layout.group_size;
                    tensors.push_back(plane_tensor(n + ".plane1", d.plane1));
                    tensors.push_back(plane_tensor(n + ".plane2", d.plane2));
                    std::vector<double> a1, a2;
                    for (const auto& s : d.scales) {
                        a1.push_back(s.alpha1);
                        a2.push_back(s.alpha2);
                    }
                    tensors.push_back(f64_tensor(n + ".alpha1", a1));
                    tensors.push_back(f64_tensor(n + ".alpha2", a2));
                    break;
                }
            }
            layers[n] = info;
        }
    }
    tensors.push_back(f64_tensor("norm_final", m.norm_final));
    tensors.push_back(f64_tensor("head", m.head));

    json list = json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors) {
        list.push_back(json{{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"offset", offset},
                            {"nbytes", t.data.size()}});
        offset += t.data.size();
    }
    const json header{{"config", config_to_json(m.config())},
                      {"rng_seed", c.rng_seed},
                      {"layers", layers},
                      {"meta", c.meta},
                      {"tensors", list}};
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out(magic, magic + 8);
    append_u32(out, format_version);
    append_u64(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    out.reserve(out.size() + offset);
    for (const auto& t : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), magic, 8) != 0)
        throw Error(ErrorKind::format, "checkpoint: bad magic (not a checkpoint file)");
    const auto version = static_cast<std::uint32_t>(read_le(bytes, 8, 4));
    if (version != format_version)
        throw Error(ErrorKind::format, "checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t header_len = read_le(bytes, 12, 8);
    if (header_len > bytes.size() - 20) throw Error(ErrorKind::format, "checkpoint: truncated header");
    json header;
    try {
        header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    const std::size_t payload_at = 20 + header_len;

    Checkpoint c;
    try {
        const model::ModelConfig cfg = config_from_json(header.at("config"));
        c.rng_seed = header.at("rng_seed").get<std::uint64_t>();
        c.meta = header.at("meta");
        TensorTable table(header.at("tensors"), bytes.data() + payload_at, bytes.size() - payload_at);
        const json& layers = header.at("layers");

        model::TransformerLM m(cfg);
        const auto d = static_cast<Eigen::Index>(cfg.d_model);
        m.tok_emb = table.matrix("tok_emb", m.tok_emb.rows(), d);
        m.pos_emb = table.matrix("pos_emb", m.pos_emb.rows(), d);
        for (std::size_t l = 0; l < m.blocks.size(); ++l) {
            model::Block& b = m.blocks[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            b.norm1 = table.vector(p + "norm1", d);
            b.norm2 = table.vector(p + "norm2", d);
            for (model::QuantLinear* lin : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) {
                const std::string n = lin->name();
                lin->mutable_weight() = table.matrix(n + ".weight", lin->weight().rows(), lin->weight().cols());
                const json& info = layers.at(n);
                const auto mode = model::parse_linear_mode(info.at("mode").get<std::string>());
                if (mode != cfg.mode_of(n))
                    throw Error(ErrorKind::format, "checkpoint: layer '" + n + "' payload does not match config mode");
                const std::size_t rows = lin->out_features(), cols = lin->in_features();
                switch (mode) {
                    case model::LinearMode::fp: break;
                    case model::LinearMode::rtn: {
                        quant::GroupedIntQuant q;
                        q.spec.bits = info.at("bits").get<int>();
                        q.spec.group_size = info.at("group_size").get<std::size_t>();
                        q.spec.range = parse_range(info.at("range").get<std::string>());
                        q.spec.validate();
                        q.layout = quant::GroupLayout(rows, cols, q.spec.group_size);
                        q.codes = table.int8s(n + ".codes", rows, cols);
                        q.scales = table.doubles(n + ".scales", q.layout.group_count());
                        for (auto code : q.codes)
                            if (code < q.spec.code_min() || code > q.spec.code_max())
                                throw Error(ErrorKind::format, "checkpoint: layer '" + n + "' has a code out of range");
                        lin->load_rtn(std::move(q));
                        break;
                    }
                    case model::LinearMode::sign: {
                        quant::SignBinarized s;
                        s.layout = quant::GroupLayout(rows, cols, info.at("group_size").get<std::size_t>());
                        s.bits = table.plane(n + ".bits", rows, cols);
                        s.scales = table.doubles(n + ".scales", s.layout.group_count());
                        lin->load_sign(std::move(s));
                        break;
                    }
                    case model::LinearMode::fdb: {
                        quant::DualBinaryWeight dw;
                        dw.layout = quant::GroupLayout(rows, cols, info.at("group_size").get<std::size_t>());
                        dw.plane1 = table.plane(n + ".plane1", rows, cols);
                        dw.plane2 = table.plane(n + ".plane2", rows, cols);
                        const auto a1 = table.doubles(n + ".alpha1", dw.layout.group_count());
                        const auto a2 = table.doubles(n + ".alpha2", dw.layout.group_count());
                        for (std::size_t i = 0; i < a1.size(); ++i) dw.scales.push_back({a1[i], a2[i]});
                        lin->load_fdb(std::move(dw));
                        break;
                    }
                }
            }
        }
        m.norm_final = table.vector("norm_final", d);
        m.head = table.matrix("head", m.head.rows(), d);
        table.expect_consumed();
        m.sync_quant_modes();
        c.model = std::move(m);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("checkpoint: malformed header: ") + e.what());
    }
    return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorKind::io, "error while reading '" + path.string() + "'");
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "error while writing '" + path.string() + "'");
}

void save(const std::filesystem::path& path, const Checkpoint& c) { write_file_bytes(path, serialize(c)); }

Checkpoint load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace fdbq::ckpt
