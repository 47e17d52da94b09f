#include "dsup/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");
static_assert(sizeof(float) == 4);

namespace dsup {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("unexpected end of file while reading u32");
    return v;
}

void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

void write_tensor_payload(std::ostream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
}

static void read_tensor_payload(std::istream& is, Tensor& t) {
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
    if (!is) throw std::runtime_error("unexpected end of file while reading tensor payload");
}

static void write_record_header(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
}

// Returns false if the stream hit EOF before any header byte.
static bool read_record_header(std::istream& is, std::string& name, std::vector<int>& shape) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 4);
    if (is.eof() && is.gcount() == 0) return false;
    if (!is) throw std::runtime_error("truncated record header");
    if (name_len > (1u << 20)) throw std::runtime_error("implausible record name length");
    name.resize(name_len);
    if (name_len) {
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("truncated record name");
    }
    std::uint8_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is) throw std::runtime_error("truncated record rank");
    shape.clear();
    for (int i = 0; i < rank; ++i) {
        const std::uint32_t e = read_u32(is);
        if (e == 0 || e > (1u << 28)) throw std::runtime_error("invalid record extent");
        shape.push_back(static_cast<int>(e));
    }
    return true;
}

void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t) {
    write_record_header(os, name, t);
    write_tensor_payload(os, t);
}

bool read_tensor_record(std::istream& is, std::string& name, Tensor& t) {
    std::vector<int> shape;
    if (!read_record_header(is, name, shape)) return false;
    t = Tensor(std::move(shape));
    read_tensor_payload(is, t);
    return true;
}

void save_checkpoint(const std::string& path, const std::vector<ParamRecord>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    write_u32(os, kFormatVersion);
    for (const auto& p : params) {
        if (!p.value.same_shape(p.velocity))
            throw std::runtime_error("checkpoint record " + p.name + " has mismatched value/velocity shapes");
        write_record_header(os, p.name, p.value);
        write_tensor_payload(os, p.value);
        write_tensor_payload(os, p.velocity);
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

std::vector<ParamRecord> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    std::vector<ParamRecord> out;
    std::string name;
    std::vector<int> shape;
    while (read_record_header(is, name, shape)) {
        ParamRecord rec;
        rec.name = name;
        rec.value = Tensor(shape);
        rec.velocity = Tensor(shape);
        read_tensor_payload(is, rec.value);
        read_tensor_payload(is, rec.velocity);
        out.push_back(std::move(rec));
    }
    return out;
}

const Tensor& Sample::at(const std::string& key) const {
    auto it = records.find(key);
    if (it == records.end()) throw std::out_of_range("sample has no record named '" + key + "'");
    return it->second;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open dataset for writing: " + path);
    os.write(kDatasetMagic, 8);
    write_u32(os, kFormatVersion);
    write_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
    for (const auto& s : ds.samples) {
        write_u32(os, static_cast<std::uint32_t>(s.records.size()));
        for (const auto& [name, tensor] : s.records) write_tensor_record(os, name, tensor);
    }
    if (!os) throw std::runtime_error("write failure on dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kDatasetMagic, 8) != 0)
        throw std::runtime_error("not a dataset file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported dataset version " + std::to_string(version));
    const std::uint32_t count = read_u32(is);
    Dataset ds;
    ds.samples.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nrec = read_u32(is);
        for (std::uint32_t r = 0; r < nrec; ++r) {
            std::string name;
            Tensor t;
            if (!read_tensor_record(is, name, t))
                throw std::runtime_error("dataset truncated inside sample " + std::to_string(i));
            ds.samples[i].records.emplace(std::move(name), std::move(t));
        }
    }
    return ds;
}

std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    is.seekg(0, std::ios::end);
    const std::streamoff n = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<std::size_t>(n));
    if (n) is.read(bytes.data(), n);
    if (!is) throw std::runtime_error("read failure: " + path);
    return bytes;
}

} // namespace dsup
