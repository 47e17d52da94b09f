#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dsup/tensor.hpp"

namespace dsup {

// Binary layouts shared by checkpoints and dataset files. All integers are
// little-endian; a tensor record is
//   u32 name length, UTF-8 name, u8 rank, u32 extents[rank], f32 payload.
// Checkpoint records carry two payloads back to back (value, velocity).

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'U', 'P', 'C', 'K', 'P', 'T'};
inline constexpr char kDatasetMagic[8] = {'D', 'S', 'U', 'P', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct ParamRecord {
    std::string name;
    Tensor value;
    Tensor velocity;
};

void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f32(std::ostream& os, float v);

void write_tensor_payload(std::ostream& os, const Tensor& t);
void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t);
// Reads one record; returns false on clean EOF (no bytes of a record read).
bool read_tensor_record(std::istream& is, std::string& name, Tensor& t);

void save_checkpoint(const std::string& path, const std::vector<ParamRecord>& params);
std::vector<ParamRecord> load_checkpoint(const std::string& path);

// A sample is a set of named tensors ("image" plus raw labels).
struct Sample {
    std::map<std::string, Tensor> records;

    const Tensor& at(const std::string& key) const;
    bool has(const std::string& key) const { return records.count(key) != 0; }
    float scalar(const std::string& key) const { return at(key)[0]; }
};

struct Dataset {
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::vector<char> read_file_bytes(const std::string& path);

} // namespace dsup
