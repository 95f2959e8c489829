#ifndef XAD_CHECKPOINT_HPP
#define XAD_CHECKPOINT_HPP

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xad/params.hpp"

namespace xad {

// Binary checkpoint, little-endian throughout:
//   magic "XADCKPT1"
//   u32 parameter count
//   per parameter: u16 name length, UTF-8 name bytes, u8 dtype code
//                  (0 = f32, 1 = f64), u8 rank, u32 extent per dimension,
//                  raw values.
// Parameters are written in name order so files are byte-reproducible.

struct BadMagicError : std::runtime_error {
    explicit BadMagicError(const std::string& m) : std::runtime_error(m) {}
};
struct CorruptCheckpointError : std::runtime_error {
    explicit CorruptCheckpointError(const std::string& m) : std::runtime_error(m) {}
};
struct ChecksumMismatchError : std::runtime_error {
    explicit ChecksumMismatchError(const std::string& m) : std::runtime_error(m) {}
};

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

// Store helpers: save every entry under `prefix`, or load into the store
// (entries must already exist with matching shapes).
void save_store(const std::string& path, const ParamStore& store, const std::string& prefix = "");
void load_into_store(const std::string& path, ParamStore& store);

uint64_t file_checksum(const std::string& path);
bool file_exists(const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace xad

#endif
