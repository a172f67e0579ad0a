#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kvl/params.hpp"
#include "kvl/tensor.hpp"

namespace kvl {

// KVLN binary tensor container.
//
// Single tensor:  "KVLN" | u16 version | u8 dtype (0=f64, 1=f32) | u8 ndim |
//                 ndim x u64 dims (LE) | raw LE payload.
// Named archive (checkpoints): same 8-byte prefix with dtype=255, ndim=0,
// then u64 record count and per record
//                 u16 name_len | name | u8 dtype | u8 ndim | dims | payload.

inline constexpr std::uint16_t kKvlnVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t, bool as_f32 = false);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t, bool as_f32 = false);
Tensor load_tensor(const std::string& path);

void save_archive(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& records,
                  bool as_f32 = false);
std::vector<std::pair<std::string, Tensor>> load_archive(const std::string& path);

void save_checkpoint(const std::string& path, const ParamStore& store);
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace kvl
