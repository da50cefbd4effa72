#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fdepth/network.hpp"

namespace fdepth {

/// Binary layout: "FDPT1", then per parameter in construction order:
/// u64 name length, UTF-8 name, 4 x i64 extents, f64 values. All integers
/// and floats are little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params);

/// Copies stored values into `params`. Every parameter must be present with
/// a matching shape and the file must hold nothing else.
void load_checkpoint(const std::filesystem::path& path, ParameterStore& params);

std::vector<NamedParameter> read_checkpoint(const std::filesystem::path& path);

}  // namespace fdepth
