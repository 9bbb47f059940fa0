// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

namespace entprop {

/// Reads a whole file; a missing file is ErrorCode::NotFound.
std::string read_file(const std::filesystem::path& path);

/// Writes `contents` to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace entprop
