#pragma once

#include <string>
#include <string_view>

namespace qsf {

// Reads a whole file. Throws IoError.
std::string read_file(const std::string& path);

// Writes to "<path>.tmp" and renames over path, so readers never observe a
// partial file. Creates missing parent directories. Throws IoError.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace qsf
