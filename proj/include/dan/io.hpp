#pragma once

#include <string>

namespace dan {

std::string ReadFileBytes(const std::string& path);

// Writes to a sibling temp file and renames it over path.
void WriteFileAtomic(const std::string& path, const std::string& bytes);

}  // namespace dan
