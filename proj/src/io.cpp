#include "dan/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <system_error>

#include "dan/error.hpp"

namespace dan {

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  Require(!in.bad(), ErrorKind::kIo, "read failed for '" + path + "'");
  return buffer.str();
}

void WriteFileAtomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path temp = target.string() + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    Require(static_cast<bool>(out), ErrorKind::kIo, "cannot open '" + temp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    Require(static_cast<bool>(out), ErrorKind::kIo, "write failed for '" + temp.string() + "'");
  }
  std::error_code ec;
  fs::rename(temp, target, ec);
  if (ec) {
    fs::remove(temp, ec);
    Fail(ErrorKind::kIo, "cannot rename into '" + path + "'");
  }
}

}  // namespace dan
