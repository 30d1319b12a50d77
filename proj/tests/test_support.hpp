#pragma once

#include <filesystem>
#include <string>

inline std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(DSSE_DATA_DIR) / name; }
