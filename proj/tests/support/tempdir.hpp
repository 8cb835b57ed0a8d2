#pragma once

#include <filesystem>
#include <string>

#include "owd/random.hpp"

namespace inst {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::uint64_t counter = 0;
        const auto base = std::filesystem::temp_directory_path();
        for (;;) {
            const auto salt = owd::derive_seed(reinterpret_cast<std::uintptr_t>(this), counter++);
            path_ = base / ("owd_" + tag + "_" + std::to_string(salt % 100000000));
            if (std::filesystem::create_directories(path_))
                break;
        }
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& leaf = {}) const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

private:
    std::filesystem::path path_;
};

} // namespace inst
