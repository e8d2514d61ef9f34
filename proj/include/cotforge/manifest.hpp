#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace cotforge {

inline constexpr const char* kToolVersion = "cotforge 0.1.0";

struct FileDigest {
    std::string path;
    std::string digest;
};

// One manifest per command invocation, written next to the primary output.
// Replaying the recorded command with the recorded seeds reproduces every
// listed output digest.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::vector<std::string> parents;  // digests of upstream checkpoints/manifests
    std::uint64_t seed = 0;
    double wall_time_s = 0;

    void add_input(const std::string& path);
    void add_output(const std::string& path);
    void write(const std::string& path) const;
};

// Exclusive lock file guarding an output path. Throws if another command
// holds the same output.
class OutputLock {
public:
    explicit OutputLock(const std::string& output_path);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::string lock_path_;
};

}  // namespace cotforge
