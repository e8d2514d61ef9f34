#include "cotforge/manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>

#include "cotforge/corpus.hpp"
#include "cotforge/digest.hpp"
#include "cotforge/jsonl.hpp"

namespace cotforge {

void RunManifest::add_input(const std::string& path) { inputs.push_back({path, digest_file(path)}); }

void RunManifest::add_output(const std::string& path) {
    outputs.push_back({path, digest_file(path)});
}

void RunManifest::write(const std::string& path) const {
    auto files = [](const std::vector<FileDigest>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& f : v) arr.push_back({{"path", f.path}, {"digest", f.digest}});
        return arr;
    };
    nlohmann::json j{{"command", command}, {"config", config},       {"inputs", files(inputs)},
                     {"outputs", files(outputs)}, {"parents", parents}, {"seed", seed},
                     {"wall_time_s", wall_time_s}, {"tool_version", kToolVersion}};
    atomic_write(path, j.dump(2) + "\n");
}

OutputLock::OutputLock(const std::string& output_path) : lock_path_(output_path + ".lock") {
    namespace fs = std::filesystem;
    const fs::path p(lock_path_);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw DataError("output is locked by another command: " + output_path +
                        " (remove " + lock_path_ + " if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

OutputLock::~OutputLock() { ::unlink(lock_path_.c_str()); }

}  // namespace cotforge
