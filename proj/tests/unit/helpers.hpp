#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>

#include "litsynth/core/types.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = fs::temp_directory_path() /
                ("litsynth-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline litsynth::PaperId pid(const std::string& s) {
    return litsynth::PaperId(s, litsynth::IdSource::AcademicGraph);
}

inline litsynth::PaperRecord paper(const std::string& id, const std::string& title, const std::string& abstract = "",
                                   const std::string& tldr = "") {
    return litsynth::PaperRecord{pid(id), title, abstract, tldr, std::nullopt, {}, {}, {}, {}};
}

inline litsynth::Keynote keynote(const std::string& id, const std::string& tldr) {
    litsynth::Keynote k{pid(id), {}, litsynth::Provenance::FullText};
    for (auto f : litsynth::kMandatoryKeynoteFields) k.sections[std::string(f)] = std::string(f) + " of " + id;
    k.sections["tldr"] = tldr;
    return k;
}

}  // namespace testutil
