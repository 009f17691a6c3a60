#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ipoe/domain.hpp"

namespace ipoe::test {

// Self-cleaning temporary directory for store and cache tests.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "ipoe-test") {
        const auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(counter_++));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("cannot create temp directory");
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline ipoe::Instance make_instance(std::string id, std::string text, std::string label) {
    ipoe::Instance inst;
    inst.id = std::move(id);
    inst.text = std::move(text);
    inst.gold_label = std::move(label);
    return inst;
}

inline ipoe::Guideline make_test_guideline(const std::string& text, const std::string& label) {
    ipoe::Provenance prov;
    prov.explanation_source = ipoe::ExplanationSource::human;
    prov.instance_id = "test";
    prov.backend_descriptor = "test";
    return ipoe::make_guideline(text, label, prov);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

}  // namespace ipoe::test
