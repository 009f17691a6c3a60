#pragma once

#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipoe/domain.hpp"
#include "ipoe/errors.hpp"
#include "ipoe/evaluator.hpp"
#include "ipoe/jsonl.hpp"
#include "ipoe/optimizer.hpp"

namespace ipoe {

enum class RunStatus { running, completed, aborted };

inline std::string to_string(RunStatus s) {
    switch (s) {
        case RunStatus::running: return "running";
        case RunStatus::completed: return "completed";
        case RunStatus::aborted: return "aborted";
    }
    return "unknown";
}

inline RunStatus run_status_from(std::string_view s) {
    if (s == "running") return RunStatus::running;
    if (s == "completed") return RunStatus::completed;
    if (s == "aborted") return RunStatus::aborted;
    throw StoreError("unknown run status: " + std::string(s));
}

struct RunManifest {
    std::string run_id;
    std::string created_at;
    std::string config_digest;
    std::map<std::string, std::string> dataset_digests;
    std::vector<std::string> backend_descriptors;
    std::uint64_t root_seed = 0;
    RunStatus status = RunStatus::running;
    double initial_score = 0.0;
    std::vector<std::string> subsample_ids;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    return nlohmann::json{{"run_id", m.run_id},
                          {"created_at", m.created_at},
                          {"config_digest", m.config_digest},
                          {"dataset_digests", m.dataset_digests},
                          {"backend_descriptors", m.backend_descriptors},
                          {"root_seed", m.root_seed},
                          {"status", to_string(m.status)},
                          {"initial_score", m.initial_score},
                          {"subsample_ids", m.subsample_ids}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.dataset_digests = j.at("dataset_digests").get<std::map<std::string, std::string>>();
    m.backend_descriptors = j.at("backend_descriptors").get<std::vector<std::string>>();
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    m.status = run_status_from(j.at("status").get<std::string>());
    m.initial_score = j.at("initial_score").get<double>();
    m.subsample_ids = j.at("subsample_ids").get<std::vector<std::string>>();
    return m;
}

// Snapshot of the guideline set at an accepted iteration.
struct Checkpoint {
    int iteration = 0;
    std::vector<Guideline> guidelines;
    double train_score = 0.0;
    std::optional<double> validation_score;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json guidelines = nlohmann::json::array();
    for (const auto& g : c.guidelines) guidelines.push_back(guideline_to_json(g));
    nlohmann::json j{{"iteration", c.iteration},
                     {"guidelines", guidelines},
                     {"train_score", c.train_score}};
    if (c.validation_score) j["validation_score"] = *c.validation_score;
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint c;
    c.iteration = j.at("iteration").get<int>();
    for (const auto& gj : j.at("guidelines")) c.guidelines.push_back(guideline_from_json(gj));
    c.train_score = j.at("train_score").get<double>();
    if (j.contains("validation_score")) c.validation_score = j["validation_score"].get<double>();
    return c;
}

inline std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Run-directory persistence. Layout:
//   manifest.json, config.json, pool.jsonl, trace.jsonl,
//   checkpoints/iter-<n>.json, cache/
// One writer per directory (lock file); any number of readers.
class RunStore {
public:
    static RunStore create(const std::filesystem::path& dir, RunManifest manifest,
                           const std::string& config_bytes) {
        std::error_code ec;
        std::filesystem::create_directories(dir / "checkpoints", ec);
        if (ec) throw StoreError("cannot create run directory " + dir.string());
        std::filesystem::create_directories(dir / "cache", ec);

        RunStore store(dir, /*writer=*/true);
        manifest.config_digest = digest128(config_bytes);
        atomic_write(dir / "config.json", config_bytes);
        store.manifest_ = std::move(manifest);
        store.write_manifest();
        return store;
    }

    static RunStore open(const std::filesystem::path& dir, bool writer = false) {
        if (!std::filesystem::exists(dir / "manifest.json")) {
            throw StoreError("not a run directory (no manifest.json): " + dir.string());
        }
        RunStore store(dir, writer);
        store.manifest_ = manifest_from_json(store.read_json(dir / "manifest.json"));
        const std::string config = store.config_bytes();
        if (digest128(config) != store.manifest_.config_digest) {
            throw StoreError("config.json does not match the manifest digest in " + dir.string());
        }
        return store;
    }

    const std::filesystem::path& dir() const { return dir_; }
    const RunManifest& manifest() const { return manifest_; }
    std::filesystem::path cache_dir() const { return dir_ / "cache"; }

    std::string config_bytes() const {
        std::ifstream in(dir_ / "config.json", std::ios::binary);
        if (!in) throw StoreError("cannot read config.json in " + dir_.string());
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    }

    void set_status(RunStatus status) {
        manifest_.status = status;
        write_manifest();
    }

    void set_initial_state(double initial_score, std::vector<std::string> subsample_ids) {
        manifest_.initial_score = initial_score;
        manifest_.subsample_ids = std::move(subsample_ids);
        write_manifest();
    }

    // --- pool ---

    void save_pool(const GuidelinePool& pool) { write_pool(dir_ / "pool.jsonl", pool); }
    GuidelinePool load_pool() const { return read_pool(dir_ / "pool.jsonl"); }

    // --- trace ---

    void append_trace(const StepOutcome& outcome) {
        std::ofstream out(dir_ / "trace.jsonl", std::ios::app);
        if (!out) throw StoreError("cannot append to trace in " + dir_.string());
        out << step_to_json(outcome).dump() << '\n';
        out.flush();
        if (!out) throw StoreError("short write on trace in " + dir_.string());
    }

    std::vector<StepOutcome> read_trace() const {
        std::vector<StepOutcome> out;
        const auto path = dir_ / "trace.jsonl";
        if (!std::filesystem::exists(path)) return out;
        std::ifstream in(path);
        if (!in) throw StoreError("cannot read trace in " + dir_.string());
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                throw StoreError("corrupt trace line " + std::to_string(line_no) + " in " +
                                 path.string());
            }
            try {
                out.push_back(step_from_json(j));
            } catch (const nlohmann::json::exception&) {
                throw StoreError("corrupt trace line " + std::to_string(line_no) + " in " +
                                 path.string());
            }
        }
        return out;
    }

    // --- checkpoints ---

    void save_checkpoint(const Checkpoint& checkpoint) {
        const auto path = checkpoint_path(checkpoint.iteration);
        const std::string content = checkpoint_to_json(checkpoint).dump(2);
        if (std::filesystem::exists(path)) {
            // A crash between checkpoint write and trace append makes the
            // resumed run re-save the same checkpoint; only a conflicting
            // one is an error.
            std::ifstream in(path, std::ios::binary);
            std::string existing((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
            if (existing == content) return;
            throw StoreError("conflicting checkpoint for iteration " +
                             std::to_string(checkpoint.iteration) + " already exists");
        }
        atomic_write(path, content);
    }

    // Overwrite path used when select_best fills in validation scores.
    void update_checkpoint(const Checkpoint& checkpoint) {
        atomic_write(checkpoint_path(checkpoint.iteration), checkpoint_to_json(checkpoint).dump(2));
    }

    std::vector<int> list_checkpoints() const {
        std::vector<int> iterations;
        const auto dir = dir_ / "checkpoints";
        if (!std::filesystem::exists(dir)) return iterations;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("iter-", 0) != 0 || entry.path().extension() != ".json") continue;
            iterations.push_back(std::stoi(name.substr(5)));
        }
        std::sort(iterations.begin(), iterations.end());
        return iterations;
    }

    Checkpoint load_checkpoint(int iteration) const {
        return checkpoint_from_json(read_json(checkpoint_path(iteration)));
    }

private:
    RunStore(std::filesystem::path dir, bool writer) : dir_(std::move(dir)) {
        if (writer) acquire_lock();
    }

    std::filesystem::path checkpoint_path(int iteration) const {
        return dir_ / "checkpoints" / ("iter-" + std::to_string(iteration) + ".json");
    }

    static void atomic_write(const std::filesystem::path& path, const std::string& content) {
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw StoreError("cannot write " + path.string());
            out << content;
            if (!out) throw StoreError("short write on " + path.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw StoreError("cannot finalize " + path.string());
    }

    nlohmann::json read_json(const std::filesystem::path& path) const {
        std::ifstream in(path);
        if (!in) throw StoreError("cannot read " + path.string());
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw StoreError("invalid JSON in " + path.string());
        return j;
    }

    void write_manifest() {
        manifest_.created_at =
            manifest_.created_at.empty() ? now_iso8601() : manifest_.created_at;
        atomic_write(dir_ / "manifest.json", manifest_to_json(manifest_).dump(2));
    }

    void acquire_lock() {
        const auto lock = dir_ / ".lock";
        if (std::filesystem::exists(lock)) {
            // A lock whose writer died (crash, kill) may be stolen.
            std::ifstream in(lock);
            long pid = 0;
            std::string word;
            if (in >> word >> pid && pid > 0 &&
                std::filesystem::exists("/proc/" + std::to_string(pid))) {
                throw StoreError("run directory is locked by another writer (pid " +
                                 std::to_string(pid) + "): " + dir_.string());
            }
        }
        std::ofstream out(lock, std::ios::trunc);
        out << "pid " << ::getpid() << '\n';
        lock_path_ = lock;
    }

public:
    ~RunStore() {
        if (!lock_path_.empty()) {
            std::error_code ec;
            std::filesystem::remove(lock_path_, ec);
        }
    }

    RunStore(RunStore&& other) noexcept
        : dir_(std::move(other.dir_)), manifest_(std::move(other.manifest_)),
          lock_path_(std::move(other.lock_path_)) {
        other.lock_path_.clear();
    }

    RunStore& operator=(RunStore&&) = delete;
    RunStore(const RunStore&) = delete;
    RunStore& operator=(const RunStore&) = delete;

private:
    std::filesystem::path dir_;
    RunManifest manifest_;
    std::filesystem::path lock_path_;
};

// Reconstructed search position of an interrupted run.
struct ResumePoint {
    RunManifest manifest;
    GuidelineSet set;
    double score = 0.0;
    int next_iteration = 1;
    std::map<std::string, std::uint64_t> rng_counters;
    bool already_completed = false;
};

// Rebuilds (G, S, iteration counter, RNG positions) from the trace and the
// latest accepted checkpoint. Continuing from here under the recorded
// scripted backend yields the identical remaining trace.
inline ResumePoint resume(const std::filesystem::path& dir) {
    RunStore store = RunStore::open(dir);
    ResumePoint point;
    point.manifest = store.manifest();
    if (point.manifest.status == RunStatus::completed) {
        point.already_completed = true;
        return point;
    }

    const auto trace = store.read_trace();
    point.score = point.manifest.initial_score;
    if (!trace.empty()) {
        const StepOutcome& last = trace.back();
        point.next_iteration = last.iteration + 1;
        point.score = last.score_after;
        point.rng_counters = last.rng_after;

        int last_accepted = 0;
        for (const auto& s : trace) {
            if (s.accepted) last_accepted = s.iteration;
        }
        if (last_accepted > 0) {
            const Checkpoint checkpoint = store.load_checkpoint(last_accepted);
            point.set = GuidelineSet(checkpoint.guidelines);
        }
        if (point.set.ids() != last.post_ids) {
            throw StoreError("trace and checkpoints disagree on the current guideline set in " +
                             dir.string());
        }
    }
    return point;
}

// Evaluates every checkpointed prompt on the validation set and returns the
// best by validation F1-macro; ties go to the earliest iteration. Validation
// scores are written back to the checkpoint files.
inline Checkpoint select_best(RunStore& store, const Evaluator& evaluator,
                              const PromptPrefix& prefix,
                              const std::vector<Instance>& validation, const LabelSet& labels) {
    const auto iterations = store.list_checkpoints();
    if (iterations.empty()) throw StoreError("run has no checkpoints: " + store.dir().string());

    std::optional<Checkpoint> best;
    for (int iteration : iterations) {
        Checkpoint checkpoint = store.load_checkpoint(iteration);
        const auto prompt = render_prompt(prefix, GuidelineSet(checkpoint.guidelines));
        checkpoint.validation_score = evaluator.evaluate(prompt, validation, labels).f1_macro;
        store.update_checkpoint(checkpoint);
        if (!best || *checkpoint.validation_score > *best->validation_score) {
            best = std::move(checkpoint);
        }
    }
    return *best;
}

}  // namespace ipoe
