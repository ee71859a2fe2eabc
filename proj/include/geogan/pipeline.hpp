#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

/// Subcommand orchestration: layered key=value configuration, run
/// directories shared between subcommands, and JSON run manifests.
namespace geogan::pipeline {

/// Schema violation; field() is the offending key.
class SchemaError : public std::runtime_error {
public:
    SchemaError(const std::string& field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// A required artifact is absent; producer() names the subcommand that
/// writes it.
class MissingArtifact : public std::runtime_error {
public:
    MissingArtifact(const std::string& producer, const std::filesystem::path& path)
        : std::runtime_error("missing " + path.string() + "; run '" + producer + "' first"), producer_(producer) {}
    const std::string& producer() const { return producer_; }

private:
    std::string producer_;
};

/// Every key has a schema default; files and --set overrides replace values.
class Config {
public:
    Config();

    /// "key = value" lines; '#' starts a comment.
    void load_file(const std::filesystem::path& path);
    /// "key=value"
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    const std::string& str(const std::string& key) const;
    int integer(const std::string& key) const;
    double real(const std::string& key) const;
    std::uint64_t seed() const;

    /// Type and range checks for every key; throws SchemaError.
    void validate() const;
    nlohmann::json to_json() const;
    std::uint64_t hash() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

std::vector<std::string> subcommands();
std::string git_describe();

struct RunResult {
    nlohmann::json manifest;
    std::filesystem::path manifest_path;
};

/// Runs one subcommand against the run directory `out`. Throws SchemaError,
/// MissingArtifact or the module's own error.
RunResult run_subcommand(const std::string& name, const Config& cfg, const std::filesystem::path& out);

/// Exit status for the command-line front end: 0 success, 2 schema error,
/// 3 missing upstream artifact, 1 anything else. Messages go to stderr.
int run_and_report(const std::string& name, const Config& cfg, const std::filesystem::path& out);

}  // namespace geogan::pipeline
