#pragma once

#include <map>
#include <set>
#include <string>

namespace uvid {

/// Flat "key = value" configuration. Unknown keys are rejected against the
/// allowed set; later assignments (e.g. command-line flags) override earlier
/// ones. Lines starting with '#' are comments.
class RunConfig {
  public:
    explicit RunConfig(std::set<std::string> allowed_keys)
        : allowed_(std::move(allowed_keys)) {}

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback = "") const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;

    /// Fully resolved key=value listing, one per line, keys sorted.
    std::string resolved() const;

  private:
    std::set<std::string> allowed_;
    std::map<std::string, std::string> values_;
};

}  // namespace uvid
