#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kvl {

// Generic append-only measurement record. The timestamp is a logical
// per-writer sequence number, not wall time, so emitted files stay
// bit-identical across reruns of the same (config, seed).
struct MetricsRow {
    std::string experiment_id;
    std::uint64_t timestamp = 0;
    std::string key;
    std::string value;
    std::string unit;
};

class MetricsLog {
  public:
    explicit MetricsLog(std::string experiment_id) : experiment_id_(std::move(experiment_id)) {}

    void put(const std::string& key, double value, const std::string& unit);
    void put(const std::string& key, const std::string& value, const std::string& unit);

    const std::vector<MetricsRow>& rows() const { return rows_; }
    void save(const std::string& path) const;

  private:
    std::string experiment_id_;
    std::uint64_t next_ts_ = 0;
    std::vector<MetricsRow> rows_;
};

}  // namespace kvl
