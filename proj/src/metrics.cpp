#include "kvl/metrics.hpp"

#include <fstream>

#include "kvl/csv.hpp"
#include "kvl/errors.hpp"

namespace kvl {

void MetricsLog::put(const std::string& key, double value, const std::string& unit) {
    put(key, fmt_double(value), unit);
}

void MetricsLog::put(const std::string& key, const std::string& value, const std::string& unit) {
    rows_.push_back(MetricsRow{experiment_id_, next_ts_++, key, value, unit});
}

void MetricsLog::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ArgError("cannot open '" + path + "' for writing");
    write_csv_row(os, {"experiment_id", "timestamp", "key", "value", "unit"});
    for (const MetricsRow& r : rows_) {
        write_csv_row(os, {r.experiment_id, std::to_string(r.timestamp), r.key, r.value, r.unit});
    }
}

}  // namespace kvl
