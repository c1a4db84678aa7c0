#include "metagrad/output.hpp"

#include <cstdio>
#include <filesystem>

#include "metagrad/common.hpp"

namespace metagrad {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ResultWriter::ResultWriter(const std::string& directory, const std::string& file_stem, bool emit_csv,
                           bool emit_jsonl, const std::string& config_hash, std::uint64_t seed) {
    std::filesystem::create_directories(directory);
    if (emit_csv) {
        csv_path_ = directory + "/" + file_stem + ".csv";
        csv_.open(csv_path_, std::ios::out | std::ios::trunc);
        if (!csv_) throw ConfigError("cannot open output file '" + csv_path_ + "'");
        csv_ << "# schema=" << kSchemaVersion << " config=" << config_hash << " seed=" << seed
             << "\n";
        csv_ << "experiment_id,index,metric,value,seed,aborted\n";
    }
    if (emit_jsonl) {
        jsonl_path_ = directory + "/" + file_stem + ".jsonl";
        jsonl_.open(jsonl_path_, std::ios::out | std::ios::trunc);
        if (!jsonl_) throw ConfigError("cannot open output file '" + jsonl_path_ + "'");
        jsonl_ << "{\"schema\":" << kSchemaVersion << ",\"config\":\"" << config_hash
               << "\",\"seed\":" << seed << "}\n";
    }
}

void ResultWriter::write(const ResultRow& row) {
    if (csv_.is_open()) {
        csv_ << row.experiment_id << ',' << row.index << ',' << row.metric << ','
             << format_value(row.value) << ',' << row.seed << ',' << row.aborted << '\n';
    }
    if (jsonl_.is_open()) {
        jsonl_ << "{\"experiment_id\":\"" << row.experiment_id << "\",\"index\":" << row.index
               << ",\"metric\":\"" << row.metric << "\",\"value\":" << format_value(row.value)
               << ",\"seed\":" << row.seed << ",\"aborted\":" << row.aborted << "}\n";
    }
}

void ResultWriter::flush() {
    if (csv_.is_open()) csv_.flush();
    if (jsonl_.is_open()) jsonl_.flush();
}

}  // namespace metagrad
