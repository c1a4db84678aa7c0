#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace metagrad {

struct ResultRow {
    std::string experiment_id;
    long index = 0;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
    long aborted = 0;
};

// renders with 17 significant digits so reruns are byte-comparable
std::string format_value(double v);

// Append-only CSV/JSONL emitter. Both files open with a self-describing
// header carrying the schema version and the resolved-config hash.
class ResultWriter {
  public:
    static constexpr int kSchemaVersion = 1;

    ResultWriter(const std::string& directory, const std::string& file_stem, bool emit_csv,
                 bool emit_jsonl, const std::string& config_hash, std::uint64_t seed);

    void write(const ResultRow& row);
    void flush();

    std::string csv_path() const { return csv_path_; }
    std::string jsonl_path() const { return jsonl_path_; }

  private:
    std::ofstream csv_;
    std::ofstream jsonl_;
    std::string csv_path_;
    std::string jsonl_path_;
};

}  // namespace metagrad
