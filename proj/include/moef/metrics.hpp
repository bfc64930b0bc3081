#pragma once

#include "moef/pipeline.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace moef {

using Json = nlohmann::ordered_json;

// One self-describing record per cadence step. Deterministic body: no
// timestamps or wall-clock fields, so identical runs emit identical bytes.
// Timing goes to a separate stream.
Json metric_record(std::uint64_t step, const StepStats& stats);

Json timing_record(std::uint64_t step, double wall_ms);

// Append-only line-delimited JSON.
class JsonlWriter {
public:
    JsonlWriter(const std::string& path, bool append);
    void write(const Json& record);

private:
    std::ofstream out_;
    std::string path_;
};

std::vector<Json> read_jsonl(const std::string& path);

}  // namespace moef
