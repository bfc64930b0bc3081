#include "moef/metrics.hpp"

#include "moef/errors.hpp"

namespace moef {

Json metric_record(std::uint64_t step, const StepStats& stats) {
    Json rec;
    rec["step"] = step;
    rec["task_loss"] = stats.loss.task_loss;
    Json balance = Json::object();
    for (const auto& [name, v] : stats.loss.balance) balance[name] = v;
    rec["balance"] = std::move(balance);
    Json zloss = Json::object();
    for (const auto& [name, v] : stats.loss.zloss) zloss[name] = v;
    rec["zloss"] = std::move(zloss);
    rec["balance_weight"] = stats.loss.balance_weight;
    rec["zloss_weight"] = stats.loss.zloss_weight;
    rec["total"] = stats.loss.total;
    Json util = Json::object();
    for (const auto& [name, f] : stats.utilization) util[name] = f;
    rec["utilization"] = std::move(util);
    return rec;
}

Json timing_record(std::uint64_t step, double wall_ms) {
    Json rec;
    rec["step"] = step;
    rec["wall_ms"] = wall_ms;
    return rec;
}

JsonlWriter::JsonlWriter(const std::string& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc), path_(path) {
    if (!out_) throw io_error("cannot open metrics stream '" + path + "' for writing");
}

void JsonlWriter::write(const Json& record) {
    out_ << record.dump() << "\n";
    out_.flush();
    if (!out_) throw io_error("failed writing metrics stream '" + path_ + "'");
}

std::vector<Json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open metrics stream '" + path + "'");
    std::vector<Json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(Json::parse(line));
    }
    return records;
}

}  // namespace moef
