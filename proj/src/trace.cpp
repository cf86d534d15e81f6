#include "prunekit/trace.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "prunekit/errors.hpp"

namespace prunekit {

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void csv_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << fields[i];
    }
    os << "\r\n";
}

void PruneTrace::append(TraceRow row) {
    if (!rows.empty()) {
        const TraceRow& prev = rows.back();
        if (row.remaining_maps != prev.remaining_maps - 1)
            throw UsageError("trace: remaining maps must decrease by exactly one per row");
        if (!(row.flops < prev.flops))
            throw UsageError("trace: flops must strictly decrease");
    } else {
        if (row.remaining_maps != initial_maps - 1)
            throw UsageError("trace: first row must remove one map from the initial count");
        if (!(row.flops < initial_flops))
            throw UsageError("trace: flops must strictly decrease");
    }
    if (row.train_accuracy < 0.0 || row.train_accuracy > 1.0 || row.test_accuracy < 0.0 ||
        row.test_accuracy > 1.0)
        throw UsageError("trace: accuracy out of [0,1]");
    rows.push_back(row);
}

void PruneTrace::write_csv(std::ostream& os) const {
    csv_row(os, {"iteration", "layer", "channel", "saliency", "remaining_maps",
                 "maps_pruned_fraction", "flops", "gflops", "train_loss", "train_accuracy",
                 "test_accuracy"});
    for (const TraceRow& r : rows) {
        const double pruned_frac =
            initial_maps > 0
                ? static_cast<double>(initial_maps - r.remaining_maps) / initial_maps
                : 0.0;
        csv_row(os, {std::to_string(r.iteration), std::to_string(r.layer),
                     std::to_string(r.channel), csv_double(r.saliency),
                     std::to_string(r.remaining_maps), csv_double(pruned_frac),
                     csv_double(r.flops), csv_double(r.flops / 1e9), csv_double(r.train_loss),
                     csv_double(r.train_accuracy), csv_double(r.test_accuracy)});
    }
}

nlohmann::json PruneTrace::to_json() const {
    nlohmann::json j;
    j["initial_maps"] = initial_maps;
    j["initial_flops"] = initial_flops;
    j["base_train_loss"] = base_train_loss;
    j["base_train_accuracy"] = base_train_accuracy;
    j["base_test_accuracy"] = base_test_accuracy;
    j["rows"] = nlohmann::json::array();
    for (const TraceRow& r : rows) {
        j["rows"].push_back({{"iteration", r.iteration},
                             {"layer", r.layer},
                             {"channel", r.channel},
                             {"saliency", r.saliency},
                             {"remaining_maps", r.remaining_maps},
                             {"flops", r.flops},
                             {"train_loss", r.train_loss},
                             {"train_accuracy", r.train_accuracy},
                             {"test_accuracy", r.test_accuracy}});
    }
    return j;
}

} // namespace prunekit
