#pragma once

#include <ostream>
#include <vector>

#include "json.hpp"

namespace prunekit {

struct TraceRow {
    int iteration = 0;
    int layer = 0;
    int channel = 0;
    double saliency = 0.0;
    int remaining_maps = 0;
    double flops = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

// Append-only log of pruning iterations. remaining_maps decreases by exactly
// one per row and flops strictly decreases.
struct PruneTrace {
    int initial_maps = 0;
    double initial_flops = 0.0;
    double base_train_loss = 0.0;
    double base_train_accuracy = 0.0;
    double base_test_accuracy = 0.0;
    std::vector<TraceRow> rows;

    void append(TraceRow row); // enforces the monotonicity invariants
    void write_csv(std::ostream& os) const;
    nlohmann::json to_json() const;
};

// RFC 4180 helpers shared by the CSV emitters (CRLF line endings, round-trip
// double formatting).
std::string csv_double(double v);
void csv_row(std::ostream& os, const std::vector<std::string>& fields);

} // namespace prunekit
