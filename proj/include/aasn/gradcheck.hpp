#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace aasn::gradcheck {

struct Options {
    int instances = 20;  // random instances per op
    std::uint64_t seed = 0;
    double tolerance64 = 1e-6;  // 64-bit analytic vs 64-bit central differences
    double tolerance32 = 1e-3;  // 32-bit analytic vs 64-bit central differences
};

struct Row {
    std::string op;
    int instances = 0;
    double max_error64 = 0;  // normwise relative error, worst instance
    double max_error32 = 0;
    // Instances discarded because a finite-difference stencil straddled a
    // kink; more redraws than instances count as a failure.
    int redrawn = 0;
    bool passed = false;
};

// Every differentiable op of the library plus the end-to-end training loss
// of a toy network, in a fixed order.
[[nodiscard]] std::vector<std::string> registered_ops();

[[nodiscard]] std::vector<Row> run(const Options& options);

[[nodiscard]] bool all_passed(const std::vector<Row>& rows);
void write_table(std::ostream& out, const std::vector<Row>& rows);

} // namespace aasn::gradcheck
