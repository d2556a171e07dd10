#pragma once

#include "asyncdiff/denoiser.hpp"

#include <string>
#include <vector>

namespace asyncdiff {

enum class PartitionStrategy { SequentialBalanced, FirstLastGrouped };

PartitionStrategy partition_strategy_from_string(const std::string& s);
std::string to_string(PartitionStrategy s);

// Division of the stage list into N segments, each owned by one device.
// Sequential-balanced segments are contiguous stage ranges in cascade order;
// first-last-grouped additionally merges stage 1 and stage L into segment 1
// (a placement/costing strategy only - see partition_balanced).
struct Partition {
    std::vector<std::vector<int>> segments;  // 1-based stage ids, ascending
    std::vector<int> device_of_segment;      // 0-based device ids
    std::vector<long long> segment_macs;
    PartitionStrategy strategy = PartitionStrategy::SequentialBalanced;

    int num_segments() const { return static_cast<int>(segments.size()); }
    int num_stages() const;
    int segment_of_stage(int stage) const;  // 1-based segment index
    // every segment is one contiguous run and segments appear in stage order
    bool contiguous() const;
    long long max_segment_macs() const;
    long long total_macs() const;

    void validate(const LayeredDenoiser& m) const;
};

// Exact min-max contiguous split by segment cost. For first-last-grouped,
// stage 1 and stage L form one unit and the remaining stages are split into
// N-1 contiguous segments.
Partition partition_balanced(const LayeredDenoiser& m, int N,
                             PartitionStrategy strategy);

// skip links whose producer and consumer live in different segments
std::vector<std::pair<int, int>> crossing_links(const LayeredDenoiser& m,
                                                const Partition& p);

}  // namespace asyncdiff
