#include "asyncdiff/partition.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace asyncdiff {

PartitionStrategy partition_strategy_from_string(const std::string& s) {
    if (s == "sequential-balanced") return PartitionStrategy::SequentialBalanced;
    if (s == "first-last-grouped") return PartitionStrategy::FirstLastGrouped;
    throw std::invalid_argument("unknown partition strategy: " + s);
}

std::string to_string(PartitionStrategy s) {
    return s == PartitionStrategy::SequentialBalanced ? "sequential-balanced"
                                                      : "first-last-grouped";
}

int Partition::num_stages() const {
    int n = 0;
    for (const auto& seg : segments) n += static_cast<int>(seg.size());
    return n;
}

int Partition::segment_of_stage(int stage) const {
    for (size_t i = 0; i < segments.size(); ++i)
        for (int s : segments[i])
            if (s == stage) return static_cast<int>(i) + 1;
    throw std::out_of_range("segment_of_stage: stage " + std::to_string(stage) +
                            " not in partition");
}

bool Partition::contiguous() const {
    int expected = 1;
    for (const auto& seg : segments) {
        for (int s : seg) {
            if (s != expected) return false;
            ++expected;
        }
    }
    return true;
}

long long Partition::max_segment_macs() const {
    long long mx = 0;
    for (long long c : segment_macs) mx = std::max(mx, c);
    return mx;
}

long long Partition::total_macs() const {
    return std::accumulate(segment_macs.begin(), segment_macs.end(), 0LL);
}

void Partition::validate(const LayeredDenoiser& m) const {
    int L = m.num_stages();
    if (segments.empty()) throw std::invalid_argument("Partition: no segments");
    std::vector<bool> seen(static_cast<size_t>(L) + 1, false);
    for (const auto& seg : segments) {
        if (seg.empty()) throw std::invalid_argument("Partition: empty segment");
        for (size_t i = 0; i < seg.size(); ++i) {
            int s = seg[i];
            if (s < 1 || s > L)
                throw std::invalid_argument("Partition: stage " + std::to_string(s) +
                                            " out of range");
            if (seen[static_cast<size_t>(s)])
                throw std::invalid_argument("Partition: stage " + std::to_string(s) +
                                            " assigned twice");
            seen[static_cast<size_t>(s)] = true;
            if (i > 0 && seg[i] <= seg[i - 1])
                throw std::invalid_argument("Partition: segment stages not ascending");
        }
    }
    for (int s = 1; s <= L; ++s)
        if (!seen[static_cast<size_t>(s)])
            throw std::invalid_argument("Partition: stage " + std::to_string(s) +
                                        " unassigned");
    if (device_of_segment.size() != segments.size() ||
        segment_macs.size() != segments.size())
        throw std::invalid_argument("Partition: per-segment arrays size mismatch");
    if (strategy == PartitionStrategy::FirstLastGrouped) {
        int seg_first = segment_of_stage(1);
        int seg_last = segment_of_stage(L);
        if (seg_first != seg_last)
            throw std::invalid_argument(
                "Partition: first-last-grouped requires stages 1 and L in one segment");
    }
}

namespace {

// exact min-max contiguous split of costs into parts, returns cut positions:
// part j covers items [cuts[j], cuts[j+1])
std::vector<int> min_max_split(const std::vector<long long>& costs, int parts) {
    int n = static_cast<int>(costs.size());
    std::vector<long long> prefix(static_cast<size_t>(n) + 1, 0);
    for (int i = 0; i < n; ++i) prefix[static_cast<size_t>(i) + 1] = prefix[static_cast<size_t>(i)] + costs[static_cast<size_t>(i)];
    auto range_sum = [&](int a, int b) { return prefix[static_cast<size_t>(b)] - prefix[static_cast<size_t>(a)]; };

    constexpr long long kInf = std::numeric_limits<long long>::max() / 4;
    // best[p][i]: min over splits of items [0,i) into p parts of the max part cost
    std::vector<std::vector<long long>> best(
        static_cast<size_t>(parts) + 1,
        std::vector<long long>(static_cast<size_t>(n) + 1, kInf));
    std::vector<std::vector<int>> choice(
        static_cast<size_t>(parts) + 1, std::vector<int>(static_cast<size_t>(n) + 1, -1));
    best[0][0] = 0;
    for (int p = 1; p <= parts; ++p) {
        for (int i = p; i <= n - (parts - p); ++i) {
            for (int j = p - 1; j < i; ++j) {
                long long v = std::max(best[static_cast<size_t>(p - 1)][static_cast<size_t>(j)], range_sum(j, i));
                if (v < best[static_cast<size_t>(p)][static_cast<size_t>(i)]) {
                    best[static_cast<size_t>(p)][static_cast<size_t>(i)] = v;
                    choice[static_cast<size_t>(p)][static_cast<size_t>(i)] = j;
                }
            }
        }
    }
    std::vector<int> cuts(static_cast<size_t>(parts) + 1, 0);
    cuts[static_cast<size_t>(parts)] = n;
    for (int p = parts; p >= 1; --p)
        cuts[static_cast<size_t>(p - 1)] = choice[static_cast<size_t>(p)][static_cast<size_t>(cuts[static_cast<size_t>(p)])];
    return cuts;
}

long long stage_cost(const LayeredDenoiser& m, int stage) {
    return m.stages[static_cast<size_t>(stage - 1)].cost_macs;
}

}  // namespace

Partition partition_balanced(const LayeredDenoiser& m, int N,
                             PartitionStrategy strategy) {
    int L = m.num_stages();
    if (strategy == PartitionStrategy::SequentialBalanced) {
        if (N < 1 || N > L)
            throw std::invalid_argument("partition_balanced: N=" + std::to_string(N) +
                                        " infeasible for L=" + std::to_string(L));
        std::vector<long long> costs;
        for (int s = 1; s <= L; ++s) costs.push_back(stage_cost(m, s));
        auto cuts = min_max_split(costs, N);

        Partition p;
        p.strategy = strategy;
        for (int seg = 0; seg < N; ++seg) {
            std::vector<int> stages;
            for (int s = cuts[static_cast<size_t>(seg)] + 1; s <= cuts[static_cast<size_t>(seg) + 1]; ++s)
                stages.push_back(s);
            long long c = 0;
            for (int s : stages) c += stage_cost(m, s);
            p.segments.push_back(std::move(stages));
            p.segment_macs.push_back(c);
            p.device_of_segment.push_back(seg);
        }
        p.validate(m);
        return p;
    }

    // first-last-grouped: stages {1, L} form one unit; remaining stages are
    // split into N-1 contiguous segments
    if (N < 1 || N > L - 1)
        throw std::invalid_argument("partition_balanced: first-last-grouped N=" +
                                    std::to_string(N) + " infeasible for L=" +
                                    std::to_string(L) + " (need N <= L-1)");
    Partition p;
    p.strategy = strategy;
    if (N == 1) {
        std::vector<int> all(static_cast<size_t>(L));
        std::iota(all.begin(), all.end(), 1);
        long long c = 0;
        for (int s : all) c += stage_cost(m, s);
        p.segments.push_back(std::move(all));
        p.segment_macs.push_back(c);
        p.device_of_segment.push_back(0);
        p.validate(m);
        return p;
    }
    p.segments.push_back({1, L});
    p.segment_macs.push_back(stage_cost(m, 1) + stage_cost(m, L));
    p.device_of_segment.push_back(0);

    std::vector<long long> mid_costs;
    for (int s = 2; s <= L - 1; ++s) mid_costs.push_back(stage_cost(m, s));
    auto cuts = min_max_split(mid_costs, N - 1);
    for (int seg = 0; seg < N - 1; ++seg) {
        std::vector<int> stages;
        for (int i = cuts[static_cast<size_t>(seg)]; i < cuts[static_cast<size_t>(seg) + 1]; ++i)
            stages.push_back(i + 2);
        long long c = 0;
        for (int s : stages) c += stage_cost(m, s);
        p.segments.push_back(std::move(stages));
        p.segment_macs.push_back(c);
        p.device_of_segment.push_back(seg + 1);
    }
    p.validate(m);
    return p;
}

std::vector<std::pair<int, int>> crossing_links(const LayeredDenoiser& m,
                                                const Partition& p) {
    std::vector<std::pair<int, int>> out;
    for (const auto& link : m.skip_links)
        if (p.segment_of_stage(link.first) != p.segment_of_stage(link.second))
            out.push_back(link);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace asyncdiff
