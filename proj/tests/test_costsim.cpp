#include "asyncdiff/costsim.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace asyncdiff;

TEST_CASE("predict_sequential") {
    CostModel uniform{{0.01, 0.01, 0.01}, 0.0, 0.0};
    CHECK(predict_sequential(50, uniform) == doctest::Approx(50 * 3 * 0.01).epsilon(1e-12));

    CostModel mixed{{0.002, 0.003, 0.005}, 0.0, 0.0};
    CHECK(predict_sequential(50, mixed) == doctest::Approx(0.5).epsilon(1e-12));

    CostModel zero{{0.0, 0.0}, 0.0, 0.0};
    CHECK(predict_sequential(50, zero) == 0.0);
}

TEST_CASE("predict_async: zero comm and tiny warm-up approaches speedup N") {
    for (int N : {2, 3, 4}) {
        ExecutionPlan plan = plan_async(1000, 1, N, 1);
        CostModel cm{std::vector<double>(static_cast<size_t>(N), 0.01), 0.0, 0.0};
        LatencyReport rep = predict_async(plan, cm);
        CHECK(rep.speedup == doctest::Approx(static_cast<double>(N)).epsilon(0.01));
    }
}

TEST_CASE("predict_async: worked example (N=4, 10ms segments, 1ms comm)") {
    // warm-up 1 x 40ms; 49 rounds of 10ms + 1ms comm (48 broadcasting + final);
    // sequential 50 x 40ms = 2s
    ExecutionPlan plan = plan_async(50, 1, 4, 1);
    CostModel cm{std::vector<double>(4, 0.010), 0.001, 0.0};
    LatencyReport rep = predict_async(plan, cm);
    CHECK(rep.sequential_total_s == doctest::Approx(2.0).epsilon(1e-12));
    // final round does not broadcast: 0.040 + 49*0.010 + 48*0.001
    CHECK(rep.async_total_s == doctest::Approx(0.040 + 0.49 + 0.048).epsilon(1e-12));
    CHECK(rep.speedup == doctest::Approx(2.0 / 0.578).epsilon(1e-9));
    // the paper-convention figure (one comm per round) is the approx total
    CHECK(rep.approx_total_s == doctest::Approx(0.040 + 49 * 0.011).epsilon(1e-12));
    CHECK(rep.speedup > 3.0);
}

TEST_CASE("predict_async: stride halves the communication component") {
    CostModel cm{std::vector<double>(3, 0.010), 0.002, 0.0};
    ExecutionPlan s1 = plan_async(50, 1, 3, 1);
    ExecutionPlan s2 = plan_async(50, 1, 3, 2);
    LatencyReport r1 = predict_async(s1, cm);
    LatencyReport r2 = predict_async(s2, cm);
    // 49 rounds -> 25 rounds: comm total drops by roughly half
    CHECK(r2.comm_total_s < 0.55 * r1.comm_total_s + 0.002);
    CHECK(r2.async_total_s < r1.async_total_s);
}

TEST_CASE("predict_async: N=1 with zero comm equals predict_sequential") {
    for (int w : {1, 5, 20}) {
        ExecutionPlan plan = plan_async(20, w, 1, 1);
        CostModel cm{{0.013}, 0.0, 0.0};
        LatencyReport rep = predict_async(plan, cm);
        CHECK(rep.async_total_s == doctest::Approx(predict_sequential(20, cm)).epsilon(1e-12));
        CHECK(rep.speedup == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("predict_async: monotonically non-increasing in N for uniform costs") {
    // fixed total model cost split evenly across N segments, comm = 0
    const double total_cost = 0.030;
    double prev = 1e100;
    for (int N = 1; N <= 6; ++N) {
        ExecutionPlan plan = plan_async(60, 2, N, 1);
        CostModel cm{std::vector<double>(static_cast<size_t>(N), total_cost / N), 0.0, 0.0};
        LatencyReport rep = predict_async(plan, cm);
        CHECK(rep.async_total_s <= prev + 1e-12);
        prev = rep.async_total_s;
    }
}

TEST_CASE("predict_async: exact vs approximation differ by at most comm per round") {
    Rng rng(9);
    for (int rep_i = 0; rep_i < 30; ++rep_i) {
        int T = 5 + static_cast<int>(rng.below(60));
        int w = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(T)));
        int S = 1 + static_cast<int>(rng.below(2));
        int N = (S == 2 ? 2 : 1) + static_cast<int>(rng.below(3));
        ExecutionPlan plan = plan_async(T, w, N, S);
        double c = 0.001 + rng.uniform() * 0.02;
        double comm = rng.uniform() * 0.005;
        CostModel cm{std::vector<double>(static_cast<size_t>(N), c), comm, 0.0};
        LatencyReport rep = predict_async(plan, cm);
        double rounds = static_cast<double>(plan.rounds.size());
        CHECK(std::abs(rep.approx_total_s - rep.async_total_s) <= rounds * comm + 1e-12);
    }
}

TEST_CASE("predict_async: speedup grows with T at fixed warm-up") {
    CostModel cm{std::vector<double>(3, 0.010), 0.001, 0.0};
    double prev = 0.0;
    for (int T : {25, 50, 100, 200}) {
        ExecutionPlan plan = plan_async(T, 3, 3, 2);
        LatencyReport rep = predict_async(plan, cm);
        CHECK(rep.speedup > prev);
        prev = rep.speedup;
    }
}

TEST_CASE("predict_async: segment-count mismatch rejected") {
    ExecutionPlan plan = plan_async(10, 1, 3, 1);
    CostModel cm{{0.01, 0.01}, 0.0, 0.0};
    CHECK_THROWS_AS(predict_async(plan, cm), std::invalid_argument);
}

TEST_CASE("calibrate_and_compare: self-consistent on synthetic stats") {
    ExecutionPlan plan = plan_async(30, 2, 3, 1);
    std::vector<double> delays{0.010, 0.010, 0.010};

    // fabricate measured stats that match the model exactly
    RunStats stats;
    stats.broadcast_count = static_cast<int>(plan.rounds.size());
    double comm = 0.0005;
    double total = 2 * (3 * 0.010);
    for (const Round& r : plan.rounds) {
        stats.round_wall_s.push_back(0.010 + (r.broadcast ? comm : 0.0));
        stats.round_comm_s.push_back(r.broadcast ? comm : 0.0);
        total += stats.round_wall_s.back();
    }
    stats.total_wall_s = total;

    CostComparison cmp = calibrate_and_compare(plan, delays, stats);
    // calibrated comm cost spreads measured comm over all rounds
    CHECK(cmp.rel_error_total < 0.01);
    CHECK(cmp.measured_total_s == doctest::Approx(total).epsilon(1e-12));
}
