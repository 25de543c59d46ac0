#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "vbft/vbft.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int load_or_fail(const std::string& path, vbft::Scenario& out) {
    auto text = read_file(path);
    if (!text) {
        std::cerr << "error: cannot read scenario file: " << path << "\n";
        return kExitUsage;
    }
    auto loaded = vbft::parse_scenario(*text);
    if (!loaded.scenario) {
        std::cerr << "error: invalid scenario: " << loaded.error << "\n";
        return kExitUsage;
    }
    out = *loaded.scenario;
    return kExitOk;
}

void print_report(const vbft::audit::Report& rep) {
    std::cout << (rep.pass ? "PASS" : "FAIL") << "  " << rep.name << "\n";
    for (const auto& f : rep.failures) std::cout << "      " << f << "\n";
}

int run_and_output(const vbft::Scenario& sc, uint64_t seed, vbft::SeqNum height,
                   size_t max_events, std::optional<vbft::Tick> max_time,
                   const std::string& out_path, bool quiet) {
    vbft::World world(sc, seed);
    vbft::World::StopSpec stop;
    stop.height = height;
    stop.max_events = max_events;
    stop.time_limit = max_time;
    auto outcome = world.run_until(stop);
    vbft::Trace trace = world.take_trace();

    std::string serialized = trace.to_jsonl();
    if (out_path == "-") {
        std::cout << serialized;
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write " << out_path << "\n";
            return kExitUsage;
        }
        out << serialized;
    }
    if (outcome == vbft::World::RunOutcome::EventCap) {
        std::cerr << "error: StopNeverReached: event cap hit before the stop condition; "
                     "partial trace written\n";
        return kExitViolation;
    }
    if (!quiet)
        std::cerr << "run complete: " << trace.events.size() << " events, now=" << world.now()
                  << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VBFT simulator, trace auditor and scenario harness"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "simulate one seeded scenario and write the trace");
    std::string run_scn, run_out = "-";
    uint64_t run_seed = 1;
    vbft::SeqNum run_height = 10;
    size_t run_max_events = 1'000'000;
    std::optional<vbft::Tick> run_max_time;
    run->add_option("--scenario", run_scn, "scenario file")->required();
    run->add_option("--seed", run_seed, "rng seed");
    run->add_option("--out", run_out, "trace output path ('-' for stdout)");
    run->add_option("--until-height", run_height, "stop once all honest nodes reach this height");
    run->add_option("--max-events", run_max_events, "event cap");
    run->add_option("--max-time", run_max_time, "stop at this simulated tick");

    // check
    auto* check = app.add_subcommand("check", "audit a trace file");
    std::string check_path;
    size_t check_window = 3;
    check->add_option("trace", check_path, "trace file")->required();
    check->add_option("--blacklist-window", check_window,
                      "views allowed between proof and blacklisting");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run and audit many seeds in memory");
    std::string sweep_scn;
    uint64_t sweep_start = 1;
    uint32_t sweep_count = 100;
    vbft::SeqNum sweep_height = 5;
    size_t sweep_max_events = 1'000'000;
    sweep->add_option("--scenario", sweep_scn, "scenario file")->required();
    sweep->add_option("--seed", sweep_start, "first seed");
    sweep->add_option("--count", sweep_count, "number of seeds");
    sweep->add_option("--until-height", sweep_height, "per-run stop height");
    sweep->add_option("--max-events", sweep_max_events, "per-run event cap");

    // bench
    auto* bench = app.add_subcommand("bench", "report latency histograms for one run");
    std::string bench_scn;
    uint64_t bench_seed = 1;
    vbft::SeqNum bench_height = 20;
    bench->add_option("--scenario", bench_scn, "scenario file")->required();
    bench->add_option("--seed", bench_seed, "rng seed");
    bench->add_option("--until-height", bench_height, "stop height");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        vbft::Scenario sc;
        if (int rc = load_or_fail(run_scn, sc)) return rc;
        return run_and_output(sc, run_seed, run_height, run_max_events, run_max_time, run_out,
                              false);
    }

    if (check->parsed()) {
        auto text = read_file(check_path);
        if (!text) {
            std::cerr << "error: cannot read trace: " << check_path << "\n";
            return kExitUsage;
        }
        auto [trace, err] = vbft::Trace::from_jsonl(*text);
        if (!trace) {
            std::cerr << "error: MalformedTrace: " << err << "\n";
            return kExitUsage;
        }
        auto result = vbft::audit::check_all(*trace, check_window);
        print_report(result.safety);
        for (const auto& [seq, st] : result.safety.s_safety) {
            if (st == vbft::audit::SeqStatus::ViolatedWithEquivocation)
                std::cout << "      seq " << seq
                          << ": S-safety VIOLATED-WITH-EQUIVOCATION (legal revocation)\n";
        }
        print_report(result.client);
        print_report(result.liveness);
        print_report(result.latency);
        std::cout << "revocations: " << result.safety.revocations << "\n";
        return result.pass() ? kExitOk : kExitViolation;
    }

    if (sweep->parsed()) {
        vbft::Scenario sc;
        if (int rc = load_or_fail(sweep_scn, sc)) return rc;
        uint32_t failures = 0;
        size_t total_revocations = 0;
        for (uint32_t i = 0; i < sweep_count; ++i) {
            uint64_t seed = sweep_start + i;
            vbft::World world(sc, seed);
            vbft::World::StopSpec stop;
            stop.height = sweep_height;
            stop.max_events = sweep_max_events;
            world.run_until(stop);
            vbft::Trace trace = world.take_trace();
            auto result = vbft::audit::check_all(trace);
            total_revocations += result.safety.revocations;
            if (!result.pass()) {
                ++failures;
                std::cout << "seed " << seed << ": FAIL\n";
                for (const auto* rep :
                     {static_cast<const vbft::audit::Report*>(&result.safety),
                      static_cast<const vbft::audit::Report*>(&result.client),
                      static_cast<const vbft::audit::Report*>(&result.liveness),
                      static_cast<const vbft::audit::Report*>(&result.latency)})
                    for (const auto& f : rep->failures) std::cout << "      " << f << "\n";
            }
        }
        std::cout << "sweep: " << (sweep_count - failures) << "/" << sweep_count
                  << " seeds passed, " << total_revocations << " legal revocations observed\n";
        return failures == 0 ? kExitOk : kExitViolation;
    }

    if (bench->parsed()) {
        vbft::Scenario sc;
        if (int rc = load_or_fail(bench_scn, sc)) return rc;
        vbft::World world(sc, bench_seed);
        vbft::World::StopSpec stop;
        stop.height = bench_height;
        world.run_until(stop);
        vbft::Trace trace = world.take_trace();
        auto lat = vbft::audit::audit_latency(trace);

        std::map<int, size_t> step_hist;
        std::map<vbft::Tick, size_t> tick_hist;
        for (const auto& b : lat.blocks) {
            for (int s : b.commit_steps) ++step_hist[s];
            for (vbft::Tick t : b.commit_ticks) ++tick_hist[t];
        }
        std::cout << "commit step depth histogram:\n";
        for (const auto& [steps, count] : step_hist)
            std::cout << "  " << steps << " steps: " << count << " commits\n";
        std::cout << "commit tick latency histogram (from proposal send):\n";
        for (const auto& [ticks, count] : tick_hist)
            std::cout << "  " << ticks << " ticks: " << count << " commits\n";
        std::map<int, size_t> confirm_hist;
        for (int s : lat.confirm_steps) ++confirm_hist[s];
        std::cout << "client confirm step depth histogram:\n";
        for (const auto& [steps, count] : confirm_hist)
            std::cout << "  " << steps << " steps: " << count << " confirms\n";
        if (!lat.view_change_overhead.empty()) {
            std::cout << "view-change overhead (first proposal depth minus NEW-VIEW depth):\n";
            for (const auto& [view, overhead] : lat.view_change_overhead)
                std::cout << "  view " << view << ": " << overhead << " steps\n";
        }
        return kExitOk;
    }

    return kExitUsage;
}
