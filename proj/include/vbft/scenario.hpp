#pragma once

#include <json.hpp>

#include "vbft/common.hpp"

namespace vbft {

enum class Behavior : uint8_t {
    Honest,
    Crash,
    SilentPrimary,
    Equivocate,
    InvalidSeq,
    DelayVotes,
};

inline const char* to_string(Behavior b) {
    switch (b) {
        case Behavior::Honest: return "honest";
        case Behavior::Crash: return "crash";
        case Behavior::SilentPrimary: return "silent_primary";
        case Behavior::Equivocate: return "equivocate";
        case Behavior::InvalidSeq: return "invalid_seq";
        case Behavior::DelayVotes: return "delay_votes";
    }
    return "honest";
}

inline std::optional<Behavior> behavior_from_string(const std::string& s) {
    for (auto b : {Behavior::Honest, Behavior::Crash, Behavior::SilentPrimary,
                   Behavior::Equivocate, Behavior::InvalidSeq, Behavior::DelayVotes})
        if (s == to_string(b)) return b;
    return std::nullopt;
}

struct AdversaryEntry {
    NodeId node = 0;
    Behavior behavior = Behavior::Honest;
    Tick at_time = 0;         // crash: drop everything from this time on
    uint32_t fork_count = 2;  // equivocate: number of conflicting blocks
};

/// One simulated run's parameters, as read from a scenario file.
struct Scenario {
    uint32_t n = 4;
    uint32_t f = 1;
    Tick gst = 0;
    Tick delta = 10;
    Tick timeout_initial = 100;
    uint32_t batch_size = 16;
    uint32_t clients = 1;
    uint32_t requests_per_client = 1;
    std::vector<AdversaryEntry> adversary;

    Behavior behavior_of(NodeId id) const {
        for (const auto& a : adversary)
            if (a.node == id) return a.behavior;
        return Behavior::Honest;
    }
    bool is_byzantine(NodeId id) const { return behavior_of(id) != Behavior::Honest; }
    const AdversaryEntry* entry_of(NodeId id) const {
        for (const auto& a : adversary)
            if (a.node == id) return &a;
        return nullptr;
    }
};

inline void to_json(nlohmann::json& j, const AdversaryEntry& a) {
    j = nlohmann::json{{"node", a.node}, {"behavior", to_string(a.behavior)}};
    nlohmann::json params = nlohmann::json::object();
    if (a.behavior == Behavior::Crash) params["at_time"] = a.at_time;
    if (a.behavior == Behavior::Equivocate) params["fork_count"] = a.fork_count;
    j["params"] = params;
}

inline void to_json(nlohmann::json& j, const Scenario& s) {
    j = nlohmann::json{{"n", s.n},
                       {"f", s.f},
                       {"gst", s.gst},
                       {"delta", s.delta},
                       {"timeout_initial", s.timeout_initial},
                       {"batch_size", s.batch_size},
                       {"clients", s.clients},
                       {"requests_per_client", s.requests_per_client},
                       {"adversary", s.adversary}};
}

struct ScenarioLoad {
    std::optional<Scenario> scenario;
    std::string error;  // field-level message when scenario is empty
};

inline ScenarioLoad load_scenario_json(const nlohmann::json& j) {
    auto fail = [](std::string msg) { return ScenarioLoad{std::nullopt, std::move(msg)}; };
    if (!j.is_object()) return fail("scenario must be a JSON object");
    for (const char* key : {"n", "f", "gst", "delta", "timeout_initial", "batch_size", "clients",
                            "requests_per_client", "adversary"})
        if (!j.contains(key)) return fail(std::string("missing key: ") + key);
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const std::set<std::string> known = {
            "n",       "f",       "gst",     "delta",   "timeout_initial",
            "batch_size", "clients", "requests_per_client", "adversary"};
        if (!known.count(it.key())) return fail("unknown key: " + it.key());
    }
    Scenario s;
    try {
        s.n = j.at("n").get<uint32_t>();
        s.f = j.at("f").get<uint32_t>();
        s.gst = j.at("gst").get<Tick>();
        s.delta = j.at("delta").get<Tick>();
        s.timeout_initial = j.at("timeout_initial").get<Tick>();
        s.batch_size = j.at("batch_size").get<uint32_t>();
        s.clients = j.at("clients").get<uint32_t>();
        s.requests_per_client = j.at("requests_per_client").get<uint32_t>();
    } catch (const nlohmann::json::exception& e) {
        return fail(std::string("bad field type: ") + e.what());
    }
    if (s.f == 0) return fail("f: must be >= 1");
    if (s.n != 3 * s.f + 1) return fail("n: must equal 3f+1");
    if (s.delta <= 0) return fail("delta: must be positive");
    if (s.gst < 0) return fail("gst: must be >= 0");
    if (s.timeout_initial <= 0) return fail("timeout_initial: must be positive");
    if (s.batch_size == 0) return fail("batch_size: must be >= 1");

    if (!j.at("adversary").is_array()) return fail("adversary: must be an array");
    std::set<NodeId> seen;
    uint32_t byzantine = 0;
    for (const auto& aj : j.at("adversary")) {
        AdversaryEntry a;
        if (!aj.contains("node") || !aj.contains("behavior"))
            return fail("adversary entry: needs node and behavior");
        try {
            a.node = aj.at("node").get<NodeId>();
        } catch (const nlohmann::json::exception&) {
            return fail("adversary entry: bad node id");
        }
        if (a.node >= s.n) return fail("adversary entry: node id out of range");
        if (!seen.insert(a.node).second) return fail("adversary entry: duplicate node");
        auto b = behavior_from_string(aj.at("behavior").get<std::string>());
        if (!b) return fail("adversary entry: unknown behavior");
        a.behavior = *b;
        if (aj.contains("params") && aj.at("params").is_object()) {
            const auto& p = aj.at("params");
            if (p.contains("at_time")) a.at_time = p.at("at_time").get<Tick>();
            if (p.contains("fork_count")) a.fork_count = p.at("fork_count").get<uint32_t>();
        }
        if (a.behavior == Behavior::Equivocate && a.fork_count < 2)
            return fail("adversary entry: fork_count must be >= 2");
        if (a.behavior != Behavior::Honest) ++byzantine;
        s.adversary.push_back(a);
    }
    if (byzantine > s.f) return fail("adversary: more than f Byzantine nodes");
    return ScenarioLoad{s, ""};
}

inline ScenarioLoad parse_scenario(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) return ScenarioLoad{std::nullopt, "scenario file is not valid JSON"};
    return load_scenario_json(j);
}

inline std::string scenario_digest(const Scenario& s) {
    nlohmann::json j = s;
    return sha256(j.dump()).hex();
}

}  // namespace vbft
