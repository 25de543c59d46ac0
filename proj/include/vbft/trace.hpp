#pragma once

#include <iosfwd>
#include <sstream>

#include "vbft/scenario.hpp"
#include "vbft/serde.hpp"

namespace vbft {

/// A node or a client, as an event endpoint.
struct Address {
    enum class Kind : uint8_t { Node, Client } kind = Kind::Node;
    uint32_t id = 0;

    auto operator<=>(const Address&) const = default;

    static Address node(NodeId id) { return {Kind::Node, id}; }
    static Address client(ClientId id) { return {Kind::Client, id}; }
    bool is_node() const { return kind == Kind::Node; }

    std::string str() const {
        return (kind == Kind::Node ? "n" : "c") + std::to_string(id);
    }
    static std::optional<Address> parse(const std::string& s) {
        if (s.size() < 2 || (s[0] != 'n' && s[0] != 'c')) return std::nullopt;
        uint32_t id = 0;
        for (size_t i = 1; i < s.size(); ++i) {
            if (s[i] < '0' || s[i] > '9') return std::nullopt;
            id = id * 10 + static_cast<uint32_t>(s[i] - '0');
        }
        return Address{s[0] == 'n' ? Kind::Node : Kind::Client, id};
    }
};

enum class MsgKind : uint8_t {
    None,
    Request,
    PrePrepare,
    Vote,
    ViewChange,
    NewView,
    Ready,
    ReadyQC,
    PayloadRequest,
    PayloadResponse,
    NegativeResponse,
    Reply,
    Proof,
    SyncRequest,
    SyncResponse,
};

inline const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::None: return "none";
        case MsgKind::Request: return "request";
        case MsgKind::PrePrepare: return "pre_prepare";
        case MsgKind::Vote: return "vote";
        case MsgKind::ViewChange: return "view_change";
        case MsgKind::NewView: return "new_view";
        case MsgKind::Ready: return "ready";
        case MsgKind::ReadyQC: return "ready_qc";
        case MsgKind::PayloadRequest: return "payload_request";
        case MsgKind::PayloadResponse: return "payload_response";
        case MsgKind::NegativeResponse: return "negative_response";
        case MsgKind::Reply: return "reply";
        case MsgKind::Proof: return "proof";
        case MsgKind::SyncRequest: return "sync_request";
        case MsgKind::SyncResponse: return "sync_response";
    }
    return "none";
}

inline std::optional<MsgKind> msg_kind_from_string(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(MsgKind::SyncResponse); ++k)
        if (s == to_string(static_cast<MsgKind>(k))) return static_cast<MsgKind>(k);
    return std::nullopt;
}

/// One globally ordered record. Unused fields stay at their defaults and
/// are omitted from the serialized form.
struct TraceEvent {
    enum class Kind : uint8_t {
        Send,
        Deliver,
        Commit,
        Revoke,
        Blacklist,
        ViewEnter,
        Reply,
        Submit,
        Confirm,
        ProofDetected,
    };

    Kind kind = Kind::Send;
    Tick time = 0;
    Address src;            // send/deliver: message endpoints
    Address dst;
    MsgKind msg = MsgKind::None;
    int depth = 0;          // causal message-step depth
    ViewNum view = 0;
    SeqNum seq = 0;
    uint64_t tstamp = 0;    // client request timestamp
    Digest hash;            // block hash where relevant
    Digest payload_dig;
    std::vector<std::pair<ClientId, uint64_t>> payload_keys;
    std::optional<QuorumCert> qc;
    int64_t culprit = -1;
    uint32_t proposer = 0;  // commit: block proposer
    bool has_qc_nr = false;
    Digest qc_nr_target;

    auto operator<=>(const TraceEvent&) const = default;
};

inline const char* to_string(TraceEvent::Kind k) {
    switch (k) {
        case TraceEvent::Kind::Send: return "send";
        case TraceEvent::Kind::Deliver: return "deliver";
        case TraceEvent::Kind::Commit: return "commit";
        case TraceEvent::Kind::Revoke: return "revoke";
        case TraceEvent::Kind::Blacklist: return "blacklist";
        case TraceEvent::Kind::ViewEnter: return "view_enter";
        case TraceEvent::Kind::Reply: return "reply";
        case TraceEvent::Kind::Submit: return "submit";
        case TraceEvent::Kind::Confirm: return "confirm";
        case TraceEvent::Kind::ProofDetected: return "proof_detected";
    }
    return "send";
}

inline std::optional<TraceEvent::Kind> event_kind_from_string(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(TraceEvent::Kind::ProofDetected); ++k)
        if (s == to_string(static_cast<TraceEvent::Kind>(k))) return static_cast<TraceEvent::Kind>(k);
    return std::nullopt;
}

inline void to_json(json& j, const TraceEvent& e) {
    j = json{{"type", to_string(e.kind)}, {"time", e.time}};
    switch (e.kind) {
        case TraceEvent::Kind::Send:
        case TraceEvent::Kind::Deliver:
            j["src"] = e.src.str();
            j["dst"] = e.dst.str();
            j["msg"] = to_string(e.msg);
            j["depth"] = e.depth;
            if (e.msg == MsgKind::PrePrepare) {
                j["view"] = e.view;
                j["seq"] = e.seq;
                j["hash"] = e.hash;
                j["payload_digest"] = e.payload_dig;
                if (e.has_qc_nr) j["qc_nr_target"] = e.qc_nr_target;
            }
            if (e.msg == MsgKind::ViewChange || e.msg == MsgKind::NewView) j["view"] = e.view;
            break;
        case TraceEvent::Kind::Commit:
            j["node"] = e.src.id;
            j["view"] = e.view;
            j["seq"] = e.seq;
            j["hash"] = e.hash;
            j["proposer"] = e.proposer;
            j["payload_digest"] = e.payload_dig;
            j["payload_keys"] = e.payload_keys;
            j["depth"] = e.depth;
            if (e.qc) j["qc"] = *e.qc;
            break;
        case TraceEvent::Kind::Revoke:
            j["node"] = e.src.id;
            j["seq"] = e.seq;
            j["hash"] = e.hash;
            j["payload_digest"] = e.payload_dig;
            break;
        case TraceEvent::Kind::Blacklist:
            j["node"] = e.src.id;
            j["culprit"] = e.culprit;
            j["view"] = e.view;
            j["seq"] = e.seq;
            break;
        case TraceEvent::Kind::ViewEnter:
            j["node"] = e.src.id;
            j["view"] = e.view;
            break;
        case TraceEvent::Kind::Reply:
            j["node"] = e.src.id;
            j["client"] = e.dst.id;
            j["tstamp"] = e.tstamp;
            j["seq"] = e.seq;
            break;
        case TraceEvent::Kind::Submit:
            j["client"] = e.src.id;
            j["tstamp"] = e.tstamp;
            break;
        case TraceEvent::Kind::Confirm:
            j["client"] = e.src.id;
            j["tstamp"] = e.tstamp;
            j["seq"] = e.seq;
            j["depth"] = e.depth;
            break;
        case TraceEvent::Kind::ProofDetected:
            j["node"] = e.src.id;
            j["culprit"] = e.culprit;
            j["view"] = e.view;
            j["seq"] = e.seq;
            break;
    }
}

inline void from_json(const json& j, TraceEvent& e) {
    auto kind = event_kind_from_string(j.at("type").get<std::string>());
    if (!kind) throw json::other_error::create(501, "unknown event type", nullptr);
    e = TraceEvent{};
    e.kind = *kind;
    j.at("time").get_to(e.time);
    auto addr = [&](const char* key) {
        auto a = Address::parse(j.at(key).get<std::string>());
        if (!a) throw json::other_error::create(501, "bad address", nullptr);
        return *a;
    };
    switch (e.kind) {
        case TraceEvent::Kind::Send:
        case TraceEvent::Kind::Deliver: {
            e.src = addr("src");
            e.dst = addr("dst");
            auto mk = msg_kind_from_string(j.at("msg").get<std::string>());
            if (!mk) throw json::other_error::create(501, "unknown msg kind", nullptr);
            e.msg = *mk;
            j.at("depth").get_to(e.depth);
            if (j.contains("view")) j.at("view").get_to(e.view);
            if (j.contains("seq")) j.at("seq").get_to(e.seq);
            if (j.contains("hash")) j.at("hash").get_to(e.hash);
            if (j.contains("payload_digest")) j.at("payload_digest").get_to(e.payload_dig);
            if (j.contains("qc_nr_target")) {
                e.has_qc_nr = true;
                j.at("qc_nr_target").get_to(e.qc_nr_target);
            }
            break;
        }
        case TraceEvent::Kind::Commit:
            e.src = Address::node(j.at("node").get<uint32_t>());
            j.at("view").get_to(e.view);
            j.at("seq").get_to(e.seq);
            j.at("hash").get_to(e.hash);
            j.at("proposer").get_to(e.proposer);
            j.at("payload_digest").get_to(e.payload_dig);
            e.payload_keys =
                j.at("payload_keys").get<std::vector<std::pair<ClientId, uint64_t>>>();
            j.at("depth").get_to(e.depth);
            if (j.contains("qc")) e.qc = j.at("qc").get<QuorumCert>();
            break;
        case TraceEvent::Kind::Revoke:
            e.src = Address::node(j.at("node").get<uint32_t>());
            j.at("seq").get_to(e.seq);
            j.at("hash").get_to(e.hash);
            j.at("payload_digest").get_to(e.payload_dig);
            break;
        case TraceEvent::Kind::Blacklist:
            e.src = Address::node(j.at("node").get<uint32_t>());
            j.at("culprit").get_to(e.culprit);
            j.at("view").get_to(e.view);
            j.at("seq").get_to(e.seq);
            break;
        case TraceEvent::Kind::ViewEnter:
            e.src = Address::node(j.at("node").get<uint32_t>());
            j.at("view").get_to(e.view);
            break;
        case TraceEvent::Kind::Reply:
            e.src = Address::node(j.at("node").get<uint32_t>());
            e.dst = Address::client(j.at("client").get<uint32_t>());
            j.at("tstamp").get_to(e.tstamp);
            j.at("seq").get_to(e.seq);
            break;
        case TraceEvent::Kind::Submit:
            e.src = Address::client(j.at("client").get<uint32_t>());
            j.at("tstamp").get_to(e.tstamp);
            break;
        case TraceEvent::Kind::Confirm:
            e.src = Address::client(j.at("client").get<uint32_t>());
            j.at("tstamp").get_to(e.tstamp);
            j.at("seq").get_to(e.seq);
            j.at("depth").get_to(e.depth);
            break;
        case TraceEvent::Kind::ProofDetected:
            e.src = Address::node(j.at("node").get<uint32_t>());
            j.at("culprit").get_to(e.culprit);
            j.at("view").get_to(e.view);
            j.at("seq").get_to(e.seq);
            break;
    }
}

struct RunHeader {
    Scenario scenario;
    uint64_t seed = 0;
    std::string scenario_digest;
};

inline void to_json(json& j, const RunHeader& h) {
    j = json{{"type", "header"},
             {"scenario", h.scenario},
             {"seed", h.seed},
             {"scenario_digest", h.scenario_digest}};
}

struct Trace {
    RunHeader header;
    std::vector<TraceEvent> events;
    bool truncated = false;  // event cap was hit before the stop condition

    std::string to_jsonl() const {
        std::ostringstream out;
        json h = header;
        if (truncated) h["truncated"] = true;
        out << h.dump() << '\n';
        for (const auto& e : events) {
            json je = e;
            out << je.dump() << '\n';
        }
        return out.str();
    }

    /// Parses a JSONL trace. Returns an error string on malformed input.
    static std::pair<std::optional<Trace>, std::string> from_jsonl(const std::string& text) {
        auto fail = [](std::string m) {
            return std::pair<std::optional<Trace>, std::string>{std::nullopt, std::move(m)};
        };
        Trace t;
        std::istringstream in(text);
        std::string line;
        size_t lineno = 0;
        bool have_header = false;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded()) return fail("line " + std::to_string(lineno) + ": bad JSON");
            if (!have_header) {
                if (!j.is_object() || j.value("type", "") != "header")
                    return fail("line 1: missing trace header");
                auto sl = load_scenario_json(j.at("scenario"));
                if (!sl.scenario) return fail("header scenario: " + sl.error);
                t.header.scenario = *sl.scenario;
                if (!j.contains("seed")) return fail("header: missing seed");
                t.header.seed = j.at("seed").get<uint64_t>();
                t.header.scenario_digest = j.value("scenario_digest", "");
                t.truncated = j.value("truncated", false);
                have_header = true;
                continue;
            }
            try {
                t.events.push_back(j.get<TraceEvent>());
            } catch (const json::exception& e) {
                return fail("line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        if (!have_header) return fail("empty trace");
        return {t, ""};
    }
};

}  // namespace vbft
