#pragma once

#include "vbft/trace.hpp"
#include "vbft/types.hpp"

namespace vbft {

/// Block proposal as broadcast by the primary (pre-prepare).
struct Proposal {
    Block block;
};

struct ReadyQCMsg {
    QuorumCert qc;  // kind Ready
};

struct PayloadRequest {
    Digest beta_hash;
    ViewNum view = 0;
    NodeId requester = 0;
};

struct PayloadResponseBlock {
    Block block;
    NodeId responder = 0;
};

struct ProofMsg {
    MisbehaviorProof proof;
    NodeId sender = 0;
};

struct SyncRequest {
    SeqNum from_seq = 0;
    SeqNum to_seq = 0;
    NodeId requester = 0;
};

struct SyncEntry {
    Block block;
    QuorumCert qc;
};

struct SyncResponse {
    std::vector<SyncEntry> entries;
};

using Message = std::variant<ClientRequest, Proposal, Vote, ViewChangeMsg, NewViewMsg, ReadyMsg,
                             ReadyQCMsg, PayloadRequest, PayloadResponseBlock, NegativeResponse,
                             ReplyMsg, ProofMsg, SyncRequest, SyncResponse>;

inline MsgKind kind_of(const Message& m) {
    struct V {
        MsgKind operator()(const ClientRequest&) { return MsgKind::Request; }
        MsgKind operator()(const Proposal&) { return MsgKind::PrePrepare; }
        MsgKind operator()(const Vote&) { return MsgKind::Vote; }
        MsgKind operator()(const ViewChangeMsg&) { return MsgKind::ViewChange; }
        MsgKind operator()(const NewViewMsg&) { return MsgKind::NewView; }
        MsgKind operator()(const ReadyMsg&) { return MsgKind::Ready; }
        MsgKind operator()(const ReadyQCMsg&) { return MsgKind::ReadyQC; }
        MsgKind operator()(const PayloadRequest&) { return MsgKind::PayloadRequest; }
        MsgKind operator()(const PayloadResponseBlock&) { return MsgKind::PayloadResponse; }
        MsgKind operator()(const NegativeResponse&) { return MsgKind::NegativeResponse; }
        MsgKind operator()(const ReplyMsg&) { return MsgKind::Reply; }
        MsgKind operator()(const ProofMsg&) { return MsgKind::Proof; }
        MsgKind operator()(const SyncRequest&) { return MsgKind::SyncRequest; }
        MsgKind operator()(const SyncResponse&) { return MsgKind::SyncResponse; }
    };
    return std::visit(V{}, m);
}

/// What a handler wants done. Handlers never touch the network or clock
/// directly; the simulator interprets these.
struct SendEffect {
    enum class Scope : uint8_t { Unicast, AllNodes } scope = Scope::Unicast;
    Address dst;        // unicast only
    Message msg;
    Tick extra_delay = 0;
};

struct ArmTimerEffect {
    uint64_t id = 0;  // replica: timer generation; client: request timestamp
    Tick after = 0;
};

struct TraceEffect {
    TraceEvent event;
};

using Effect = std::variant<SendEffect, ArmTimerEffect, TraceEffect>;
using Effects = std::vector<Effect>;

inline SendEffect unicast(Address dst, Message msg) {
    return SendEffect{SendEffect::Scope::Unicast, dst, std::move(msg), 0};
}
inline SendEffect broadcast_nodes(Message msg) {
    return SendEffect{SendEffect::Scope::AllNodes, Address{}, std::move(msg), 0};
}

}  // namespace vbft
