#pragma once

#include <algorithm>
#include <map>

#include "vbft/replica.hpp"
#include "vbft/trace.hpp"

namespace vbft::audit {

struct Report {
    std::string name;
    bool pass = true;
    std::vector<std::string> failures;  // includes counterexample event indices

    void fail(size_t event_index, std::string msg) {
        pass = false;
        failures.push_back("event " + std::to_string(event_index) + ": " + std::move(msg));
    }
    void fail(std::string msg) {
        pass = false;
        failures.push_back(std::move(msg));
    }
};

enum class SeqStatus : uint8_t { Held, ViolatedWithEquivocation, Violated };

struct SafetyReport : Report {
    std::map<SeqNum, SeqStatus> s_safety;
    size_t revocations = 0;
    size_t commits_checked = 0;
    bool any_equivocation_tagged() const {
        for (const auto& [s, st] : s_safety)
            if (st == SeqStatus::ViolatedWithEquivocation) return true;
        return false;
    }
};

struct ClientReport : Report {
    size_t confirms_checked = 0;
};

struct LivenessReport : Report {
    size_t view_changes = 0;
    std::map<int64_t, size_t> blacklist_views_needed;  // culprit -> views until blacklisted
    std::optional<size_t> views_until_first_post_gst_commit;
};

struct BlockLatency {
    SeqNum seq = 0;
    Digest hash;
    int proposal_depth = 0;
    Tick proposal_time = 0;
    std::vector<int> commit_steps;   // per honest commit
    std::vector<Tick> commit_ticks;  // wall-clock ticks from proposal send
};

struct LatencyReport : Report {
    std::vector<BlockLatency> blocks;
    std::vector<int> confirm_steps;
    std::map<ViewNum, int> view_change_overhead;  // first proposal depth - NEW-VIEW depth

    bool all_commit_steps(int expected) const {
        for (const auto& b : blocks)
            for (int s : b.commit_steps)
                if (s != expected) return false;
        return !blocks.empty();
    }
    bool all_confirm_steps(int expected) const {
        for (int s : confirm_steps)
            if (s != expected) return false;
        return !confirm_steps.empty();
    }
};

namespace detail {

struct Context {
    const Trace& trace;
    crypto::Keychain keys;
    uint32_t n, f, quorum;
    std::vector<bool> honest;

    explicit Context(const Trace& t)
        : trace(t),
          keys(t.header.seed, t.header.scenario.n, t.header.scenario.clients),
          n(t.header.scenario.n),
          f(t.header.scenario.f),
          quorum(2 * t.header.scenario.f + 1) {
        honest.assign(n, true);
        for (const auto& a : t.header.scenario.adversary)
            if (a.behavior != Behavior::Honest) honest[a.node] = false;
    }

    bool is_honest(const Address& a) const { return a.is_node() && a.id < n && honest[a.id]; }
};

}  // namespace detail

/// R-safety, conditional S-safety and revocation legality. Block identity is
/// the payload digest: a re-proposal in a later view carries a new header but
/// the same payload, and only payload-level conflicts matter for safety.
inline SafetyReport audit_safety(const Trace& trace) {
    SafetyReport rep;
    rep.name = "safety";
    detail::Context ctx(trace);

    // held[seq][digest] = honest nodes currently holding that commit
    std::map<SeqNum, std::map<Digest, std::set<NodeId>>> held;
    std::map<SeqNum, std::map<Digest, std::set<NodeId>>> ever_committed;
    std::map<SeqNum, std::set<Digest>> confirmed_digests;  // reached f+1 honest holders
    std::set<SeqNum> equivocation_proved;

    for (size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        switch (e.kind) {
            case TraceEvent::Kind::Commit: {
                ++rep.commits_checked;
                if (!e.qc) {
                    rep.fail(i, "commit without a certificate");
                    break;
                }
                const QuorumCert& qc = *e.qc;
                if (qc.kind != QuorumCert::Kind::BlockVote || qc.block_hash != e.hash ||
                    qc.seq != e.seq || qc.signers.size() < ctx.quorum ||
                    !certs::verify_qc(qc, ctx.quorum, ctx.keys)) {
                    rep.fail(i, "commit carries an invalid certificate at seq " +
                                    std::to_string(e.seq));
                    break;
                }
                if (!ctx.is_honest(e.src)) break;
                held[e.seq][e.payload_dig].insert(e.src.id);
                ever_committed[e.seq][e.payload_dig].insert(e.src.id);
                if (ever_committed[e.seq][e.payload_dig].size() >= ctx.f + 1) {
                    auto& conf = confirmed_digests[e.seq];
                    conf.insert(e.payload_dig);
                    if (conf.size() > 1)
                        rep.fail(i, "R-safety: two payloads each committed by f+1 honest nodes "
                                    "at seq " +
                                        std::to_string(e.seq));
                }
                break;
            }
            case TraceEvent::Kind::Revoke: {
                if (!ctx.is_honest(e.src)) break;
                ++rep.revocations;
                auto& holders = held[e.seq][e.payload_dig];
                if (confirmed_digests.count(e.seq) &&
                    confirmed_digests[e.seq].count(e.payload_dig))
                    rep.fail(i, "revocation of a block committed by f+1 honest nodes at seq " +
                                    std::to_string(e.seq));
                if (holders.size() > ctx.f)
                    rep.fail(i, "revocation while " + std::to_string(holders.size()) +
                                    " honest nodes held the commit at seq " +
                                    std::to_string(e.seq));
                holders.erase(e.src.id);
                break;
            }
            case TraceEvent::Kind::ProofDetected:
                equivocation_proved.insert(e.seq);
                break;
            default:
                break;
        }
    }

    for (const auto& [seq, digests] : ever_committed) {
        if (digests.size() <= 1) {
            rep.s_safety[seq] = SeqStatus::Held;
            continue;
        }
        if (equivocation_proved.count(seq)) {
            rep.s_safety[seq] = SeqStatus::ViolatedWithEquivocation;
        } else {
            rep.s_safety[seq] = SeqStatus::Violated;
            rep.fail("S-safety violated without an equivocation proof at seq " +
                     std::to_string(seq));
        }
    }
    return rep;
}

/// Every Confirm is backed by 2f+1 distinct replies, never contradicted by a
/// later revocation, and never double-assigned.
inline ClientReport audit_client(const Trace& trace) {
    ClientReport rep;
    rep.name = "client";
    detail::Context ctx(trace);

    std::map<std::tuple<ClientId, uint64_t, SeqNum>, std::set<NodeId>> repliers;
    std::map<std::pair<ClientId, uint64_t>, SeqNum> confirmed;
    std::vector<std::pair<size_t, TraceEvent>> confirms;

    for (size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        if (e.kind == TraceEvent::Kind::Reply) {
            repliers[{e.dst.id, e.tstamp, e.seq}].insert(e.src.id);
        } else if (e.kind == TraceEvent::Kind::Confirm) {
            ++rep.confirms_checked;
            auto backing = repliers.find({e.src.id, e.tstamp, e.seq});
            size_t distinct = backing == repliers.end() ? 0 : backing->second.size();
            if (distinct < ctx.quorum)
                rep.fail(i, "confirm backed by only " + std::to_string(distinct) + " replies");
            auto key = std::pair{e.src.id, e.tstamp};
            if (auto it = confirmed.find(key); it != confirmed.end() && it->second != e.seq)
                rep.fail(i, "request confirmed at two different sequences");
            confirmed.emplace(key, e.seq);
            confirms.emplace_back(i, e);
        }
    }

    // Final committed chains per honest node: last commit at a seq not
    // undone by a later revoke.
    std::map<NodeId, std::map<SeqNum, TraceEvent>> final_chain;
    for (const auto& e : trace.events) {
        if (e.kind == TraceEvent::Kind::Commit && ctx.is_honest(e.src))
            final_chain[e.src.id][e.seq] = e;
        else if (e.kind == TraceEvent::Kind::Revoke && ctx.is_honest(e.src))
            final_chain[e.src.id].erase(e.seq);
    }

    for (const auto& [idx, conf] : confirms) {
        std::pair<ClientId, uint64_t> key{conf.src.id, conf.tstamp};
        for (const auto& [node, chain] : final_chain) {
            for (const auto& [seq, commit] : chain) {
                bool contains = std::find(commit.payload_keys.begin(), commit.payload_keys.end(),
                                          key) != commit.payload_keys.end();
                if (seq == conf.seq && !contains)
                    rep.fail(idx, "node " + std::to_string(node) +
                                      " finally holds seq " + std::to_string(seq) +
                                      " without the confirmed request");
                if (seq != conf.seq && contains)
                    rep.fail(idx, "confirmed request also committed at seq " +
                                      std::to_string(seq) + " on node " + std::to_string(node));
            }
        }
    }
    return rep;
}

/// Progress after GST, blacklisting within the configured window, rotation
/// exclusion of proven culprits, and no revocations after every proven
/// culprit is blacklisted.
inline LivenessReport audit_liveness(const Trace& trace, size_t blacklist_window = 3) {
    LivenessReport rep;
    rep.name = "liveness";
    detail::Context ctx(trace);
    const Tick gst = trace.header.scenario.gst;

    // First-entry order of views across honest nodes.
    std::map<ViewNum, size_t> first_enter;   // view -> event index
    std::map<ViewNum, Tick> enter_time;
    std::vector<size_t> honest_commit_idx;
    std::map<int64_t, size_t> first_proof;   // culprit -> event index
    std::map<int64_t, std::map<NodeId, size_t>> blacklisted_at;  // culprit -> node -> index
    std::map<int64_t, std::map<NodeId, ViewNum>> blacklist_view;

    for (size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        if (!ctx.is_honest(e.src)) continue;
        switch (e.kind) {
            case TraceEvent::Kind::ViewEnter:
                if (!first_enter.count(e.view)) {
                    first_enter[e.view] = i;
                    enter_time[e.view] = e.time;
                }
                break;
            case TraceEvent::Kind::Commit:
                honest_commit_idx.push_back(i);
                break;
            case TraceEvent::Kind::ProofDetected:
                if (!first_proof.count(e.culprit)) first_proof[e.culprit] = i;
                break;
            case TraceEvent::Kind::Blacklist:
                blacklisted_at[e.culprit].emplace(e.src.id, i);
                blacklist_view[e.culprit].emplace(e.src.id, e.view);
                break;
            default:
                break;
        }
    }
    rep.view_changes = first_enter.empty() ? 0 : first_enter.size() - 1;

    // (1) Height progress across every completed window of f+1 consecutive
    // entered views after GST.
    std::vector<ViewNum> entered;
    for (const auto& [v, idx] : first_enter) entered.push_back(v);
    std::sort(entered.begin(), entered.end());
    auto commit_between = [&](size_t lo, size_t hi) {
        for (size_t idx : honest_commit_idx)
            if (idx > lo && idx < hi) return true;
        return false;
    };
    for (size_t i = 0; i + ctx.f + 1 < entered.size(); ++i) {
        ViewNum from = entered[i];
        ViewNum past = entered[i + ctx.f + 1];
        if (enter_time[from] < gst) continue;  // window starts before stabilization
        if (!commit_between(first_enter[from], first_enter[past]))
            rep.fail(first_enter[past], "no commit across views " + std::to_string(from) +
                                            ".." + std::to_string(entered[i + ctx.f]) +
                                            " after GST");
    }

    // (2) Every proven equivocator is blacklisted within the window.
    for (const auto& [culprit, proof_idx] : first_proof) {
        auto bl = blacklisted_at.find(culprit);
        if (bl == blacklisted_at.end() || bl->second.empty()) {
            rep.fail(proof_idx, "culprit " + std::to_string(culprit) + " never blacklisted");
            continue;
        }
        size_t first_bl = SIZE_MAX;
        for (const auto& [node, idx] : bl->second) first_bl = std::min(first_bl, idx);
        size_t views_between = 0;
        for (const auto& [v, idx] : first_enter)
            if (idx > proof_idx && idx < first_bl) ++views_between;
        rep.blacklist_views_needed[culprit] = views_between;
        if (views_between > blacklist_window)
            rep.fail(first_bl, "culprit " + std::to_string(culprit) + " blacklisted only after " +
                                   std::to_string(views_between) + " view changes");
        if (bl->second.size() < ctx.f + 1)
            rep.fail(first_bl, "blacklist of culprit " + std::to_string(culprit) +
                                   " committed by fewer than f+1 honest nodes");
    }

    // (3) No honest node commits a block proposed by a culprit it blacklisted.
    for (size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        if (e.kind != TraceEvent::Kind::Commit || !ctx.is_honest(e.src)) continue;
        auto bl = blacklist_view.find(e.proposer);
        if (bl == blacklist_view.end()) continue;
        auto node_it = bl->second.find(e.src.id);
        if (node_it == bl->second.end()) continue;
        if (e.view > node_it->second)
            rep.fail(i, "node " + std::to_string(e.src.id) +
                            " committed a post-blacklist block proposed by culprit " +
                            std::to_string(e.proposer));
    }

    // (4) Once a node has blacklisted every proven culprit, it never revokes.
    if (!first_proof.empty()) {
        std::map<NodeId, size_t> fully_blacklisted_at;
        for (NodeId node = 0; node < ctx.n; ++node) {
            if (!ctx.honest[node]) continue;
            size_t last = 0;
            bool all = true;
            for (const auto& [culprit, nodes] : first_proof) {
                auto bl = blacklisted_at.find(culprit);
                if (bl == blacklisted_at.end() || !bl->second.count(node)) {
                    all = false;
                    break;
                }
                last = std::max(last, bl->second.at(node));
            }
            if (all) fully_blacklisted_at[node] = last;
        }
        for (size_t i = 0; i < trace.events.size(); ++i) {
            const auto& e = trace.events[i];
            if (e.kind != TraceEvent::Kind::Revoke || !ctx.is_honest(e.src)) continue;
            auto it = fully_blacklisted_at.find(e.src.id);
            if (it != fully_blacklisted_at.end() && i > it->second)
                rep.fail(i, "revocation after node " + std::to_string(e.src.id) +
                                " blacklisted every proven culprit");
        }
    }

    // (5) Views needed until the first post-GST commit (reported, not judged).
    for (size_t idx : honest_commit_idx) {
        if (trace.events[idx].time < gst) continue;
        size_t views_before = 0;
        for (const auto& [v, ei] : first_enter)
            if (enter_time[v] >= gst && ei < idx) ++views_before;
        rep.views_until_first_post_gst_commit = views_before;
        break;
    }
    return rep;
}

/// Message-step depth per committed block: 2 on the happy path (proposal,
/// votes), 3 for the client confirmation.
inline LatencyReport audit_latency(const Trace& trace) {
    LatencyReport rep;
    rep.name = "latency";
    detail::Context ctx(trace);

    std::map<std::pair<SeqNum, Digest>, std::pair<int, Tick>> proposal_send;  // by (seq, hash)
    std::map<std::pair<SeqNum, Digest>, std::pair<int, Tick>> proposal_by_payload;
    std::map<ViewNum, int> first_vc_depth, first_nv_depth, first_prop_depth;

    for (const auto& e : trace.events) {
        if (e.kind != TraceEvent::Kind::Send) continue;
        if (e.msg == MsgKind::PrePrepare) {
            proposal_send.emplace(std::pair{e.seq, e.hash}, std::pair{e.depth, e.time});
            proposal_by_payload.emplace(std::pair{e.seq, e.payload_dig},
                                        std::pair{e.depth, e.time});
            first_prop_depth.emplace(e.view, e.depth);
        } else if (e.msg == MsgKind::ViewChange) {
            first_vc_depth.emplace(e.view, e.depth);
        } else if (e.msg == MsgKind::NewView) {
            first_nv_depth.emplace(e.view, e.depth);
        }
    }

    std::map<std::pair<SeqNum, Digest>, BlockLatency> blocks;
    for (size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        if (e.kind == TraceEvent::Kind::Commit && ctx.is_honest(e.src)) {
            auto ps = proposal_send.find({e.seq, e.hash});
            if (ps == proposal_send.end()) {
                rep.fail(i, "commit of a block never sent as a proposal");
                continue;
            }
            auto& bl = blocks[{e.seq, e.hash}];
            bl.seq = e.seq;
            bl.hash = e.hash;
            bl.proposal_depth = ps->second.first;
            bl.proposal_time = ps->second.second;
            bl.commit_steps.push_back(e.depth - ps->second.first + 1);
            bl.commit_ticks.push_back(e.time - ps->second.second);
        } else if (e.kind == TraceEvent::Kind::Confirm) {
            auto ps = proposal_by_payload.end();
            // The confirm's block is whichever proposal carried the request
            // at that seq; match through any honest commit of that (seq, key).
            for (const auto& ev : trace.events) {
                if (ev.kind != TraceEvent::Kind::Commit || ev.seq != e.seq) continue;
                bool has_key = false;
                for (const auto& k : ev.payload_keys)
                    if (k.first == e.src.id && k.second == e.tstamp) has_key = true;
                if (!has_key) continue;
                ps = proposal_by_payload.find({ev.seq, ev.payload_dig});
                if (ps != proposal_by_payload.end()) break;
            }
            if (ps != proposal_by_payload.end())
                rep.confirm_steps.push_back(e.depth - ps->second.first + 1);
        }
    }
    for (auto& [key, bl] : blocks) rep.blocks.push_back(std::move(bl));

    for (const auto& [view, nv_depth] : first_nv_depth) {
        auto prop = first_prop_depth.find(view);
        if (prop != first_prop_depth.end())
            rep.view_change_overhead[view] = prop->second - nv_depth;
    }
    return rep;
}

struct CheckResult {
    SafetyReport safety;
    ClientReport client;
    LivenessReport liveness;
    LatencyReport latency;

    bool pass() const { return safety.pass && client.pass && liveness.pass && latency.pass; }
};

inline CheckResult check_all(const Trace& trace, size_t blacklist_window = 3) {
    return CheckResult{audit_safety(trace), audit_client(trace),
                       audit_liveness(trace, blacklist_window), audit_latency(trace)};
}

}  // namespace vbft::audit
