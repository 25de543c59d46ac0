#pragma once

#include <algorithm>

#include "vbft/types.hpp"

namespace vbft::certs {

using crypto::Keychain;

/// Aggregate ≥ 2f+1 matching votes into a block QC.
inline Expected<QuorumCert> generate_qc(const std::vector<Vote>& votes, uint32_t quorum,
                                        const Keychain& keys) {
    if (votes.size() < quorum) return Error::TooFew;
    const Vote& first = votes.front();
    std::set<NodeId> voters;
    std::vector<crypto::SignedPart> parts;
    parts.reserve(votes.size());
    for (const auto& v : votes) {
        if (v.view != first.view || v.seq != first.seq || v.hash != first.hash ||
            v.parent != first.parent)
            return Error::MixedVotes;
        if (!voters.insert(v.voter).second) return Error::DuplicateVoter;
        parts.push_back({canonical_sign_bytes(v), v.signature, v.voter});
    }
    auto agg = keys.aggregate(parts, quorum);
    if (!agg) return agg.error() == Error::DuplicateSigner ? Error::DuplicateVoter : agg.error();
    QuorumCert qc;
    qc.kind = QuorumCert::Kind::BlockVote;
    qc.view = first.view;
    qc.seq = first.seq;
    qc.block_hash = first.hash;
    qc.parent = first.parent;
    qc.signers = std::move(voters);
    qc.agg_sig = *agg;
    return qc;
}

inline Expected<QuorumCert> generate_qc_nr(const std::vector<NegativeResponse>& nrs,
                                           uint32_t quorum, const Keychain& keys) {
    if (nrs.size() < quorum) return Error::TooFew;
    const NegativeResponse& first = nrs.front();
    std::set<NodeId> senders;
    std::vector<crypto::SignedPart> parts;
    for (const auto& nr : nrs) {
        if (nr.beta_hash != first.beta_hash || nr.view != first.view) return Error::Mixed;
        if (!senders.insert(nr.sender).second) return Error::DuplicateSender;
        parts.push_back({canonical_sign_bytes(nr), nr.signature, nr.sender});
    }
    auto agg = keys.aggregate(parts, quorum);
    if (!agg) return agg.error() == Error::DuplicateSigner ? Error::DuplicateSender : agg.error();
    QuorumCert qc;
    qc.kind = QuorumCert::Kind::NegativeResponse;
    qc.view = first.view;
    qc.seq = 0;
    qc.block_hash = first.beta_hash;
    qc.signers = std::move(senders);
    qc.agg_sig = *agg;
    return qc;
}

inline Expected<QuorumCert> generate_qc_ready(const std::vector<ReadyMsg>& readies,
                                              uint32_t quorum, const Keychain& keys) {
    if (readies.size() < quorum) return Error::TooFew;
    const ReadyMsg& first = readies.front();
    std::set<NodeId> senders;
    std::vector<crypto::SignedPart> parts;
    for (const auto& r : readies) {
        if (r.view != first.view) return Error::Mixed;
        if (!senders.insert(r.sender).second) return Error::DuplicateSender;
        parts.push_back({canonical_sign_bytes(r), r.signature, r.sender});
    }
    auto agg = keys.aggregate(parts, quorum);
    if (!agg) return agg.error() == Error::DuplicateSigner ? Error::DuplicateSender : agg.error();
    QuorumCert qc;
    qc.kind = QuorumCert::Kind::Ready;
    qc.view = first.view;
    qc.seq = 0;
    qc.signers = std::move(senders);
    qc.agg_sig = *agg;
    return qc;
}

/// Re-verify a certificate from its carried tuple: rebuild each signer's
/// message and check the aggregate against it.
inline bool verify_qc(const QuorumCert& qc, uint32_t quorum, const Keychain& keys) {
    if (qc.signers.size() < quorum) return false;
    std::vector<std::pair<Bytes, uint32_t>> msgs;
    msgs.reserve(qc.signers.size());
    for (NodeId id : qc.signers) {
        switch (qc.kind) {
            case QuorumCert::Kind::BlockVote: {
                Vote v;
                v.view = qc.view;
                v.seq = qc.seq;
                v.hash = qc.block_hash;
                v.parent = qc.parent;
                v.voter = id;
                msgs.emplace_back(canonical_sign_bytes(v), id);
                break;
            }
            case QuorumCert::Kind::Ready: {
                ReadyMsg r;
                r.view = qc.view;
                r.sender = id;
                msgs.emplace_back(canonical_sign_bytes(r), id);
                break;
            }
            case QuorumCert::Kind::NegativeResponse: {
                NegativeResponse nr;
                nr.beta_hash = qc.block_hash;
                nr.view = qc.view;
                nr.sender = id;
                msgs.emplace_back(canonical_sign_bytes(nr), id);
                break;
            }
            case QuorumCert::Kind::ViewChange:
                return false;  // view changes travel as AggregatedQC
        }
    }
    return keys.verify_aggregate(qc.agg_sig, msgs);
}

/// Aggregate exactly 2f+1 view-change messages for one next_view.
inline Expected<AggregatedQC> create_agg_qc(const std::vector<ViewChangeMsg>& vcs, uint32_t quorum,
                                            const Keychain& keys) {
    if (vcs.size() < quorum) return Error::TooFew;
    if (vcs.size() > quorum) return Error::MalformedAggQC;
    std::set<NodeId> senders;
    std::vector<crypto::SignedPart> parts;
    for (const auto& vc : vcs) {
        if (vc.next_view != vcs.front().next_view) return Error::MixedView;
        if (!senders.insert(vc.sender).second) return Error::DuplicateSender;
        parts.push_back({canonical_sign_bytes(vc), vc.signature, vc.sender});
    }
    auto agg = keys.aggregate(parts, quorum);
    if (!agg) return agg.error() == Error::DuplicateSigner ? Error::DuplicateSender : agg.error();
    AggregatedQC out;
    out.view_change_msgs = vcs;
    out.agg_sig = *agg;
    return out;
}

struct HighQcBetas {
    QuorumCert high_qc;
    std::vector<SignedHeader> betas;  // ascending header hash
};

/// Extract the highest embedded commit QC and the candidate β headers at
/// its next sequence. Ties on seq resolve to the higher view: after a
/// revocation era two QCs at one height can certify different blocks, and
/// the later view is the surviving one.
inline HighQcBetas high_qc_and_betas(const AggregatedQC& agg) {
    HighQcBetas out;
    bool have = false;
    for (const auto& vc : agg.view_change_msgs) {
        const auto& qc = vc.latest_qc;
        if (!have || qc.seq > out.high_qc.seq ||
            (qc.seq == out.high_qc.seq && qc.view > out.high_qc.view)) {
            out.high_qc = qc;
            have = true;
        }
    }
    for (const auto& vc : agg.view_change_msgs) {
        if (!vc.beta) continue;
        if (vc.beta->header.seq != out.high_qc.seq + 1) continue;
        bool dup = false;
        for (const auto& b : out.betas)
            if (b.header.hash == vc.beta->header.hash) dup = true;
        if (!dup) out.betas.push_back(*vc.beta);
    }
    std::sort(out.betas.begin(), out.betas.end(),
              [](const SignedHeader& a, const SignedHeader& b) {
                  return a.header.hash < b.header.hash;
              });
    return out;
}

inline Expected<NewViewMsg> create_new_view(AggregatedQC agg, ViewNum next_view) {
    for (const auto& vc : agg.view_change_msgs) {
        if (vc.next_view != next_view) return Error::MixedView;
        if (vc.latest_qc.view >= next_view) return Error::MalformedAggQC;
    }
    NewViewMsg nv;
    nv.agg_qc = std::move(agg);
    nv.view = next_view;
    return nv;
}

}  // namespace vbft::certs

namespace vbft::crypto {

namespace detail {
inline bool new_view_shape_ok(const NewViewMsg& nv, uint32_t quorum) {
    if (nv.agg_qc.view_change_msgs.size() != quorum) return false;
    std::set<NodeId> senders;
    for (const auto& vc : nv.agg_qc.view_change_msgs) {
        if (vc.next_view != nv.view) return false;
        if (vc.latest_qc.view >= nv.view) return false;
        if (!senders.insert(vc.sender).second) return false;
    }
    return true;
}

inline const QuorumCert& highest_embedded_qc(const NewViewMsg& nv) {
    const QuorumCert* best = &nv.agg_qc.view_change_msgs.front().latest_qc;
    for (const auto& vc : nv.agg_qc.view_change_msgs) {
        const auto& qc = vc.latest_qc;
        if (qc.seq > best->seq || (qc.seq == best->seq && qc.view > best->view)) best = &qc;
    }
    return *best;
}

inline bool verify_outer_aggregate(const NewViewMsg& nv, const Keychain& keys) {
    std::vector<std::pair<Bytes, uint32_t>> msgs;
    msgs.reserve(nv.agg_qc.view_change_msgs.size());
    for (const auto& vc : nv.agg_qc.view_change_msgs)
        msgs.emplace_back(canonical_sign_bytes(vc), vc.sender);
    return keys.verify_aggregate(nv.agg_qc.agg_sig, msgs);
}
}  // namespace detail

/// Linear-cost NEW-VIEW check: the aggregate over the 2f+1 view-change
/// messages plus the single highest embedded QC. The remaining 2f embedded
/// QCs are deliberately not checked.
inline bool verify_new_view_fast(const NewViewMsg& nv, uint32_t quorum, const Keychain& keys) {
    if (!detail::new_view_shape_ok(nv, quorum)) return false;
    if (!detail::verify_outer_aggregate(nv, keys)) return false;
    return certs::verify_qc(detail::highest_embedded_qc(nv), quorum, keys);
}

/// Quadratic-cost reference check: also verifies every embedded QC.
inline bool verify_new_view_full(const NewViewMsg& nv, uint32_t quorum, const Keychain& keys) {
    if (!detail::new_view_shape_ok(nv, quorum)) return false;
    if (!detail::verify_outer_aggregate(nv, keys)) return false;
    for (const auto& vc : nv.agg_qc.view_change_msgs)
        if (!certs::verify_qc(vc.latest_qc, quorum, keys)) return false;
    return true;
}

}  // namespace vbft::crypto

namespace vbft::certs {

/// Fixed genesis: seq 0, zero parent, certified by all n nodes so highQC is
/// defined from the start.
inline std::pair<Block, QuorumCert> make_genesis(uint32_t n, const Keychain& keys) {
    Block g = create_prepare_msg(0, 0, Digest{}, std::nullopt, {}, 0, keys);
    std::vector<Vote> votes;
    votes.reserve(n);
    for (NodeId i = 0; i < n; ++i) votes.push_back(make_vote(g.header, i, keys));
    auto qc = generate_qc(votes, n, keys);
    return {g, std::move(qc).value()};
}

}  // namespace vbft::certs
