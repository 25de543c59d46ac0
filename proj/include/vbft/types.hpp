#pragma once

#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "vbft/common.hpp"
#include "vbft/crypto.hpp"

namespace vbft {

// Canonical encoding kind tags.
namespace tag {
constexpr uint8_t client_request = 1;
constexpr uint8_t block_header = 2;
constexpr uint8_t block = 3;
constexpr uint8_t vote = 4;
constexpr uint8_t quorum_cert = 5;
constexpr uint8_t view_change = 6;
constexpr uint8_t agg_qc = 7;
constexpr uint8_t new_view = 8;
constexpr uint8_t ready = 9;
constexpr uint8_t negative_response = 10;
constexpr uint8_t reply = 11;
constexpr uint8_t equivocation_proof = 12;
constexpr uint8_t invalid_seq_proof = 13;
constexpr uint8_t block_digest = 14;
constexpr uint8_t payload_digest = 15;
}  // namespace tag

/// Client id reserved for blacklisting transactions; never a real client.
constexpr ClientId kBlacklistClient = 0xffffffffu;

struct ClientRequest {
    Bytes op;
    uint64_t timestamp = 0;
    ClientId client_id = 0;
    crypto::Signature signature;

    auto operator<=>(const ClientRequest&) const = default;
    std::pair<ClientId, uint64_t> key() const { return {client_id, timestamp}; }
    bool is_blacklist_tx() const { return client_id == kBlacklistClient; }
};

struct BlockHeader {
    ViewNum view = 0;
    SeqNum seq = 0;
    Digest hash;
    Digest parent;
    NodeId proposer = 0;

    auto operator<=>(const BlockHeader&) const = default;
};

/// A block header together with its proposer's signature, as carried in
/// view-change messages (the β field) and equivocation proofs.
struct SignedHeader {
    BlockHeader header;
    crypto::Signature sig;
    auto operator<=>(const SignedHeader&) const = default;
};

struct QuorumCert {
    enum class Kind : uint8_t { BlockVote = 1, ViewChange = 2, Ready = 3, NegativeResponse = 4 };

    Kind kind = Kind::BlockVote;
    ViewNum view = 0;
    SeqNum seq = 0;
    Digest block_hash;
    Digest parent;
    std::set<NodeId> signers;
    crypto::AggregateSignature agg_sig;

    auto operator<=>(const QuorumCert&) const = default;
};

struct Block {
    BlockHeader header;
    std::optional<QuorumCert> qc_nr;
    std::vector<ClientRequest> payload;
    crypto::Signature proposer_sig;

    auto operator<=>(const Block&) const = default;
};

struct Vote {
    ViewNum view = 0;
    SeqNum seq = 0;
    Digest hash;
    Digest parent;
    NodeId voter = 0;
    crypto::Signature signature;

    auto operator<=>(const Vote&) const = default;
};

struct EquivocationProof {
    BlockHeader header_a;
    BlockHeader header_b;
    crypto::Signature sig_a;
    crypto::Signature sig_b;

    auto operator<=>(const EquivocationProof&) const = default;
    NodeId culprit() const { return header_a.proposer; }
};

struct InvalidSeqProof {
    BlockHeader header;
    crypto::Signature sig;
    SeqNum expected_seq = 0;

    auto operator<=>(const InvalidSeqProof&) const = default;
};

using MisbehaviorProof = std::variant<EquivocationProof, InvalidSeqProof>;

struct ViewChangeMsg {
    ViewNum next_view = 0;
    QuorumCert latest_qc;
    std::optional<SignedHeader> beta;
    std::optional<MisbehaviorProof> proof;
    NodeId sender = 0;
    crypto::Signature signature;

    auto operator<=>(const ViewChangeMsg&) const = default;
};

struct AggregatedQC {
    std::vector<ViewChangeMsg> view_change_msgs;
    crypto::AggregateSignature agg_sig;

    auto operator<=>(const AggregatedQC&) const = default;
};

struct NewViewMsg {
    AggregatedQC agg_qc;
    ViewNum view = 0;

    auto operator<=>(const NewViewMsg&) const = default;
};

struct ReadyMsg {
    ViewNum view = 0;
    NodeId sender = 0;
    crypto::Signature signature;

    auto operator<=>(const ReadyMsg&) const = default;
};

struct NegativeResponse {
    Digest beta_hash;
    ViewNum view = 0;
    NodeId sender = 0;
    crypto::Signature signature;

    auto operator<=>(const NegativeResponse&) const = default;
};

struct ReplyMsg {
    ClientId client_id = 0;
    uint64_t timestamp = 0;
    SeqNum seq = 0;
    NodeId replier = 0;
    crypto::Signature signature;

    auto operator<=>(const ReplyMsg&) const = default;
};

// --- canonical byte encodings (signing / digest material) ---------------
//
// A message's own trailing signature is never part of its sign bytes;
// embedded certificates and signed headers are encoded in full.

inline Bytes canonical_sign_bytes(const ClientRequest& r) {
    Encoder e(tag::client_request);
    e.bytes(r.op).u64(r.timestamp).u64(static_cast<uint64_t>(r.client_id));
    return e.take();
}

inline Bytes canonical_sign_bytes(const BlockHeader& h) {
    Encoder e(tag::block_header);
    e.u64(h.view).u64(h.seq).digest(h.hash).digest(h.parent).u64(
        static_cast<uint64_t>(h.proposer));
    return e.take();
}

inline Bytes canonical_sign_bytes(const Vote& v) {
    Encoder e(tag::vote);
    e.u64(v.view).u64(v.seq).digest(v.hash).digest(v.parent).u64(static_cast<uint64_t>(v.voter));
    return e.take();
}

inline Bytes canonical_sign_bytes(const QuorumCert& qc) {
    Encoder e(tag::quorum_cert);
    e.u64(static_cast<uint64_t>(qc.kind)).u64(qc.view).u64(qc.seq).digest(qc.block_hash).digest(
        qc.parent);
    e.count(qc.signers.size());
    for (auto id : qc.signers) e.u64(static_cast<uint64_t>(id));
    e.bytes(BytesView{qc.agg_sig.v.data(), qc.agg_sig.v.size()});
    return e.take();
}

inline Bytes canonical_sign_bytes(const EquivocationProof& p) {
    Encoder e(tag::equivocation_proof);
    e.bytes(canonical_sign_bytes(p.header_a)).bytes(BytesView{p.sig_a.v.data(), p.sig_a.v.size()});
    e.bytes(canonical_sign_bytes(p.header_b)).bytes(BytesView{p.sig_b.v.data(), p.sig_b.v.size()});
    return e.take();
}

inline Bytes canonical_sign_bytes(const InvalidSeqProof& p) {
    Encoder e(tag::invalid_seq_proof);
    e.bytes(canonical_sign_bytes(p.header)).bytes(BytesView{p.sig.v.data(), p.sig.v.size()});
    e.u64(p.expected_seq);
    return e.take();
}

inline Bytes canonical_sign_bytes(const ViewChangeMsg& vc) {
    Encoder e(tag::view_change);
    e.u64(vc.next_view);
    e.bytes(canonical_sign_bytes(vc.latest_qc));
    e.opt(vc.beta.has_value());
    if (vc.beta) {
        e.bytes(canonical_sign_bytes(vc.beta->header));
        e.bytes(BytesView{vc.beta->sig.v.data(), vc.beta->sig.v.size()});
    }
    e.opt(vc.proof.has_value());
    if (vc.proof) {
        if (const auto* eq = std::get_if<EquivocationProof>(&*vc.proof)) {
            e.u64(uint64_t{1}).bytes(canonical_sign_bytes(*eq));
        } else {
            e.u64(uint64_t{2}).bytes(canonical_sign_bytes(std::get<InvalidSeqProof>(*vc.proof)));
        }
    }
    e.u64(static_cast<uint64_t>(vc.sender));
    return e.take();
}

inline Bytes canonical_sign_bytes(const AggregatedQC& agg) {
    Encoder e(tag::agg_qc);
    e.count(agg.view_change_msgs.size());
    for (const auto& vc : agg.view_change_msgs) {
        e.bytes(canonical_sign_bytes(vc));
        e.bytes(BytesView{vc.signature.v.data(), vc.signature.v.size()});
    }
    e.bytes(BytesView{agg.agg_sig.v.data(), agg.agg_sig.v.size()});
    return e.take();
}

inline Bytes canonical_sign_bytes(const NewViewMsg& nv) {
    Encoder e(tag::new_view);
    e.u64(nv.view).bytes(canonical_sign_bytes(nv.agg_qc));
    return e.take();
}

inline Bytes canonical_sign_bytes(const ReadyMsg& r) {
    Encoder e(tag::ready);
    e.u64(r.view).u64(static_cast<uint64_t>(r.sender));
    return e.take();
}

inline Bytes canonical_sign_bytes(const NegativeResponse& nr) {
    Encoder e(tag::negative_response);
    e.digest(nr.beta_hash).u64(nr.view).u64(static_cast<uint64_t>(nr.sender));
    return e.take();
}

inline Bytes canonical_sign_bytes(const ReplyMsg& r) {
    Encoder e(tag::reply);
    e.u64(static_cast<uint64_t>(r.client_id)).u64(r.timestamp).u64(r.seq).u64(
        static_cast<uint64_t>(r.replier));
    return e.take();
}

inline Bytes canonical_sign_bytes(const Block& b) {
    Encoder e(tag::block);
    e.bytes(canonical_sign_bytes(b.header));
    e.opt(b.qc_nr.has_value());
    if (b.qc_nr) e.bytes(canonical_sign_bytes(*b.qc_nr));
    e.count(b.payload.size());
    for (const auto& r : b.payload) {
        e.bytes(canonical_sign_bytes(r));
        e.bytes(BytesView{r.signature.v.data(), r.signature.v.size()});
    }
    return e.take();
}

// --- digests and chain predicates ----------------------------------------

inline Digest payload_digest(const std::vector<ClientRequest>& payload) {
    Encoder e(tag::payload_digest);
    e.count(payload.size());
    for (const auto& r : payload) {
        e.bytes(canonical_sign_bytes(r));
        e.bytes(BytesView{r.signature.v.data(), r.signature.v.size()});
    }
    return sha256(BytesView{e.data().data(), e.data().size()});
}

/// Header hash: digest over (view, seq, parent, payload digest, qc_nr digest).
inline Digest compute_block_hash(ViewNum view, SeqNum seq, const Digest& parent,
                                 const Digest& payload_dig, const std::optional<QuorumCert>& qc_nr) {
    Digest qcd;  // zero when absent
    if (qc_nr) {
        auto b = canonical_sign_bytes(*qc_nr);
        qcd = sha256(BytesView{b.data(), b.size()});
    }
    Encoder e(tag::block_digest);
    e.u64(view).u64(seq).digest(parent).digest(payload_dig).digest(qcd);
    return sha256(BytesView{e.data().data(), e.data().size()});
}

inline Digest block_digest(const Block& b) {
    return compute_block_hash(b.header.view, b.header.seq, b.header.parent,
                              payload_digest(b.payload), b.qc_nr);
}

inline bool extends(const BlockHeader& child, const Digest& ancestor_hash) {
    return child.parent == ancestor_hash;
}

/// Build and sign a proposal. The hash is always computed here; callers
/// cannot supply one.
inline Block create_prepare_msg(ViewNum view, SeqNum seq, const Digest& parent,
                                std::optional<QuorumCert> qc_nr, std::vector<ClientRequest> cmds,
                                NodeId proposer, const crypto::Keychain& keys) {
    Block b;
    b.header.view = view;
    b.header.seq = seq;
    b.header.parent = parent;
    b.header.proposer = proposer;
    b.qc_nr = std::move(qc_nr);
    b.payload = std::move(cmds);
    b.header.hash = compute_block_hash(view, seq, parent, payload_digest(b.payload), b.qc_nr);
    auto hb = canonical_sign_bytes(b.header);
    b.proposer_sig = keys.sign_node(proposer, BytesView{hb.data(), hb.size()});
    return b;
}

inline Vote make_vote(const BlockHeader& h, NodeId voter, const crypto::Keychain& keys) {
    Vote v;
    v.view = h.view;
    v.seq = h.seq;
    v.hash = h.hash;
    v.parent = h.parent;
    v.voter = voter;
    auto vb = canonical_sign_bytes(v);
    v.signature = keys.sign_node(voter, BytesView{vb.data(), vb.size()});
    return v;
}

inline bool verify_header_sig(const SignedHeader& sh, const crypto::Keychain& keys) {
    auto hb = canonical_sign_bytes(sh.header);
    return keys.verify_node(sh.header.proposer, BytesView{hb.data(), hb.size()}, sh.sig);
}

/// Valid iff both headers name the same (view, seq, proposer), differ in
/// hash, and both carry the proposer's signature.
inline bool verify_equivocation_proof(const EquivocationProof& p, const crypto::Keychain& keys) {
    if (p.header_a.view != p.header_b.view) return false;
    if (p.header_a.seq != p.header_b.seq) return false;
    if (p.header_a.proposer != p.header_b.proposer) return false;
    if (p.header_a.hash == p.header_b.hash) return false;
    return verify_header_sig({p.header_a, p.sig_a}, keys) &&
           verify_header_sig({p.header_b, p.sig_b}, keys);
}

/// Payload shape rule: at most one blacklisting transaction, and only in
/// front position.
inline bool payload_shape_ok(const std::vector<ClientRequest>& payload) {
    for (size_t i = 0; i < payload.size(); ++i)
        if (payload[i].is_blacklist_tx() && i != 0) return false;
    return true;
}

// --- blacklisting transactions -------------------------------------------
//
// A blacklist tx is a distinguished request whose op carries the culprit id
// and the equivocation proof in a fixed binary layout. It is authenticated
// by the embedded proof, not by a client signature.

namespace detail {
inline void put_u64_raw(Bytes& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(x >> (8 * i)));
}
inline bool get_u64_raw(const Bytes& in, size_t& pos, uint64_t& x) {
    if (pos + 8 > in.size()) return false;
    x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
    pos += 8;
    return true;
}
inline void put_arr_raw(Bytes& out, const std::array<uint8_t, 32>& a) {
    out.insert(out.end(), a.begin(), a.end());
}
inline bool get_arr_raw(const Bytes& in, size_t& pos, std::array<uint8_t, 32>& a) {
    if (pos + 32 > in.size()) return false;
    std::copy(in.begin() + pos, in.begin() + pos + 32, a.begin());
    pos += 32;
    return true;
}
inline void put_header_raw(Bytes& out, const BlockHeader& h) {
    put_u64_raw(out, h.view);
    put_u64_raw(out, h.seq);
    put_arr_raw(out, h.hash.v);
    put_arr_raw(out, h.parent.v);
    put_u64_raw(out, h.proposer);
}
inline bool get_header_raw(const Bytes& in, size_t& pos, BlockHeader& h) {
    uint64_t prop = 0;
    if (!get_u64_raw(in, pos, h.view) || !get_u64_raw(in, pos, h.seq) ||
        !get_arr_raw(in, pos, h.hash.v) || !get_arr_raw(in, pos, h.parent.v) ||
        !get_u64_raw(in, pos, prop))
        return false;
    h.proposer = static_cast<NodeId>(prop);
    return true;
}
}  // namespace detail

constexpr uint8_t kBlacklistOpTag = 0xb1;

inline ClientRequest make_blacklist_tx(NodeId culprit, const EquivocationProof& proof) {
    ClientRequest r;
    r.client_id = kBlacklistClient;
    r.timestamp = culprit;  // one blacklist tx per culprit, ever
    r.op.push_back(kBlacklistOpTag);
    detail::put_u64_raw(r.op, culprit);
    detail::put_header_raw(r.op, proof.header_a);
    detail::put_arr_raw(r.op, proof.sig_a.v);
    detail::put_header_raw(r.op, proof.header_b);
    detail::put_arr_raw(r.op, proof.sig_b.v);
    return r;
}

inline std::optional<std::pair<NodeId, EquivocationProof>> parse_blacklist_tx(
    const ClientRequest& r) {
    if (!r.is_blacklist_tx() || r.op.empty() || r.op[0] != kBlacklistOpTag) return std::nullopt;
    size_t pos = 1;
    uint64_t culprit = 0;
    EquivocationProof p;
    if (!detail::get_u64_raw(r.op, pos, culprit) || !detail::get_header_raw(r.op, pos, p.header_a) ||
        !detail::get_arr_raw(r.op, pos, p.sig_a.v) || !detail::get_header_raw(r.op, pos, p.header_b) ||
        !detail::get_arr_raw(r.op, pos, p.sig_b.v) || pos != r.op.size())
        return std::nullopt;
    if (r.timestamp != culprit) return std::nullopt;
    return std::make_pair(static_cast<NodeId>(culprit), p);
}

}  // namespace vbft
