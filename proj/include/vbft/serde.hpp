#pragma once

#include <json.hpp>

#include "vbft/types.hpp"

// JSON encodings for every protocol type. Digests and signatures are
// lowercase hex; field names match the protocol type declarations.

namespace vbft {

using nlohmann::json;

namespace serde_detail {
inline std::string bytes_to_hex(const Bytes& b) {
    static const char* d = "0123456789abcdef";
    std::string out;
    out.reserve(b.size() * 2);
    for (auto x : b) {
        out.push_back(d[x >> 4]);
        out.push_back(d[x & 0xf]);
    }
    return out;
}

inline Bytes hex_to_bytes(const std::string& s) {
    if (s.size() % 2) throw json::other_error::create(501, "odd hex length", nullptr);
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw json::other_error::create(501, "bad hex digit", nullptr);
    };
    Bytes out(s.size() / 2);
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<uint8_t>((nib(s[2 * i]) << 4) | nib(s[2 * i + 1]));
    return out;
}

template <typename A>
std::string arr_to_hex(const A& a) {
    Digest d;
    d.v = a;
    return d.hex();
}

template <typename A>
void hex_to_arr(const std::string& s, A& a) {
    auto d = Digest::from_hex(s);
    if (!d) throw json::other_error::create(501, "bad 32-byte hex", nullptr);
    a = d->v;
}
}  // namespace serde_detail

inline void to_json(json& j, const Digest& d) { j = d.hex(); }
inline void from_json(const json& j, Digest& d) {
    serde_detail::hex_to_arr(j.get<std::string>(), d.v);
}

namespace crypto {
inline void to_json(json& j, const Signature& s) { j = serde_detail::arr_to_hex(s.v); }
inline void from_json(const json& j, Signature& s) {
    serde_detail::hex_to_arr(j.get<std::string>(), s.v);
}
inline void to_json(json& j, const AggregateSignature& s) { j = serde_detail::arr_to_hex(s.v); }
inline void from_json(const json& j, AggregateSignature& s) {
    serde_detail::hex_to_arr(j.get<std::string>(), s.v);
}
}  // namespace crypto

inline void to_json(json& j, const ClientRequest& r) {
    j = json{{"op", serde_detail::bytes_to_hex(r.op)},
             {"timestamp", r.timestamp},
             {"client_id", r.client_id},
             {"signature", r.signature}};
}
inline void from_json(const json& j, ClientRequest& r) {
    r.op = serde_detail::hex_to_bytes(j.at("op").get<std::string>());
    j.at("timestamp").get_to(r.timestamp);
    j.at("client_id").get_to(r.client_id);
    j.at("signature").get_to(r.signature);
}

inline void to_json(json& j, const BlockHeader& h) {
    j = json{{"view", h.view},
             {"seq", h.seq},
             {"hash", h.hash},
             {"parent", h.parent},
             {"proposer", h.proposer}};
}
inline void from_json(const json& j, BlockHeader& h) {
    j.at("view").get_to(h.view);
    j.at("seq").get_to(h.seq);
    j.at("hash").get_to(h.hash);
    j.at("parent").get_to(h.parent);
    j.at("proposer").get_to(h.proposer);
}

inline void to_json(json& j, const SignedHeader& sh) {
    j = json{{"header", sh.header}, {"sig", sh.sig}};
}
inline void from_json(const json& j, SignedHeader& sh) {
    j.at("header").get_to(sh.header);
    j.at("sig").get_to(sh.sig);
}

inline void to_json(json& j, const QuorumCert& qc) {
    j = json{{"kind", static_cast<int>(qc.kind)},
             {"view", qc.view},
             {"seq", qc.seq},
             {"block_hash", qc.block_hash},
             {"parent", qc.parent},
             {"signers", qc.signers},
             {"agg_sig", qc.agg_sig}};
}
inline void from_json(const json& j, QuorumCert& qc) {
    qc.kind = static_cast<QuorumCert::Kind>(j.at("kind").get<int>());
    j.at("view").get_to(qc.view);
    j.at("seq").get_to(qc.seq);
    j.at("block_hash").get_to(qc.block_hash);
    j.at("parent").get_to(qc.parent);
    qc.signers = j.at("signers").get<std::set<NodeId>>();
    j.at("agg_sig").get_to(qc.agg_sig);
}

inline void to_json(json& j, const Block& b) {
    j = json{{"header", b.header},
             {"payload", b.payload},
             {"proposer_sig", b.proposer_sig}};
    if (b.qc_nr) j["qc_nr"] = *b.qc_nr;
}
inline void from_json(const json& j, Block& b) {
    j.at("header").get_to(b.header);
    b.payload = j.at("payload").get<std::vector<ClientRequest>>();
    j.at("proposer_sig").get_to(b.proposer_sig);
    b.qc_nr.reset();
    if (j.contains("qc_nr")) b.qc_nr = j.at("qc_nr").get<QuorumCert>();
}

inline void to_json(json& j, const Vote& v) {
    j = json{{"view", v.view},
             {"seq", v.seq},
             {"hash", v.hash},
             {"parent", v.parent},
             {"voter", v.voter},
             {"signature", v.signature}};
}
inline void from_json(const json& j, Vote& v) {
    j.at("view").get_to(v.view);
    j.at("seq").get_to(v.seq);
    j.at("hash").get_to(v.hash);
    j.at("parent").get_to(v.parent);
    j.at("voter").get_to(v.voter);
    j.at("signature").get_to(v.signature);
}

inline void to_json(json& j, const EquivocationProof& p) {
    j = json{{"header_a", p.header_a},
             {"header_b", p.header_b},
             {"sig_a", p.sig_a},
             {"sig_b", p.sig_b}};
}
inline void from_json(const json& j, EquivocationProof& p) {
    j.at("header_a").get_to(p.header_a);
    j.at("header_b").get_to(p.header_b);
    j.at("sig_a").get_to(p.sig_a);
    j.at("sig_b").get_to(p.sig_b);
}

inline void to_json(json& j, const InvalidSeqProof& p) {
    j = json{{"header", p.header}, {"sig", p.sig}, {"expected_seq", p.expected_seq}};
}
inline void from_json(const json& j, InvalidSeqProof& p) {
    j.at("header").get_to(p.header);
    j.at("sig").get_to(p.sig);
    j.at("expected_seq").get_to(p.expected_seq);
}

inline void to_json(json& j, const MisbehaviorProof& p) {
    if (const auto* eq = std::get_if<EquivocationProof>(&p))
        j = json{{"type", "equivocation"}, {"proof", *eq}};
    else
        j = json{{"type", "invalid_seq"}, {"proof", std::get<InvalidSeqProof>(p)}};
}
inline void from_json(const json& j, MisbehaviorProof& p) {
    auto t = j.at("type").get<std::string>();
    if (t == "equivocation")
        p = j.at("proof").get<EquivocationProof>();
    else if (t == "invalid_seq")
        p = j.at("proof").get<InvalidSeqProof>();
    else
        throw json::other_error::create(501, "unknown proof type", nullptr);
}

inline void to_json(json& j, const ViewChangeMsg& vc) {
    j = json{{"next_view", vc.next_view},
             {"latest_qc", vc.latest_qc},
             {"sender", vc.sender},
             {"signature", vc.signature}};
    if (vc.beta) j["beta"] = *vc.beta;
    if (vc.proof) j["proof"] = *vc.proof;
}
inline void from_json(const json& j, ViewChangeMsg& vc) {
    j.at("next_view").get_to(vc.next_view);
    j.at("latest_qc").get_to(vc.latest_qc);
    j.at("sender").get_to(vc.sender);
    j.at("signature").get_to(vc.signature);
    vc.beta.reset();
    vc.proof.reset();
    if (j.contains("beta")) vc.beta = j.at("beta").get<SignedHeader>();
    if (j.contains("proof")) vc.proof = j.at("proof").get<MisbehaviorProof>();
}

inline void to_json(json& j, const AggregatedQC& a) {
    j = json{{"view_change_msgs", a.view_change_msgs}, {"agg_sig", a.agg_sig}};
}
inline void from_json(const json& j, AggregatedQC& a) {
    a.view_change_msgs = j.at("view_change_msgs").get<std::vector<ViewChangeMsg>>();
    j.at("agg_sig").get_to(a.agg_sig);
}

inline void to_json(json& j, const NewViewMsg& nv) {
    j = json{{"agg_qc", nv.agg_qc}, {"view", nv.view}};
}
inline void from_json(const json& j, NewViewMsg& nv) {
    j.at("agg_qc").get_to(nv.agg_qc);
    j.at("view").get_to(nv.view);
}

inline void to_json(json& j, const ReadyMsg& r) {
    j = json{{"view", r.view}, {"sender", r.sender}, {"signature", r.signature}};
}
inline void from_json(const json& j, ReadyMsg& r) {
    j.at("view").get_to(r.view);
    j.at("sender").get_to(r.sender);
    j.at("signature").get_to(r.signature);
}

inline void to_json(json& j, const NegativeResponse& nr) {
    j = json{{"beta_hash", nr.beta_hash},
             {"view", nr.view},
             {"sender", nr.sender},
             {"signature", nr.signature}};
}
inline void from_json(const json& j, NegativeResponse& nr) {
    j.at("beta_hash").get_to(nr.beta_hash);
    j.at("view").get_to(nr.view);
    j.at("sender").get_to(nr.sender);
    j.at("signature").get_to(nr.signature);
}

inline void to_json(json& j, const ReplyMsg& r) {
    j = json{{"client_id", r.client_id},
             {"timestamp", r.timestamp},
             {"seq", r.seq},
             {"replier", r.replier},
             {"signature", r.signature}};
}
inline void from_json(const json& j, ReplyMsg& r) {
    j.at("client_id").get_to(r.client_id);
    j.at("timestamp").get_to(r.timestamp);
    j.at("seq").get_to(r.seq);
    j.at("replier").get_to(r.replier);
    j.at("signature").get_to(r.signature);
}

}  // namespace vbft
