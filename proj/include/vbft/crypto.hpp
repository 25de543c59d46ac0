#pragma once

#include <algorithm>
#include <map>
#include <set>

#include "vbft/common.hpp"

namespace vbft::crypto {

/// Simulated signature backend. A signature is the keyed MAC
/// H(secret || message); an aggregate is the hash of the component tags
/// sorted by signer id, so it is order-insensitive but binds the exact
/// (message, signer) set. Verification goes through the Keychain, which
/// stands in for the PKI: it can recompute any node's tag but hands the
/// signing secret only to its owner. A pairing-based scheme can be dropped
/// in behind the same calls.

struct Signature {
    std::array<uint8_t, 32> v{};
    auto operator<=>(const Signature&) const = default;
    bool empty() const {
        for (auto b : v)
            if (b) return false;
        return true;
    }
    std::string hex() const {
        Digest d;
        d.v = v;
        return d.hex();
    }
};

struct AggregateSignature {
    std::array<uint8_t, 32> v{};
    auto operator<=>(const AggregateSignature&) const = default;
    std::string hex() const {
        Digest d;
        d.v = v;
        return d.hex();
    }
};

struct Secret {
    std::array<uint8_t, 32> v{};
};

struct PublicKey {
    std::array<uint8_t, 32> v{};
    auto operator<=>(const PublicKey&) const = default;
};

struct KeyPair {
    uint32_t id = 0;
    Secret secret;
    PublicKey pub;
};

inline Signature sign(const Secret& sk, BytesView msg) {
    Encoder e(0x51);
    e.bytes(BytesView{sk.v.data(), sk.v.size()});
    e.bytes(msg);
    Signature s;
    s.v = sha256(BytesView{e.data().data(), e.data().size()}).v;
    return s;
}

/// One component of an aggregate: the message it signs and who signed it.
struct SignedPart {
    Bytes msg;
    Signature sig;
    uint32_t signer = 0;
};

/// Key registry for one simulated network. Node and client key spaces are
/// disjoint; all keys derive deterministically from the world seed.
class Keychain {
  public:
    Keychain() = default;

    Keychain(uint64_t seed, uint32_t num_nodes, uint32_t num_clients) {
        for (uint32_t i = 0; i < num_nodes; ++i) add('N', i, seed);
        for (uint32_t c = 0; c < num_clients; ++c) add('C', c, seed);
    }

    const KeyPair& node_key(NodeId id) const { return keys_.at({'N', id}); }
    const KeyPair& client_key(ClientId id) const { return keys_.at({'C', id}); }

    Signature sign_node(NodeId id, BytesView msg) const { return sign(node_key(id).secret, msg); }
    Signature sign_client(ClientId id, BytesView msg) const {
        return sign(client_key(id).secret, msg);
    }

    bool verify_node(NodeId id, BytesView msg, const Signature& sig) const {
        auto it = keys_.find({'N', id});
        return it != keys_.end() && sign(it->second.secret, msg) == sig;
    }
    bool verify_client(ClientId id, BytesView msg, const Signature& sig) const {
        auto it = keys_.find({'C', id});
        return it != keys_.end() && sign(it->second.secret, msg) == sig;
    }

    bool has_node(NodeId id) const { return keys_.count({'N', id}) > 0; }

    /// Aggregate 2f+1..n component signatures from distinct signers.
    Expected<AggregateSignature> aggregate(const std::vector<SignedPart>& parts,
                                           uint32_t quorum) const {
        if (parts.size() < quorum) return Error::TooFew;
        std::set<uint32_t> seen;
        for (const auto& p : parts) {
            if (!seen.insert(p.signer).second) return Error::DuplicateSigner;
            if (!verify_node(p.signer, BytesView{p.msg.data(), p.msg.size()}, p.sig))
                return Error::BadComponentSignature;
        }
        return combine(parts);
    }

    /// True iff `agg` was built from exactly these (message, signer) pairs.
    bool verify_aggregate(const AggregateSignature& agg,
                          const std::vector<std::pair<Bytes, uint32_t>>& msgs_and_signers) const {
        std::vector<SignedPart> parts;
        parts.reserve(msgs_and_signers.size());
        std::set<uint32_t> seen;
        for (const auto& [msg, signer] : msgs_and_signers) {
            if (!seen.insert(signer).second) return false;
            auto it = keys_.find({'N', signer});
            if (it == keys_.end()) return false;
            parts.push_back({msg, sign(it->second.secret, BytesView{msg.data(), msg.size()}),
                             signer});
        }
        return combine(parts) == agg;
    }

  private:
    void add(char kind, uint32_t id, uint64_t seed) {
        Encoder e(0x4b);
        e.u64(seed).u64(static_cast<uint64_t>(kind)).u64(static_cast<uint64_t>(id));
        KeyPair kp;
        kp.id = id;
        kp.secret.v = sha256(BytesView{e.data().data(), e.data().size()}).v;
        Encoder p(0x50);
        p.bytes(BytesView{kp.secret.v.data(), kp.secret.v.size()});
        kp.pub.v = sha256(BytesView{p.data().data(), p.data().size()}).v;
        keys_.emplace(std::pair<char, uint32_t>{kind, id}, kp);
    }

    static AggregateSignature combine(std::vector<SignedPart> parts) {
        std::sort(parts.begin(), parts.end(),
                  [](const SignedPart& a, const SignedPart& b) { return a.signer < b.signer; });
        Encoder e(0x41);
        e.count(parts.size());
        for (const auto& p : parts) {
            e.u64(static_cast<uint64_t>(p.signer));
            e.bytes(BytesView{p.sig.v.data(), p.sig.v.size()});
        }
        AggregateSignature agg;
        agg.v = sha256(BytesView{e.data().data(), e.data().size()}).v;
        return agg;
    }

    std::map<std::pair<char, uint32_t>, KeyPair> keys_;
};

}  // namespace vbft::crypto
