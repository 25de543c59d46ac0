#pragma once

#include <deque>
#include <random>

#include "vbft/vbft.hpp"

namespace vbft::test {

inline std::shared_ptr<const crypto::Keychain> make_keys(uint64_t seed = 7, uint32_t n = 4,
                                                         uint32_t clients = 4) {
    return std::make_shared<crypto::Keychain>(seed, n, clients);
}

inline ClientRequest make_request(const crypto::Keychain& keys, ClientId c, uint64_t t) {
    ClientRequest r;
    std::string op = "put c" + std::to_string(c) + " t" + std::to_string(t);
    r.op.assign(op.begin(), op.end());
    r.timestamp = t;
    r.client_id = c;
    auto cb = canonical_sign_bytes(r);
    r.signature = keys.sign_client(c, BytesView{cb.data(), cb.size()});
    return r;
}

inline std::vector<Vote> votes_for(const Block& b, const std::vector<NodeId>& voters,
                                   const crypto::Keychain& keys) {
    std::vector<Vote> out;
    for (NodeId v : voters) out.push_back(make_vote(b.header, v, keys));
    return out;
}

inline ViewChangeMsg make_vc(ViewNum next_view, const QuorumCert& latest,
                             std::optional<SignedHeader> beta, NodeId sender,
                             const crypto::Keychain& keys) {
    ViewChangeMsg vc;
    vc.next_view = next_view;
    vc.latest_qc = latest;
    vc.beta = std::move(beta);
    vc.sender = sender;
    auto vb = canonical_sign_bytes(vc);
    vc.signature = keys.sign_node(sender, BytesView{vb.data(), vb.size()});
    return vc;
}

/// Synchronous FIFO message pump over a set of replicas; no delays, no drops.
/// Timer arms are recorded but fire only when the test says so.
struct MiniNet {
    std::vector<std::unique_ptr<Replica>> nodes;
    std::deque<std::pair<Address, std::pair<Address, Message>>> inbox;  // (dst, (src, msg))
    std::vector<TraceEvent> events;
    std::map<NodeId, uint64_t> armed;  // node -> latest timer generation
    std::vector<std::pair<Address, Message>> client_outbox;  // messages to clients
    Tick now = 0;

    MiniNet(uint32_t n, uint32_t f, std::shared_ptr<const crypto::Keychain> keys,
            uint32_t batch_size = 16) {
        auto cfg = std::move(Config::make(n, f, 0, 100)).value();
        auto [genesis, qc] = certs::make_genesis(n, *keys);
        for (NodeId i = 0; i < n; ++i)
            nodes.push_back(std::make_unique<Replica>(i, cfg, keys, genesis, qc, batch_size));
    }

    void consume(NodeId from, Effects fx) {
        for (auto& e : fx) {
            if (auto* s = std::get_if<SendEffect>(&e)) {
                if (s->scope == SendEffect::Scope::AllNodes) {
                    for (size_t i = 0; i < nodes.size(); ++i)
                        inbox.push_back({Address::node(i), {Address::node(from), s->msg}});
                } else if (s->dst.is_node()) {
                    inbox.push_back({s->dst, {Address::node(from), s->msg}});
                } else {
                    client_outbox.push_back({s->dst, s->msg});
                }
            } else if (auto* t = std::get_if<ArmTimerEffect>(&e)) {
                armed[from] = t->id;
            } else if (auto* tr = std::get_if<TraceEffect>(&e)) {
                events.push_back(tr->event);
            }
        }
    }

    void deliver(NodeId dst, NodeId src, Message m) {
        consume(dst, nodes[dst]->on_message(Address::node(src), std::move(m), ++now));
    }

    void deliver_from_client(NodeId dst, ClientId src, Message m) {
        consume(dst, nodes[dst]->on_message(Address::client(src), std::move(m), ++now));
    }

    void fire_timer(NodeId node) {
        auto it = armed.find(node);
        if (it == armed.end()) return;
        consume(node, nodes[node]->on_timer(it->second, ++now));
    }

    /// Pump queued messages until quiescent (or the step cap trips).
    size_t run(size_t max_steps = 100000) {
        size_t steps = 0;
        while (!inbox.empty() && steps < max_steps) {
            auto [dst, src_msg] = inbox.front();
            inbox.pop_front();
            consume(dst.id, nodes[dst.id]->on_message(src_msg.first, src_msg.second, ++now));
            ++steps;
        }
        return steps;
    }

    size_t count_events(TraceEvent::Kind k) const {
        size_t c = 0;
        for (const auto& e : events)
            if (e.kind == k) ++c;
        return c;
    }
};

/// Drive a 4-node MiniNet to the given height with client requests.
inline void grow_chain(MiniNet& net, const crypto::Keychain& keys, SeqNum height,
                       ClientId client = 0) {
    for (SeqNum s = net.nodes[0]->cur_seq() + 1; s <= height; ++s) {
        NodeId p = primary_of(net.nodes[0]->cur_view(), 4, net.nodes[0]->blacklist());
        net.deliver_from_client(p, client, make_request(keys, client, s));
        net.run();
    }
}

}  // namespace vbft::test
