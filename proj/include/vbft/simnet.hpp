#pragma once

#include <queue>
#include <random>

#include "vbft/client.hpp"
#include "vbft/replica.hpp"

namespace vbft {

/// Partial-synchrony delay model: before GST deliveries are delayed
/// arbitrarily (bounded by gst+delta) and may drop outright; from GST on
/// every delivery lands in exactly delta ticks.
struct NetModel {
    Tick gst = 0;
    Tick delta = 10;
    Tick pre_min = 1;
    Tick pre_max = 50;
    uint32_t drop_pct = 10;
};

/// One seeded simulated run: replicas, clients, the message schedule and
/// the global trace.
class World {
  public:
    World(const Scenario& sc, uint64_t seed) : sc_(sc), rng_(seed) {
        net_.gst = sc.gst;
        net_.delta = sc.delta;
        net_.pre_min = 1;
        net_.pre_max = 5 * sc.delta;
        net_.drop_pct = 10;

        cfg_ = std::move(Config::make(sc.n, sc.f, sc.gst, sc.timeout_initial)).value();
        keys_ = std::make_shared<crypto::Keychain>(seed, sc.n, sc.clients);
        auto [genesis, genesis_qc] = certs::make_genesis(sc.n, *keys_);

        trace_.header.scenario = sc;
        trace_.header.seed = seed;
        trace_.header.scenario_digest = scenario_digest(sc);

        for (NodeId i = 0; i < sc.n; ++i)
            replicas_.push_back(std::make_unique<Replica>(i, cfg_, keys_, genesis, genesis_qc,
                                                          sc.batch_size));
        const Tick client_timeout = 10 * sc.delta;
        for (ClientId c = 0; c < sc.clients; ++c)
            clients_.push_back(std::make_unique<Client>(c, sc.n, cfg_.quorum, keys_,
                                                        sc.requests_per_client, client_timeout));

        for (NodeId i = 0; i < sc.n; ++i)
            consume_effects(Address::node(i), replicas_[i]->on_start(0), 0);
        for (ClientId c = 0; c < sc.clients; ++c)
            push_event({Tick(1 + c), next_event_no_++, Address::client(c), Start{}});
    }

    struct StopSpec {
        std::optional<SeqNum> height;     // all honest replicas at or above
        std::optional<Tick> time_limit;
        size_t max_events = 1'000'000;
    };

    enum class RunOutcome { ReachedStop, Quiescent, EventCap };

    RunOutcome run_until(const StopSpec& stop) {
        size_t processed = 0;
        while (true) {
            if (stop.height && height_reached(*stop.height)) return RunOutcome::ReachedStop;
            if (queue_.empty()) return RunOutcome::Quiescent;
            if (stop.time_limit && queue_.top().time > *stop.time_limit)
                return RunOutcome::ReachedStop;
            if (processed >= stop.max_events) {
                trace_.truncated = true;
                return RunOutcome::EventCap;
            }
            step();
            ++processed;
        }
    }

    /// Process the single least (time, seq_no) event.
    bool step() {
        if (queue_.empty()) return false;
        Event ev = queue_.top();
        queue_.pop();
        now_ = ev.time;
        std::visit([&](const auto& payload) { this->dispatch(ev, payload); }, ev.payload);
        return true;
    }

    // -- observers -----------------------------------------------------------
    Tick now() const { return now_; }
    const Trace& trace() const { return trace_; }
    Trace take_trace() { return std::move(trace_); }
    Replica& replica(NodeId i) { return *replicas_[i]; }
    Client& client(ClientId c) { return *clients_[c]; }
    const Scenario& scenario() const { return sc_; }
    const crypto::Keychain& keys() const { return *keys_; }

    bool height_reached(SeqNum h) const {
        for (NodeId i = 0; i < sc_.n; ++i) {
            if (sc_.is_byzantine(i)) continue;
            if (replicas_[i]->cur_seq() < h) return false;
        }
        return true;
    }

  private:
    struct Delivery {
        Address src;
        Message msg;
        int depth = 0;
    };
    struct TimerFire {
        uint64_t id = 0;
    };
    struct Start {};
    struct DeferredSend {
        SendEffect send;
        int depth = 0;
    };

    struct Event {
        Tick time = 0;
        uint64_t seq_no = 0;
        Address dst;
        std::variant<Delivery, TimerFire, Start, DeferredSend> payload;
    };

    struct EventOrder {
        bool operator()(const Event& a, const Event& b) const {
            return std::tie(a.time, a.seq_no) > std::tie(b.time, b.seq_no);
        }
    };

    void push_event(Event e) { queue_.push(std::move(e)); }

    /// Crash takes hold the first time the node would act at or after at_time.
    bool crashed(Address a) {
        if (!a.is_node()) return false;
        if (dead_.count(a.id)) return true;
        const AdversaryEntry* entry = sc_.entry_of(a.id);
        if (entry && entry->behavior == Behavior::Crash && now_ >= entry->at_time) {
            dead_.insert(a.id);
            return true;
        }
        return false;
    }

    void dispatch(const Event& ev, const Delivery& d) {
        if (crashed(ev.dst)) return;
        TraceEvent rec;
        rec.kind = TraceEvent::Kind::Deliver;
        rec.time = now_;
        rec.src = d.src;
        rec.dst = ev.dst;
        rec.msg = kind_of(d.msg);
        rec.depth = d.depth;
        trace_.events.push_back(rec);
        Effects fx = ev.dst.is_node()
                         ? replicas_[ev.dst.id]->on_message(d.src, d.msg, now_)
                         : clients_[ev.dst.id]->on_message(d.src, d.msg, now_);
        consume_effects(ev.dst, std::move(fx), d.depth);
    }

    void dispatch(const Event& ev, const TimerFire& t) {
        if (crashed(ev.dst)) return;
        Effects fx = ev.dst.is_node() ? replicas_[ev.dst.id]->on_timer(t.id, now_)
                                      : clients_[ev.dst.id]->on_timer(t.id, now_);
        consume_effects(ev.dst, std::move(fx), 0);
    }

    void dispatch(const Event& ev, const Start&) {
        Effects fx = clients_[ev.dst.id]->on_start(now_);
        consume_effects(ev.dst, std::move(fx), 0);
    }

    void dispatch(const Event& ev, const DeferredSend& d) {
        if (crashed(ev.dst)) return;
        route_send(ev.dst, d.send, d.depth);
    }

    void consume_effects(Address self, Effects fx, int ctx_depth) {
        if (self.is_node()) fx = adversary_transform(self.id, std::move(fx), ctx_depth);
        for (auto& effect : fx) {
            if (auto* send = std::get_if<SendEffect>(&effect)) {
                route_send(self, *send, ctx_depth + 1);
            } else if (auto* arm = std::get_if<ArmTimerEffect>(&effect)) {
                push_event({now_ + arm->after, next_event_no_++, self, TimerFire{arm->id}});
            } else if (auto* tr = std::get_if<TraceEffect>(&effect)) {
                TraceEvent e = tr->event;
                if (e.kind == TraceEvent::Kind::Commit || e.kind == TraceEvent::Kind::Confirm)
                    e.depth = ctx_depth;
                trace_.events.push_back(std::move(e));
            }
        }
    }

    void route_send(Address src, const SendEffect& send, int depth) {
        if (send.scope == SendEffect::Scope::AllNodes) {
            for (NodeId i = 0; i < sc_.n; ++i)
                schedule_delivery(src, Address::node(i), send.msg, depth, send.extra_delay);
        } else {
            schedule_delivery(src, send.dst, send.msg, depth, send.extra_delay);
        }
    }

    void schedule_delivery(Address src, Address dst, const Message& msg, int depth,
                           Tick extra_delay) {
        TraceEvent rec;
        rec.kind = TraceEvent::Kind::Send;
        rec.time = now_;
        rec.src = src;
        rec.dst = dst;
        rec.msg = kind_of(msg);
        rec.depth = depth;
        if (const auto* p = std::get_if<Proposal>(&msg)) {
            rec.view = p->block.header.view;
            rec.seq = p->block.header.seq;
            rec.hash = p->block.header.hash;
            rec.payload_dig = payload_digest(p->block.payload);
            if (p->block.qc_nr) {
                rec.has_qc_nr = true;
                rec.qc_nr_target = p->block.qc_nr->block_hash;
            }
        } else if (const auto* vc = std::get_if<ViewChangeMsg>(&msg)) {
            rec.view = vc->next_view;
        } else if (const auto* nv = std::get_if<NewViewMsg>(&msg)) {
            rec.view = nv->view;
        }
        trace_.events.push_back(rec);

        // Fixed draw order keeps the schedule a pure function of the seed.
        uint64_t drop_roll = rng_() % 100;
        uint64_t jitter = net_.pre_max > net_.pre_min
                              ? rng_() % static_cast<uint64_t>(net_.pre_max - net_.pre_min + 1)
                              : 0;
        Tick deliver_at;
        if (now_ < net_.gst) {
            if (drop_roll < net_.drop_pct) return;  // dropped outright
            deliver_at = now_ + net_.pre_min + static_cast<Tick>(jitter);
            if (deliver_at > net_.gst + net_.delta) deliver_at = net_.gst + net_.delta;
        } else {
            deliver_at = now_ + net_.delta;
        }
        deliver_at += extra_delay;
        push_event({deliver_at, next_event_no_++, dst, Delivery{src, msg, depth}});
    }

    // -- Byzantine behaviors -----------------------------------------------
    Effects adversary_transform(NodeId node, Effects fx, int ctx_depth) {
        const AdversaryEntry* entry = sc_.entry_of(node);
        if (!entry || entry->behavior == Behavior::Honest) return fx;
        if (entry->behavior == Behavior::Crash) {
            if (crashed(Address::node(node))) return {};
            return fx;
        }

        Effects out;
        for (auto& effect : fx) {
            auto* send = std::get_if<SendEffect>(&effect);
            if (!send) {
                out.push_back(std::move(effect));
                continue;
            }
            switch (entry->behavior) {
                case Behavior::SilentPrimary:
                    // Withholds its proposals (keeping only its own copy) and
                    // never shares stored blocks, so β payloads it alone holds
                    // stay unrecoverable.
                    if (kind_of(send->msg) == MsgKind::PrePrepare) {
                        out.push_back(unicast(Address::node(node), send->msg));
                    } else if (kind_of(send->msg) != MsgKind::PayloadResponse) {
                        out.push_back(std::move(effect));
                    }
                    break;
                case Behavior::Equivocate:
                    if (kind_of(send->msg) == MsgKind::PrePrepare &&
                        send->scope == SendEffect::Scope::AllNodes) {
                        equivocate(node, std::get<Proposal>(send->msg).block, entry->fork_count,
                                   out);
                    } else {
                        out.push_back(std::move(effect));
                    }
                    break;
                case Behavior::InvalidSeq:
                    if (kind_of(send->msg) == MsgKind::PrePrepare) {
                        const Block& b = std::get<Proposal>(send->msg).block;
                        Block bumped = create_prepare_msg(b.header.view, b.header.seq + 2,
                                                          b.header.parent, b.qc_nr, b.payload,
                                                          node, *keys_);
                        SendEffect e = *send;
                        e.msg = Proposal{bumped};
                        out.push_back(std::move(e));
                    } else {
                        out.push_back(std::move(effect));
                    }
                    break;
                case Behavior::DelayVotes:
                    if (kind_of(send->msg) == MsgKind::Vote) {
                        push_event({now_ + 5 * net_.delta, next_event_no_++, Address::node(node),
                                    DeferredSend{*send, ctx_depth + 1}});
                    } else {
                        out.push_back(std::move(effect));
                    }
                    break;
                default:
                    out.push_back(std::move(effect));
                    break;
            }
        }
        return out;
    }

    /// Split the proposal into fork_count variants (payload truncated by one
    /// request per variant) and send each to a disjoint slice of the peers.
    void equivocate(NodeId node, const Block& original, uint32_t fork_count, Effects& out) {
        if (original.payload.empty()) {
            out.push_back(broadcast_nodes(Proposal{original}));
            return;
        }
        uint32_t forks = std::min<uint32_t>(fork_count, original.payload.size() + 1);
        std::vector<Block> variants;
        variants.push_back(original);
        for (uint32_t j = 1; j < forks; ++j) {
            std::vector<ClientRequest> payload(original.payload.begin(),
                                               original.payload.end() - j);
            variants.push_back(create_prepare_msg(original.header.view, original.header.seq,
                                                  original.header.parent, original.qc_nr,
                                                  std::move(payload), node, *keys_));
        }
        std::vector<NodeId> others;
        for (NodeId i = 0; i < sc_.n; ++i)
            if (i != node) others.push_back(i);
        size_t per = (others.size() + variants.size() - 1) / variants.size();
        for (size_t i = 0; i < others.size(); ++i) {
            const Block& v = variants[std::min(i / per, variants.size() - 1)];
            out.push_back(unicast(Address::node(others[i]), Proposal{v}));
        }
        out.push_back(unicast(Address::node(node), Proposal{variants[0]}));
    }

    Scenario sc_;
    Config cfg_;
    NetModel net_;
    std::shared_ptr<const crypto::Keychain> keys_;
    std::vector<std::unique_ptr<Replica>> replicas_;
    std::vector<std::unique_ptr<Client>> clients_;
    std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
    std::mt19937_64 rng_;
    std::set<NodeId> dead_;
    Trace trace_;
    Tick now_ = 0;
    uint64_t next_event_no_ = 0;
};

}  // namespace vbft
