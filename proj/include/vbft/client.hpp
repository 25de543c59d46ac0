#pragma once

#include <memory>

#include "vbft/messages.hpp"

namespace vbft {

/// Closed-loop client: submits to the believed primary, confirms on 2f+1
/// distinct matching replies, rebroadcasts to everyone on timeout, and
/// submits the next request once the previous one confirmed.
class Client {
  public:
    Client(ClientId id, uint32_t n, uint32_t quorum,
           std::shared_ptr<const crypto::Keychain> keys, uint32_t total_requests,
           Tick reply_timeout, NodeId believed_primary = 0)
        : id_(id),
          n_(n),
          quorum_(quorum),
          keys_(std::move(keys)),
          total_requests_(total_requests),
          reply_timeout_(reply_timeout),
          believed_primary_(believed_primary) {}

    Effects on_start(Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        if (total_requests_ > 0) submit_next();
        fx_ = nullptr;
        return fx;
    }

    Effects on_message(Address, const Message& msg, Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        if (const auto* rep = std::get_if<ReplyMsg>(&msg)) on_reply(*rep);
        fx_ = nullptr;
        return fx;
    }

    Effects on_timer(uint64_t t, Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        on_client_timeout(t);
        fx_ = nullptr;
        return fx;
    }

    // -- observers -------------------------------------------------------
    ClientId id() const { return id_; }
    uint64_t submitted() const { return next_t_ - 1; }
    const std::map<uint64_t, SeqNum>& confirmed() const { return confirmed_; }
    bool all_confirmed() const {
        return next_t_ > total_requests_ && confirmed_.size() == total_requests_;
    }

  private:
    struct Inflight {
        ClientRequest req;
        std::map<SeqNum, std::set<NodeId>> repliers_by_seq;
        bool confirmed = false;
    };

    void emit(Effect e) { fx_->push_back(std::move(e)); }
    void trace(TraceEvent e) {
        e.time = now_;
        emit(TraceEffect{std::move(e)});
    }

    void submit_next() {
        uint64_t t = next_t_++;
        ClientRequest r;
        std::string op = "put c" + std::to_string(id_) + " t" + std::to_string(t);
        r.op.assign(op.begin(), op.end());
        r.timestamp = t;
        r.client_id = id_;
        auto cb = canonical_sign_bytes(r);
        r.signature = keys_->sign_client(id_, BytesView{cb.data(), cb.size()});
        inflight_[t] = Inflight{r, {}, false};

        emit(unicast(Address::node(believed_primary_), r));
        TraceEvent e;
        e.kind = TraceEvent::Kind::Submit;
        e.src = Address::client(id_);
        e.tstamp = t;
        trace(e);
        emit(ArmTimerEffect{t, reply_timeout_});
    }

    void on_reply(const ReplyMsg& rep) {
        if (rep.client_id != id_) return;
        auto it = inflight_.find(rep.timestamp);
        if (it == inflight_.end() || it->second.confirmed) return;
        if (!keys_->verify_node(rep.replier, as_view(canonical_sign_bytes(rep)), rep.signature))
            return;
        auto& repliers = it->second.repliers_by_seq[rep.seq];
        if (!repliers.insert(rep.replier).second) return;
        if (repliers.size() < quorum_) return;

        it->second.confirmed = true;
        confirmed_[rep.timestamp] = rep.seq;
        TraceEvent e;
        e.kind = TraceEvent::Kind::Confirm;
        e.src = Address::client(id_);
        e.tstamp = rep.timestamp;
        e.seq = rep.seq;
        trace(e);
        if (next_t_ <= total_requests_) submit_next();
    }

    void on_client_timeout(uint64_t t) {
        auto it = inflight_.find(t);
        if (it == inflight_.end() || it->second.confirmed) return;
        for (NodeId i = 0; i < n_; ++i) emit(unicast(Address::node(i), it->second.req));
        emit(ArmTimerEffect{t, reply_timeout_});
    }

    static BytesView as_view(const Bytes& b) { return BytesView{b.data(), b.size()}; }

    ClientId id_;
    uint32_t n_;
    uint32_t quorum_;
    std::shared_ptr<const crypto::Keychain> keys_;
    uint32_t total_requests_;
    Tick reply_timeout_;
    NodeId believed_primary_;

    uint64_t next_t_ = 1;
    std::map<uint64_t, Inflight> inflight_;
    std::map<uint64_t, SeqNum> confirmed_;

    Tick now_ = 0;
    Effects* fx_ = nullptr;
};

}  // namespace vbft
