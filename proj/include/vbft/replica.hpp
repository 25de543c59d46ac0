#pragma once

#include <cassert>
#include <memory>

#include "vbft/certificates.hpp"
#include "vbft/messages.hpp"

namespace vbft {

/// Round-robin leader rotation over the non-blacklisted ids, ascending.
inline NodeId primary_of(ViewNum view, uint32_t n, const std::set<NodeId>& blacklist) {
    std::vector<NodeId> candidates;
    candidates.reserve(n);
    for (NodeId i = 0; i < n; ++i)
        if (!blacklist.count(i)) candidates.push_back(i);
    assert(!candidates.empty());
    return candidates[view % candidates.size()];
}

enum class Phase : uint8_t { Normal, ViewChanging, AwaitingReady };

struct SafetyDecision {
    enum class What : uint8_t { Accept, NeedSync, Reject } what = What::Reject;
    enum class Reason : uint8_t {
        None,
        BadSig,
        WrongProposer,
        Blacklisted,
        Equivocation,
        MissingQcNr,
        BadPayload,
        Stale,
        WrongView,
        AlreadyVoted,
    } reason = Reason::None;
    std::optional<EquivocationProof> proof;

    bool accepted() const { return what == What::Accept; }
};

/// One VBFT replica as a deterministic event machine: feed it deliveries and
/// timer fires, collect sends, timer arms and trace records.
class Replica {
  public:
    Replica(NodeId id, Config cfg, std::shared_ptr<const crypto::Keychain> keys,
            const Block& genesis, const QuorumCert& genesis_qc, uint32_t batch_size = 16)
        : id_(id), cfg_(cfg), keys_(std::move(keys)), batch_size_(batch_size) {
        chain_[0] = {genesis, genesis_qc};
        chain_index_[genesis.header.hash] = 0;
        high_qc_ = genesis_qc;
        view_base_ = genesis_qc;
        timeout_current_ = cfg_.timeout_initial;
    }

    Effects on_message(Address src, const Message& msg, Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        std::visit([&](const auto& m) { this->handle(src, m); }, msg);
        settle_timer();
        fx_ = nullptr;
        return fx;
    }

    Effects on_timer(uint64_t gen, Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        handle_timeout(gen);
        settle_timer();
        fx_ = nullptr;
        return fx;
    }

    /// Emitted once at world start so traces carry the initial view.
    Effects on_start(Tick now) {
        Effects fx;
        fx_ = &fx;
        now_ = now;
        TraceEvent e;
        e.kind = TraceEvent::Kind::ViewEnter;
        e.src = Address::node(id_);
        e.view = cur_view_;
        trace(e);
        fx_ = nullptr;
        return fx;
    }

    // -- observers -----------------------------------------------------
    NodeId id() const { return id_; }
    ViewNum cur_view() const { return cur_view_; }
    SeqNum cur_seq() const { return cur_seq_; }
    const QuorumCert& high_qc() const { return high_qc_; }
    Phase phase() const { return phase_; }
    Tick timeout_current() const { return timeout_current_; }
    const std::set<NodeId>& blacklist() const { return blacklist_; }
    const std::map<std::pair<ClientId, uint64_t>, Bytes>& app_state() const { return kv_; }
    const Block* chain_block(SeqNum s) const {
        auto it = chain_.find(s);
        return it == chain_.end() ? nullptr : &it->second.block;
    }
    const QuorumCert* chain_qc(SeqNum s) const {
        auto it = chain_.find(s);
        return it == chain_.end() ? nullptr : &it->second.qc;
    }
    bool is_primary_now() const { return primary() == id_; }
    size_t mempool_size() const { return mempool_.size(); }
    ViewNum last_vc_view() const { return last_vc_view_; }

    /// Test hook: run the safety predicate without side effects.
    SafetyDecision check_proposal(const Block& b) const { return safety_check(b); }

    /// Test hook: revocation with effects discarded.
    Expected<bool> try_revoke(SeqNum from_seq) {
        if (from_seq == 0 || from_seq > cur_seq_ || !chain_.count(from_seq))
            return Error::CannotRevoke;
        Effects fx;
        fx_ = &fx;
        revoke_suffix(from_seq);
        fx_ = nullptr;
        return true;
    }

  private:
    // -- plumbing ------------------------------------------------------
    void emit(Effect e) { fx_->push_back(std::move(e)); }
    void trace(TraceEvent e) {
        e.time = now_;
        emit(TraceEffect{std::move(e)});
    }
    void send(NodeId dst, Message m) { emit(unicast(Address::node(dst), std::move(m))); }
    void send_client(ClientId dst, Message m) {
        emit(unicast(Address::client(dst), std::move(m)));
    }
    void broadcast(Message m) { emit(broadcast_nodes(std::move(m))); }

    NodeId primary() const { return primary_of(cur_view_, cfg_.n, blacklist_); }

    bool verify_node_sig(NodeId id, const Bytes& msg, const crypto::Signature& sig) const {
        return keys_->verify_node(id, BytesView{msg.data(), msg.size()}, sig);
    }

    bool has_pending_work() const {
        if (!outstanding_.empty()) return true;
        if (last_voted_uncommitted_) return true;
        if (!stored_proofs_.empty()) return true;
        if (phase_ != Phase::Normal) return true;
        if (recovery_ && !recovery_->resolved) return true;
        return false;
    }

    void arm_timer() {
        ++timer_gen_;
        timer_armed_ = true;
        emit(ArmTimerEffect{timer_gen_, timeout_current_});
    }

    void cancel_timer() {
        ++timer_gen_;
        timer_armed_ = false;
    }

    /// Progress resets the backoff and the epoch timer.
    void restart_timer_fresh() {
        timeout_current_ = cfg_.timeout_initial;
        if (has_pending_work())
            arm_timer();
        else
            cancel_timer();
    }

    /// Arm if work appeared while idle; called at the end of every event.
    void settle_timer() {
        if (!timer_armed_ && has_pending_work()) arm_timer();
    }

    // -- dispatch --------------------------------------------------------
    void handle(Address src, const ClientRequest& r) { handle_client_request(src, r); }
    void handle(Address src, const Proposal& p) { handle_proposal(src, p.block); }
    void handle(Address, const Vote& v) { handle_vote(v); }
    void handle(Address, const ViewChangeMsg& vc) { handle_view_change_msg(vc); }
    void handle(Address src, const NewViewMsg& nv) { handle_new_view(src, nv); }
    void handle(Address, const ReadyMsg& r) { handle_ready(r); }
    void handle(Address, const ReadyQCMsg& qc) { handle_ready_qc(qc); }
    void handle(Address, const PayloadRequest& pr) { handle_payload_request(pr); }
    void handle(Address, const PayloadResponseBlock& pb) { handle_payload_response(pb); }
    void handle(Address, const NegativeResponse& nr) { handle_negative_response(nr); }
    void handle(Address, const ReplyMsg&) {}  // replicas ignore replies
    void handle(Address, const ProofMsg& pm) { handle_proof_msg(pm); }
    void handle(Address src, const SyncRequest& sr) { handle_sync_request(src, sr); }
    void handle(Address, const SyncResponse& resp) { handle_sync_response(resp); }

    // -- client requests -------------------------------------------------
    void handle_client_request(Address src, const ClientRequest& r) {
        if (r.is_blacklist_tx()) return;  // only proposals carry these
        auto cb = canonical_sign_bytes(r);
        if (!keys_->verify_client(r.client_id, BytesView{cb.data(), cb.size()}, r.signature))
            return;
        auto key = r.key();
        if (auto it = committed_requests_.find(key); it != committed_requests_.end()) {
            send_reply(r.client_id, r.timestamp, it->second);
            return;
        }
        outstanding_.emplace(key, r);
        if (primary() == id_) {
            enqueue(r);
            maybe_propose();
        } else if (!src.is_node()) {
            send(primary(), r);
        }
    }

    void enqueue(const ClientRequest& r) {
        auto key = r.key();
        if (committed_requests_.count(key) || mempool_keys_.count(key)) return;
        mempool_.push_back(r);
        mempool_keys_.insert(key);
    }

    void send_reply(ClientId client, uint64_t t, SeqNum seq) {
        ReplyMsg rep;
        rep.client_id = client;
        rep.timestamp = t;
        rep.seq = seq;
        rep.replier = id_;
        auto rb = canonical_sign_bytes(rep);
        rep.signature = keys_->sign_node(id_, BytesView{rb.data(), rb.size()});
        send_client(client, rep);
        TraceEvent e;
        e.kind = TraceEvent::Kind::Reply;
        e.src = Address::node(id_);
        e.dst = Address::client(client);
        e.tstamp = t;
        e.seq = seq;
        trace(e);
    }

    // -- proposals -------------------------------------------------------
    bool matches_candidate(const Block& b, const SignedHeader& cand) const {
        if (b.header.seq != cand.header.seq) return false;
        // The re-proposal extends the view's certified base. The candidate's
        // own parent pointer may name a superseded header of that same base
        // block, so payload identity is proven by recomputing the candidate
        // hash from its original fields plus the offered payload.
        if (b.header.parent != view_base_.block_hash) return false;
        return compute_block_hash(cand.header.view, cand.header.seq, cand.header.parent,
                                  payload_digest(b.payload), b.qc_nr) == cand.header.hash;
    }

    bool qc_nr_covers_candidate(const QuorumCert& qc) const {
        if (qc.kind != QuorumCert::Kind::NegativeResponse) return false;
        if (qc.view != cur_view_) return false;
        if (qc.signers.size() < cfg_.quorum) return false;
        bool names_candidate = false;
        for (const auto& c : candidates_)
            if (c.header.hash == qc.block_hash) names_candidate = true;
        return names_candidate && certs::verify_qc(qc, cfg_.quorum, *keys_);
    }

    bool payload_blacklist_ok(const Block& b) const {
        if (!payload_shape_ok(b.payload)) return false;
        for (const auto& r : b.payload) {
            if (!r.is_blacklist_tx()) continue;
            auto parsed = parse_blacklist_tx(r);
            if (!parsed) return false;
            if (!verify_equivocation_proof(parsed->second, *keys_)) return false;
        }
        return true;
    }

    SafetyDecision safety_check(const Block& b) const {
        using W = SafetyDecision::What;
        using R = SafetyDecision::Reason;
        SafetyDecision d;
        if (b.header.view != cur_view_ || phase_ == Phase::ViewChanging) {
            d.reason = b.header.view > cur_view_ ? R::WrongView : R::Stale;
            return d;
        }
        if (blacklist_.count(b.header.proposer)) {
            d.reason = R::Blacklisted;
            return d;
        }
        if (b.header.proposer != primary()) {
            d.reason = R::WrongProposer;
            return d;
        }
        if (block_digest(b) != b.header.hash) {
            d.reason = R::BadSig;
            return d;
        }
        auto hb = canonical_sign_bytes(b.header);
        if (!verify_node_sig(b.header.proposer, hb, b.proposer_sig)) {
            d.reason = R::BadSig;
            return d;
        }
        if (!payload_blacklist_ok(b)) {
            d.reason = R::BadPayload;
            return d;
        }
        if (auto it = voted_.find({b.header.view, b.header.seq}); it != voted_.end()) {
            if (it->second.header.hash == b.header.hash) {
                d.reason = R::AlreadyVoted;  // replay; the vote lock holds
                return d;
            }
            d.reason = R::Equivocation;
            EquivocationProof p;
            p.header_a = it->second.header;
            p.sig_a = it->second.sig;
            p.header_b = b.header;
            p.sig_b = b.proposer_sig;
            d.proof = p;
            return d;
        }

        if (first_proposal_pending_) {
            if (!candidates_.empty()) {
                for (const auto& c : candidates_)
                    if (matches_candidate(b, c)) {
                        d.what = W::Accept;  // re-proposal of a recovered β
                        return d;
                    }
                if (b.qc_nr && qc_nr_covers_candidate(*b.qc_nr) &&
                    b.header.seq == view_base_.seq + 1 &&
                    extends(b.header, view_base_.block_hash)) {
                    d.what = W::Accept;  // β proven uncommitted
                    return d;
                }
                if (b.header.seq > view_base_.seq + 1) {
                    d.what = W::NeedSync;
                    return d;
                }
                d.reason = R::MissingQcNr;
                return d;
            }
            if (b.qc_nr) {
                d.reason = R::MissingQcNr;  // unjustified qc_nr
                return d;
            }
            if (b.header.seq == view_base_.seq + 1 && extends(b.header, view_base_.block_hash) &&
                b.header.seq > cur_seq_) {
                d.what = W::Accept;
                return d;
            }
            if (b.header.seq > view_base_.seq + 1) {
                d.what = W::NeedSync;
                return d;
            }
            d.reason = R::Stale;
            return d;
        }

        if (b.qc_nr) {
            d.reason = R::MissingQcNr;  // qc_nr is first-proposal-only
            return d;
        }
        if (b.header.seq == high_qc_.seq + 1 && extends(b.header, high_qc_.block_hash) &&
            b.header.seq > cur_seq_) {
            d.what = W::Accept;
            return d;
        }
        if (b.header.seq > high_qc_.seq + 1) {
            d.what = W::NeedSync;
            return d;
        }
        d.reason = R::Stale;
        return d;
    }

    void handle_proposal(Address, const Block& b) {
        auto d = safety_check(b);
        switch (d.what) {
            case SafetyDecision::What::Accept: {
                first_proposal_pending_ = false;
                SignedHeader sh{b.header, b.proposer_sig};
                voted_.emplace(std::pair{b.header.view, b.header.seq}, sh);
                voted_store_[b.header.hash] = b;
                if (!last_voted_uncommitted_ ||
                    b.header.seq >= last_voted_uncommitted_->header.seq)
                    last_voted_uncommitted_ = sh;
                broadcast(make_vote(b.header, id_, *keys_));
                try_commit(b.header.hash);
                break;
            }
            case SafetyDecision::What::NeedSync: {
                if (proposal_stash_.size() < 4) proposal_stash_[b.header.hash] = b;
                SyncRequest sr;
                sr.from_seq = cur_seq_ + 1;
                sr.to_seq = b.header.seq - 1;
                sr.requester = id_;
                broadcast(sr);
                break;
            }
            case SafetyDecision::What::Reject:
                if (d.reason == SafetyDecision::Reason::Equivocation && d.proof) {
                    accept_proof(*d.proof, true);
                    start_view_change(std::max(cur_view_, last_vc_view_) + 1);
                } else if (d.reason == SafetyDecision::Reason::MissingQcNr) {
                    start_view_change(std::max(cur_view_, last_vc_view_) + 1);
                }
                break;
        }
    }

    // -- votes and commits -------------------------------------------------
    void handle_vote(const Vote& v) {
        if (v.seq > cur_seq_ + 4) return;  // bounded out-of-order buffer
        if (v.seq + 2 < cur_seq_) return;  // long-stale
        if (auto it = chain_.find(v.seq);
            it != chain_.end() && it->second.block.header.hash == v.hash)
            return;  // already committed this very block
        if (!verify_node_sig(v.voter, canonical_sign_bytes(v), v.signature)) return;
        pending_votes_[v.hash].emplace(v.voter, v);
        try_commit(v.hash);
    }

    const Block* find_block(const Digest& hash) const {
        if (auto it = voted_store_.find(hash); it != voted_store_.end()) return &it->second;
        if (auto it = chain_index_.find(hash); it != chain_index_.end()) {
            auto ct = chain_.find(it->second);
            if (ct != chain_.end() && ct->second.block.header.hash == hash)
                return &ct->second.block;
        }
        return nullptr;
    }

    void try_commit(const Digest& hash) {
        auto pv = pending_votes_.find(hash);
        if (pv == pending_votes_.end() || pv->second.size() < cfg_.quorum) return;
        const Block* b = find_block(hash);
        if (!b) return;
        std::vector<Vote> matching;
        for (const auto& [voter, v] : pv->second)
            if (v.view == b->header.view && v.seq == b->header.seq && v.parent == b->header.parent)
                matching.push_back(v);
        if (matching.size() < cfg_.quorum) return;
        matching.resize(cfg_.quorum);
        auto qc = certs::generate_qc(matching, cfg_.quorum, *keys_);
        if (!qc.ok()) return;
        commit_certified(*b, *qc);
    }

    /// Certificate-driven commit with conflict resolution: at one height the
    /// higher-view certificate wins; equal payloads swap headers, different
    /// payloads revoke the suffix first.
    void commit_certified(const Block& b, const QuorumCert& qc) {
        const SeqNum s = b.header.seq;
        if (qc.kind != QuorumCert::Kind::BlockVote) return;
        if (qc.block_hash != b.header.hash || qc.seq != s) return;
        // A certified block conflicting with our own vote at the same
        // (view, seq) proves the proposer equivocated.
        if (auto it = voted_.find({b.header.view, s});
            it != voted_.end() && it->second.header.hash != b.header.hash) {
            EquivocationProof p{it->second.header, b.header, it->second.sig, b.proposer_sig};
            if (verify_equivocation_proof(p, *keys_)) accept_proof(p, true);
        }
        if (auto it = chain_.find(s); it != chain_.end()) {
            if (it->second.block.header.hash == b.header.hash) return;  // idempotent
            if (qc.view <= it->second.qc.view) return;                  // stale certificate
            if (payload_digest(it->second.block.payload) == payload_digest(b.payload)) {
                it->second.block = b;
                it->second.qc = qc;
                chain_index_[b.header.hash] = s;
                if (s >= high_qc_.seq) high_qc_ = qc;
                emit_commit_event(b, qc);
                after_commit(s);
                return;
            }
            revoke_suffix(s);
        }
        if (s != cur_seq_ + 1) return;  // gap: wait for sync
        if (b.header.parent != chain_.at(cur_seq_).block.header.hash) return;

        apply_block(b, qc);
        emit_commit_event(b, qc);

        for (const auto& r : b.payload) {
            if (r.is_blacklist_tx()) continue;
            send_reply(r.client_id, r.timestamp, s);
        }
        if (last_voted_uncommitted_ && last_voted_uncommitted_->header.seq <= cur_seq_)
            last_voted_uncommitted_.reset();
        std::erase_if(pending_votes_, [&](const auto& kv) {
            const auto& votes = kv.second;
            return !votes.empty() && votes.begin()->second.seq < s;
        });
        after_commit(s);
    }

    void after_commit(SeqNum s) {
        if (last_proposed_ && last_proposed_->first <= s) last_proposed_.reset();
        restart_timer_fresh();
        maybe_propose();
        try_next_buffered();
    }

    void apply_block(const Block& b, const QuorumCert& qc) {
        const SeqNum s = b.header.seq;
        UndoRec undo;
        for (const auto& r : b.payload) {
            auto key = r.key();
            if (r.is_blacklist_tx()) {
                auto parsed = parse_blacklist_tx(r);
                if (parsed && !blacklist_.count(parsed->first) &&
                    verify_equivocation_proof(parsed->second, *keys_)) {
                    blacklist_.insert(parsed->first);
                    stored_proofs_.erase(parsed->first);
                    TraceEvent e;
                    e.kind = TraceEvent::Kind::Blacklist;
                    e.src = Address::node(id_);
                    e.culprit = parsed->first;
                    e.view = qc.view;
                    e.seq = s;
                    trace(e);
                }
                if (!committed_requests_.count(key)) {
                    undo.committed_added.push_back(key);
                    committed_requests_[key] = s;
                }
                continue;
            }
            auto old = kv_.find(key);
            undo.before.emplace_back(
                key, old == kv_.end() ? std::nullopt : std::optional<Bytes>(old->second));
            kv_[key] = r.op;
            if (!committed_requests_.count(key)) {
                undo.committed_added.push_back(key);
                committed_requests_[key] = s;
            }
            outstanding_.erase(key);
            if (mempool_keys_.erase(key))
                std::erase_if(mempool_, [&](const ClientRequest& m) { return m.key() == key; });
        }
        undo_[s] = std::move(undo);
        chain_[s] = {b, qc};
        chain_index_[b.header.hash] = s;
        cur_seq_ = s;
        if (s >= high_qc_.seq) high_qc_ = qc;
    }

    void emit_commit_event(const Block& b, const QuorumCert& qc) {
        TraceEvent e;
        e.kind = TraceEvent::Kind::Commit;
        e.src = Address::node(id_);
        e.view = qc.view;
        e.seq = b.header.seq;
        e.hash = b.header.hash;
        e.proposer = b.header.proposer;
        e.payload_dig = payload_digest(b.payload);
        for (const auto& r : b.payload) e.payload_keys.push_back(r.key());
        e.qc = qc;
        trace(e);
    }

    /// Undo committed state from cur_seq down to from_seq inclusive.
    void revoke_suffix(SeqNum from_seq) {
        assert(from_seq >= 1 && from_seq <= cur_seq_);
        for (SeqNum s = cur_seq_; s >= from_seq; --s) {
            auto& entry = chain_.at(s);
            TraceEvent e;
            e.kind = TraceEvent::Kind::Revoke;
            e.src = Address::node(id_);
            e.seq = s;
            e.hash = entry.block.header.hash;
            e.payload_dig = payload_digest(entry.block.payload);
            trace(e);

            auto& undo = undo_.at(s);
            for (auto it = undo.before.rbegin(); it != undo.before.rend(); ++it) {
                if (it->second)
                    kv_[it->first] = *it->second;
                else
                    kv_.erase(it->first);
            }
            for (const auto& key : undo.committed_added) committed_requests_.erase(key);
            // Revoked requests are unserved again; keep them for re-proposal.
            for (const auto& r : entry.block.payload)
                if (!r.is_blacklist_tx()) outstanding_.emplace(r.key(), r);
            undo_.erase(s);
            chain_index_.erase(entry.block.header.hash);
            chain_.erase(s);
        }
        cur_seq_ = from_seq - 1;
        high_qc_ = chain_.at(cur_seq_).qc;
    }

    void try_next_buffered() {
        // A commit or sync may have unblocked a stashed proposal or buffered votes.
        for (auto it = proposal_stash_.begin(); it != proposal_stash_.end();) {
            if (it->second.header.seq <= cur_seq_) {
                it = proposal_stash_.erase(it);
                continue;
            }
            if (it->second.header.seq == high_qc_.seq + 1 && it->second.header.view == cur_view_) {
                Block b = it->second;
                proposal_stash_.erase(it);
                handle_proposal(Address::node(b.header.proposer), b);
                return;
            }
            ++it;
        }
        for (const auto& [hash, votes] : pending_votes_) {
            if (!votes.empty() && votes.begin()->second.seq == cur_seq_ + 1 &&
                votes.size() >= cfg_.quorum) {
                try_commit(hash);
                return;
            }
        }
    }

    // -- proposing ---------------------------------------------------------
    std::vector<ClientRequest> next_batch(size_t reserve_front) {
        std::vector<ClientRequest> batch;
        size_t room = batch_size_ > reserve_front ? batch_size_ - reserve_front : 0;
        while (!mempool_.empty() && batch.size() < room) {
            ClientRequest r = mempool_.front();
            mempool_.erase(mempool_.begin());
            mempool_keys_.erase(r.key());
            if (committed_requests_.count(r.key())) continue;
            batch.push_back(std::move(r));
        }
        return batch;
    }

    void maybe_propose() {
        if (primary() != id_ || phase_ != Phase::Normal) return;
        if (last_proposed_ && last_proposed_->first > cur_seq_) return;  // in flight
        if (recovery_ && !recovery_->resolved) return;

        if (first_proposal_pending_ && recovery_ && recovery_->recovered_payload) {
            const Block& src = *recovery_->recovered_payload;
            Block b = create_prepare_msg(cur_view_, src.header.seq, view_base_.block_hash,
                                         src.qc_nr, src.payload, id_, *keys_);
            propose(b);
            return;
        }
        std::optional<QuorumCert> qc_nr;
        if (first_proposal_pending_ && recovery_ && recovery_->qc_nr) qc_nr = recovery_->qc_nr;

        std::vector<ClientRequest> payload;
        if (!stored_proofs_.empty()) {
            auto it = stored_proofs_.begin();
            payload.push_back(make_blacklist_tx(it->first, it->second));
        }
        auto batch = next_batch(payload.size());
        payload.insert(payload.end(), batch.begin(), batch.end());
        if (payload.empty() && !qc_nr) return;  // nothing to do

        Block b = create_prepare_msg(cur_view_, high_qc_.seq + 1, high_qc_.block_hash,
                                     std::move(qc_nr), std::move(payload), id_, *keys_);
        propose(b);
    }

    void propose(const Block& b) {
        last_proposed_ = {b.header.seq, b.header.hash};
        broadcast(Proposal{b});
    }

    // -- timers and view changes -------------------------------------------
    void handle_timeout(uint64_t gen) {
        if (gen != timer_gen_ || !timer_armed_) return;  // stale timer
        timer_armed_ = false;
        if (!has_pending_work()) return;
        if (cur_seq_ < view_base_.seq) {
            // Still behind the view's base: the view is fine, our sync got
            // lost. Retry it instead of churning views.
            SyncRequest sr;
            sr.from_seq = cur_seq_ + 1;
            sr.to_seq = view_base_.seq;
            sr.requester = id_;
            broadcast(sr);
            arm_timer();
            return;
        }
        start_view_change(std::max(cur_view_, last_vc_view_) + 1);
    }

    void start_view_change(ViewNum target) {
        if (target <= cur_view_) return;
        if (!sent_vc_views_.insert(target).second) return;  // already asked for it
        last_vc_view_ = std::max(last_vc_view_, target);
        phase_ = Phase::ViewChanging;
        phase_view_ = target;

        ViewChangeMsg vc;
        vc.next_view = target;
        vc.latest_qc = high_qc_;
        if (last_voted_uncommitted_ && last_voted_uncommitted_->header.seq > high_qc_.seq)
            vc.beta = *last_voted_uncommitted_;
        if (!stored_proofs_.empty()) vc.proof = stored_proofs_.begin()->second;
        vc.sender = id_;
        vc.signature = keys_->sign_node(id_, as_view(canonical_sign_bytes(vc)));
        broadcast(vc);

        timeout_current_ *= cfg_.timeout_multiplier;
        arm_timer();
    }

    static BytesView as_view(const Bytes& b) { return BytesView{b.data(), b.size()}; }

    void handle_view_change_msg(const ViewChangeMsg& vc) {
        if (!verify_node_sig(vc.sender, canonical_sign_bytes(vc), vc.signature)) return;
        // A sender that evidently missed our view change or trails our chain
        // gets handed what it missed before anything else.
        if (vc.next_view <= cur_view_ || vc.latest_qc.seq < cur_seq_) {
            if (last_new_view_) send(vc.sender, *last_new_view_);
            if (last_ready_qc_) send(vc.sender, *last_ready_qc_);
        }
        if (vc.latest_qc.seq < cur_seq_) {
            SyncResponse resp;
            for (SeqNum s = vc.latest_qc.seq + 1; s <= cur_seq_ && resp.entries.size() < 32; ++s) {
                auto it = chain_.find(s);
                if (it == chain_.end()) break;
                resp.entries.push_back({it->second.block, it->second.qc});
            }
            if (!resp.entries.empty()) send(vc.sender, resp);
        }
        if (vc.next_view <= cur_view_) return;
        if (!certs::verify_qc(vc.latest_qc, cfg_.quorum, *keys_)) return;
        if (vc.beta && vc.beta->header.seq <= vc.latest_qc.seq) return;

        auto& pool = vc_pool_[vc.next_view];
        for (const auto& seen : pool)
            if (seen.sender == vc.sender) return;
        pool.push_back(vc);

        if (vc.proof) {
            if (const auto* eq = std::get_if<EquivocationProof>(&*vc.proof))
                if (verify_equivocation_proof(*eq, *keys_)) accept_proof(*eq, false);
        }

        // Amplification: f+1 distinct senders ahead of us pull us to the
        // smallest pooled view above ours; fewer than f+1 never do.
        std::set<NodeId> ahead;
        ViewNum smallest = 0;
        for (const auto& [view, msgs] : vc_pool_) {
            if (view <= cur_view_) continue;
            if (smallest == 0) smallest = view;
            for (const auto& m : msgs) ahead.insert(m.sender);
        }
        if (ahead.size() >= cfg_.f + 1 && smallest > last_vc_view_) start_view_change(smallest);

        maybe_build_new_view(vc.next_view);
    }

    void maybe_build_new_view(ViewNum view) {
        if (view <= cur_view_) return;
        if (primary_of(view, cfg_.n, blacklist_) != id_) return;
        if (built_new_view_.count(view)) return;
        auto it = vc_pool_.find(view);
        if (it == vc_pool_.end() || it->second.size() < cfg_.quorum) return;
        std::vector<ViewChangeMsg> first(it->second.begin(), it->second.begin() + cfg_.quorum);
        auto agg = certs::create_agg_qc(first, cfg_.quorum, *keys_);
        if (!agg.ok()) return;
        auto nv = certs::create_new_view(std::move(*agg), view);
        if (!nv.ok()) return;
        built_new_view_.insert(view);
        broadcast(*nv);
    }

    void handle_new_view(Address src, const NewViewMsg& nv) {
        if (nv.view <= cur_view_) return;
        if (!src.is_node() || src.id != primary_of(nv.view, cfg_.n, blacklist_)) return;
        if (!crypto::verify_new_view_fast(nv, cfg_.quorum, *keys_)) return;

        auto extracted = certs::high_qc_and_betas(nv.agg_qc);
        last_new_view_ = nv;
        last_ready_qc_.reset();
        enter_view(nv.view, extracted);
    }

    void enter_view(ViewNum view, const certs::HighQcBetas& extracted) {
        cur_view_ = view;
        phase_ = Phase::AwaitingReady;
        phase_view_ = view;
        first_proposal_pending_ = true;
        view_base_ = extracted.high_qc;
        last_proposed_.reset();
        recovery_.reset();
        candidates_.clear();
        for (const auto& beta : extracted.betas)
            if (verify_header_sig(beta, *keys_)) candidates_.push_back(beta);

        vc_pool_.erase(vc_pool_.begin(), vc_pool_.upper_bound(view));
        ready_pool_.erase(ready_pool_.begin(), ready_pool_.lower_bound(view));

        TraceEvent e;
        e.kind = TraceEvent::Kind::ViewEnter;
        e.src = Address::node(id_);
        e.view = view;
        trace(e);

        // Two candidates at one (view, seq) are themselves an equivocation proof.
        for (size_t i = 0; i < candidates_.size(); ++i)
            for (size_t j = i + 1; j < candidates_.size(); ++j) {
                const auto& a = candidates_[i];
                const auto& b = candidates_[j];
                if (a.header.view == b.header.view && a.header.seq == b.header.seq &&
                    a.header.hash != b.header.hash && a.header.proposer == b.header.proposer) {
                    EquivocationProof p{a.header, b.header, a.sig, b.sig};
                    if (verify_equivocation_proof(p, *keys_)) accept_proof(p, false);
                }
            }

        reconcile_with_base();

        NodeId p = primary_of(view, cfg_.n, blacklist_);
        ReadyMsg r;
        r.view = view;
        r.sender = id_;
        r.signature = keys_->sign_node(id_, as_view(canonical_sign_bytes(r)));
        send(p, r);

        if (p == id_) {
            begin_recovery();
            maybe_build_ready_qc(view);
        }
    }

    void reconcile_with_base() {
        const QuorumCert& base = view_base_;
        if (base.seq > cur_seq_) {
            if (const Block* held = find_block(base.block_hash); held && base.seq == cur_seq_ + 1) {
                commit_certified(*held, base);
                return;
            }
            SyncRequest sr;
            sr.from_seq = cur_seq_ + 1;
            sr.to_seq = base.seq;
            sr.requester = id_;
            broadcast(sr);
            return;
        }
        auto it = chain_.find(base.seq);
        if (it != chain_.end() && it->second.block.header.hash != base.block_hash &&
            base.view > it->second.qc.view) {
            // The network certified a different block at a height we hold.
            revoke_suffix(base.seq);
            SyncRequest sr;
            sr.from_seq = base.seq;
            sr.to_seq = base.seq;
            sr.requester = id_;
            broadcast(sr);
        }
    }

    /// Walk the β candidates in ascending hash order; serve from local
    /// storage when possible, otherwise ask the network.
    void begin_recovery() {
        recovery_.emplace();
        recovery_->candidates = candidates_;
        advance_recovery();
    }

    void advance_recovery() {
        auto& rec = *recovery_;
        while (rec.current < rec.candidates.size()) {
            if (const Block* held = find_block(rec.candidates[rec.current].header.hash)) {
                rec.recovered_payload = *held;
                rec.resolved = true;
                maybe_propose();
                return;
            }
            if (rec.requested) {
                return;  // waiting for payload or 2f+1 negative responses
            }
            rec.requested = true;
            PayloadRequest pr;
            pr.beta_hash = rec.candidates[rec.current].header.hash;
            pr.view = cur_view_;
            pr.requester = id_;
            broadcast(pr);
            return;
        }
        rec.resolved = true;
        maybe_propose();
    }

    void handle_ready(const ReadyMsg& r) {
        if (r.view < cur_view_) return;
        if (primary_of(r.view, cfg_.n, blacklist_) != id_) return;
        if (ready_qc_built_.count(r.view)) return;
        if (!verify_node_sig(r.sender, canonical_sign_bytes(r), r.signature)) return;
        ready_pool_[r.view].emplace(r.sender, r);
        maybe_build_ready_qc(r.view);
    }

    void maybe_build_ready_qc(ViewNum view) {
        if (view != cur_view_ || ready_qc_built_.count(view)) return;
        auto it = ready_pool_.find(view);
        if (it == ready_pool_.end() || it->second.size() < cfg_.quorum) return;
        std::vector<ReadyMsg> readies;
        for (const auto& [sender, msg] : it->second) {
            readies.push_back(msg);
            if (readies.size() == cfg_.quorum) break;
        }
        auto qc = certs::generate_qc_ready(readies, cfg_.quorum, *keys_);
        if (!qc.ok()) return;
        ready_qc_built_.insert(view);
        broadcast(ReadyQCMsg{*qc});
    }

    void handle_ready_qc(const ReadyQCMsg& m) {
        if (m.qc.kind != QuorumCert::Kind::Ready || m.qc.view != cur_view_) return;
        if (phase_ != Phase::AwaitingReady) return;
        if (!certs::verify_qc(m.qc, cfg_.quorum, *keys_)) return;
        last_ready_qc_ = m;
        phase_ = Phase::Normal;
        phase_view_ = cur_view_;
        restart_timer_fresh();

        // Re-route work that was addressed to earlier primaries.
        NodeId p = primary();
        if (p != id_) {
            for (const auto& [key, req] : outstanding_)
                if (!committed_requests_.count(key)) send(p, req);
            for (const auto& [culprit, proof] : stored_proofs_)
                send(p, ProofMsg{MisbehaviorProof{proof}, id_});
        } else {
            for (const auto& [key, req] : outstanding_) enqueue(req);
            maybe_propose();
        }
    }

    // -- β recovery ----------------------------------------------------------
    void handle_payload_request(const PayloadRequest& pr) {
        if (const Block* b = find_block(pr.beta_hash)) {
            send(pr.requester, PayloadResponseBlock{*b, id_});
            return;
        }
        NegativeResponse nr;
        nr.beta_hash = pr.beta_hash;
        nr.view = pr.view;
        nr.sender = id_;
        nr.signature = keys_->sign_node(id_, as_view(canonical_sign_bytes(nr)));
        send(pr.requester, nr);
    }

    void handle_payload_response(const PayloadResponseBlock& resp) {
        if (!recovery_ || recovery_->resolved) return;
        auto& rec = *recovery_;
        const auto& target = rec.candidates[rec.current].header;
        if (resp.block.header.hash != target.hash) return;  // stale or mismatched
        if (block_digest(resp.block) != resp.block.header.hash) return;
        rec.recovered_payload = resp.block;
        rec.resolved = true;
        voted_store_[resp.block.header.hash] = resp.block;
        maybe_propose();
    }

    void handle_negative_response(const NegativeResponse& nr) {
        if (!recovery_ || recovery_->resolved) return;
        auto& rec = *recovery_;
        const auto& target = rec.candidates[rec.current].header;
        if (nr.beta_hash != target.hash || nr.view != cur_view_) return;
        if (!verify_node_sig(nr.sender, canonical_sign_bytes(nr), nr.signature)) return;
        rec.negative_responses.emplace(nr.sender, nr);
        if (rec.negative_responses.size() < cfg_.quorum) return;

        std::vector<NegativeResponse> nrs;
        for (const auto& [sender, msg] : rec.negative_responses) {
            nrs.push_back(msg);
            if (nrs.size() == cfg_.quorum) break;
        }
        auto qc = certs::generate_qc_nr(nrs, cfg_.quorum, *keys_);
        if (!qc.ok()) return;
        rec.last_qc_nr = *qc;
        rec.negative_responses.clear();
        rec.requested = false;
        ++rec.current;
        if (rec.current >= rec.candidates.size()) {
            rec.qc_nr = rec.last_qc_nr;
            rec.resolved = true;
            maybe_propose();
            return;
        }
        advance_recovery();
    }

    // -- misbehavior proofs ----------------------------------------------------
    void accept_proof(const EquivocationProof& p, bool broadcast_it) {
        NodeId culprit = p.culprit();
        if (blacklist_.count(culprit)) return;  // already served
        if (stored_proofs_.count(culprit)) return;
        stored_proofs_.emplace(culprit, p);
        if (proofs_seen_.insert(culprit).second) {
            TraceEvent e;
            e.kind = TraceEvent::Kind::ProofDetected;
            e.src = Address::node(id_);
            e.culprit = culprit;
            e.view = p.header_a.view;
            e.seq = p.header_a.seq;
            trace(e);
        }
        if (broadcast_it) broadcast(ProofMsg{MisbehaviorProof{p}, id_});
        if (primary() != id_)
            send(primary(), ProofMsg{MisbehaviorProof{p}, id_});
        else
            maybe_propose();
    }

    void handle_proof_msg(const ProofMsg& pm) {
        if (const auto* eq = std::get_if<EquivocationProof>(&pm.proof)) {
            if (verify_equivocation_proof(*eq, *keys_)) accept_proof(*eq, false);
        }
        // Invalid-sequence claims are carried for the record but cannot be
        // verified standalone; timeouts already cover that failure.
    }

    // -- chain sync --------------------------------------------------------------
    void handle_sync_request(Address src, const SyncRequest& sr) {
        if (!src.is_node()) return;
        SyncResponse resp;
        SeqNum from = std::max<SeqNum>(1, sr.from_seq);
        SeqNum to = std::min<SeqNum>(sr.to_seq, cur_seq_);
        for (SeqNum s = from; s <= to && resp.entries.size() < 32; ++s) {
            auto it = chain_.find(s);
            if (it == chain_.end()) break;
            resp.entries.push_back({it->second.block, it->second.qc});
        }
        if (!resp.entries.empty()) send(sr.requester, resp);
    }

    void handle_sync_response(const SyncResponse& resp) {
        for (const auto& entry : resp.entries) {
            if (entry.qc.kind != QuorumCert::Kind::BlockVote) continue;
            if (entry.qc.block_hash != entry.block.header.hash) continue;
            if (entry.qc.seq != entry.block.header.seq) continue;
            if (block_digest(entry.block) != entry.block.header.hash) continue;
            if (!certs::verify_qc(entry.qc, cfg_.quorum, *keys_)) continue;
            commit_certified(entry.block, entry.qc);
        }
        try_next_buffered();
    }

    // -- state ------------------------------------------------------------------
    struct ChainEntry {
        Block block;
        QuorumCert qc;
    };

    struct UndoRec {
        std::vector<std::pair<std::pair<ClientId, uint64_t>, std::optional<Bytes>>> before;
        std::vector<std::pair<ClientId, uint64_t>> committed_added;
    };

    struct RecoveryState {
        std::vector<SignedHeader> candidates;  // ascending header hash
        size_t current = 0;
        bool requested = false;
        std::map<NodeId, NegativeResponse> negative_responses;
        std::optional<Block> recovered_payload;
        std::optional<QuorumCert> qc_nr;      // attach to the first proposal
        std::optional<QuorumCert> last_qc_nr;
        bool resolved = false;
    };

    NodeId id_;
    Config cfg_;
    std::shared_ptr<const crypto::Keychain> keys_;
    uint32_t batch_size_;

    ViewNum cur_view_ = 0;
    SeqNum cur_seq_ = 0;
    QuorumCert high_qc_;
    std::map<SeqNum, ChainEntry> chain_;
    std::map<Digest, SeqNum> chain_index_;
    std::map<std::pair<ViewNum, SeqNum>, SignedHeader> voted_;
    std::optional<SignedHeader> last_voted_uncommitted_;
    std::map<Digest, Block> voted_store_;
    std::map<Digest, std::map<NodeId, Vote>> pending_votes_;
    std::map<Digest, Block> proposal_stash_;

    Phase phase_ = Phase::Normal;
    ViewNum phase_view_ = 0;
    Tick timeout_current_;
    ViewNum last_vc_view_ = 0;
    std::set<ViewNum> sent_vc_views_;
    std::set<NodeId> blacklist_;
    std::map<ViewNum, std::vector<ViewChangeMsg>> vc_pool_;
    std::map<ViewNum, std::map<NodeId, ReadyMsg>> ready_pool_;
    std::set<ViewNum> built_new_view_;
    std::set<ViewNum> ready_qc_built_;

    QuorumCert view_base_;
    std::vector<SignedHeader> candidates_;
    bool first_proposal_pending_ = false;
    std::optional<RecoveryState> recovery_;
    std::optional<std::pair<SeqNum, Digest>> last_proposed_;
    std::optional<NewViewMsg> last_new_view_;
    std::optional<ReadyQCMsg> last_ready_qc_;

    std::vector<ClientRequest> mempool_;
    std::set<std::pair<ClientId, uint64_t>> mempool_keys_;
    std::map<std::pair<ClientId, uint64_t>, ClientRequest> outstanding_;
    std::map<std::pair<ClientId, uint64_t>, SeqNum> committed_requests_;
    std::map<std::pair<ClientId, uint64_t>, Bytes> kv_;
    std::map<SeqNum, UndoRec> undo_;

    std::map<NodeId, EquivocationProof> stored_proofs_;
    std::set<NodeId> proofs_seen_;

    uint64_t timer_gen_ = 0;
    bool timer_armed_ = false;

    Tick now_ = 0;
    Effects* fx_ = nullptr;
};

}  // namespace vbft
