#include <catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace vbft;
using test::MiniNet;

namespace {

size_t count_sends(const Effects& fx, MsgKind kind) {
    size_t c = 0;
    for (const auto& e : fx)
        if (const auto* s = std::get_if<SendEffect>(&e))
            if (kind_of(s->msg) == kind) ++c;
    return c;
}

const SendEffect* find_send(const Effects& fx, MsgKind kind) {
    for (const auto& e : fx)
        if (const auto* s = std::get_if<SendEffect>(&e))
            if (kind_of(s->msg) == kind) return s;
    return nullptr;
}

/// Craft a view-change message whose content mirrors a replica's state.
ViewChangeMsg vc_from(const Replica& r, ViewNum next_view, const crypto::Keychain& keys,
                      std::optional<SignedHeader> beta = std::nullopt) {
    return test::make_vc(next_view, *r.chain_qc(r.cur_seq()), std::move(beta), r.id(), keys);
}

NewViewMsg nv_for(const std::vector<ViewChangeMsg>& vcs, ViewNum view,
                  const crypto::Keychain& keys) {
    auto agg = certs::create_agg_qc(vcs, 3, keys);
    REQUIRE(agg.ok());
    auto nv = certs::create_new_view(*agg, view);
    REQUIRE(nv.ok());
    return *nv;
}

}  // namespace

TEST_CASE("primary rotation") {
    CHECK(primary_of(5, 4, {}) == 1);  // 5 mod 4
    CHECK(primary_of(0, 4, {}) == 0);
    CHECK(primary_of(5, 4, {1}) == 3);  // candidates [0,2,3], 5 mod 3 = 2
    CHECK(primary_of(5, 4, {}) == primary_of(5, 4, {}));
    CHECK(primary_of(7, 7, {0, 1}) == primary_of(7, 7, {0, 1}));
}

TEST_CASE("client requests at primary and replica") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    auto r1 = test::make_request(*keys, 0, 1);

    SECTION("fresh request at the primary is enqueued and proposed") {
        auto fx = net.nodes[0]->on_message(Address::client(0), r1, 1);
        CHECK(count_sends(fx, MsgKind::PrePrepare) == 1);
    }
    SECTION("non-primary forwards to the primary") {
        auto fx = net.nodes[1]->on_message(Address::client(0), r1, 1);
        const auto* s = find_send(fx, MsgKind::Request);
        REQUIRE(s != nullptr);
        CHECK(s->dst == Address::node(0));
    }
    SECTION("bad client signature is dropped") {
        auto bad = r1;
        bad.signature.v[0] ^= 1;
        auto fx = net.nodes[0]->on_message(Address::client(0), bad, 1);
        CHECK(fx.empty());
    }
    SECTION("already committed request answers with a reply") {
        test::grow_chain(net, *keys, 1);
        REQUIRE(net.nodes[1]->cur_seq() == 1);
        auto fx = net.nodes[1]->on_message(Address::client(0),
                                           test::make_request(*keys, 0, 1), 50);
        const auto* s = find_send(fx, MsgKind::Reply);
        REQUIRE(s != nullptr);
        CHECK(std::get<ReplyMsg>(s->msg).seq == 1);
    }
    SECTION("duplicate (client, t) is proposed only once") {
        MiniNet quiet(4, 1, keys);
        quiet.deliver_from_client(0, 0, r1);
        auto fx2 = quiet.nodes[0]->on_message(Address::client(0), r1, 2);
        CHECK(count_sends(fx2, MsgKind::PrePrepare) == 0);  // no second proposal
        quiet.run();
        CHECK(quiet.nodes[0]->cur_seq() == 1);
        CHECK(quiet.nodes[0]->mempool_size() == 0);  // the replay never re-proposes
        CHECK(quiet.nodes[0]->chain_block(1)->payload.size() == 1);
    }
}

TEST_CASE("normal mode: proposals, votes, commits") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);

    SECTION("a valid proposal draws exactly one vote broadcast") {
        auto r1 = test::make_request(*keys, 0, 1);
        Block b = create_prepare_msg(0, 1, net.nodes[1]->high_qc().block_hash, std::nullopt, {r1},
                                     0, *keys);
        auto fx = net.nodes[1]->on_message(Address::node(0), Proposal{b}, 1);
        CHECK(count_sends(fx, MsgKind::Vote) == 1);

        auto again = net.nodes[1]->on_message(Address::node(0), Proposal{b}, 2);
        CHECK(count_sends(again, MsgKind::Vote) == 0);  // vote lock
    }
    SECTION("steady state grows the chain with linked parents") {
        test::grow_chain(net, *keys, 5);
        for (NodeId i = 0; i < 4; ++i) REQUIRE(net.nodes[i]->cur_seq() == 5);
        auto r6 = test::make_request(*keys, 0, 6);
        net.deliver_from_client(0, 0, r6);
        const Block* five = net.nodes[0]->chain_block(5);
        REQUIRE(five != nullptr);
        // The proposal for seq 6 extends block 5.
        bool found = false;
        for (auto& [dst, src_msg] : net.inbox) {
            if (const auto* p = std::get_if<Proposal>(&src_msg.second)) {
                CHECK(p->block.header.seq == 6);
                CHECK(p->block.header.parent == five->header.hash);
                found = true;
                break;
            }
        }
        CHECK(found);
        net.run();
        CHECK(net.nodes[2]->cur_seq() == 6);
    }
    SECTION("2f votes do not commit; the 2f+1st does and replies") {
        auto r1 = test::make_request(*keys, 0, 1);
        Block b = create_prepare_msg(0, 1, net.nodes[3]->high_qc().block_hash, std::nullopt, {r1},
                                     0, *keys);
        net.deliver(3, 0, Proposal{b});
        net.deliver(3, 3, make_vote(b.header, 3, *keys));  // own vote loops back
        net.deliver(3, 0, make_vote(b.header, 0, *keys));
        CHECK(net.nodes[3]->cur_seq() == 0);  // 2f votes only
        net.deliver(3, 1, make_vote(b.header, 1, *keys));
        CHECK(net.nodes[3]->cur_seq() == 1);
        CHECK(net.count_events(TraceEvent::Kind::Commit) == 1);
        CHECK(net.count_events(TraceEvent::Kind::Reply) == 1);
    }
    SECTION("votes arriving before the block are buffered") {
        auto r1 = test::make_request(*keys, 0, 1);
        Block b = create_prepare_msg(0, 1, net.nodes[3]->high_qc().block_hash, std::nullopt, {r1},
                                     0, *keys);
        net.deliver(3, 0, make_vote(b.header, 0, *keys));
        net.deliver(3, 1, make_vote(b.header, 1, *keys));
        net.deliver(3, 2, make_vote(b.header, 2, *keys));
        CHECK(net.nodes[3]->cur_seq() == 0);  // no block yet
        net.deliver(3, 0, Proposal{b});
        CHECK(net.nodes[3]->cur_seq() == 1);  // buffered votes complete on arrival
    }
}

TEST_CASE("safety check outcomes") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    test::grow_chain(net, *keys, 2);
    Replica& r = *net.nodes[1];
    const Digest tip = r.high_qc().block_hash;
    auto req = test::make_request(*keys, 1, 1);

    SECTION("normal-mode child of the tip is accepted") {
        Block b = create_prepare_msg(0, 3, tip, std::nullopt, {req}, 0, *keys);
        CHECK(r.check_proposal(b).accepted());
    }
    SECTION("a gap of 3 asks for sync") {
        Block b = create_prepare_msg(0, 5, tip, std::nullopt, {req}, 0, *keys);
        CHECK(r.check_proposal(b).what == SafetyDecision::What::NeedSync);
    }
    SECTION("wrong proposer is rejected") {
        Block b = create_prepare_msg(0, 3, tip, std::nullopt, {req}, 2, *keys);
        auto d = r.check_proposal(b);
        CHECK(d.what == SafetyDecision::What::Reject);
        CHECK(d.reason == SafetyDecision::Reason::WrongProposer);
    }
    SECTION("tampered signature is rejected") {
        Block b = create_prepare_msg(0, 3, tip, std::nullopt, {req}, 0, *keys);
        b.proposer_sig.v[0] ^= 1;
        CHECK(r.check_proposal(b).reason == SafetyDecision::Reason::BadSig);
    }
    SECTION("an equivocating second proposal is rejected with a proof") {
        Block b1 = create_prepare_msg(0, 3, tip, std::nullopt, {req}, 0, *keys);
        net.deliver(1, 0, Proposal{b1});
        auto req2 = test::make_request(*keys, 1, 2);
        Block b2 = create_prepare_msg(0, 3, tip, std::nullopt, {req2}, 0, *keys);
        auto d = r.check_proposal(b2);
        CHECK(d.what == SafetyDecision::What::Reject);
        CHECK(d.reason == SafetyDecision::Reason::Equivocation);
        REQUIRE(d.proof.has_value());
        CHECK(verify_equivocation_proof(*d.proof, *keys));
        CHECK(d.proof->culprit() == 0);

        net.inbox.clear();
        auto fx = r.on_message(Address::node(0), Proposal{b2}, 99);
        CHECK(count_sends(fx, MsgKind::Vote) == 0);
        CHECK(count_sends(fx, MsgKind::Proof) >= 1);
        CHECK(count_sends(fx, MsgKind::ViewChange) == 1);
    }
}

TEST_CASE("view change: timeouts, amplification, NEW-VIEW") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    test::grow_chain(net, *keys, 1);

    SECTION("timeout broadcasts a view change and doubles the timeout") {
        Replica& r = *net.nodes[2];
        Tick before = r.timeout_current();
        // Give it unserved work so the timer is live.
        net.deliver_from_client(2, 1, test::make_request(*keys, 1, 1));
        net.inbox.clear();
        net.fire_timer(2);
        CHECK(r.timeout_current() == 2 * before);
        CHECK(r.phase() == Phase::ViewChanging);
        bool found = false;
        for (auto& [dst, src_msg] : net.inbox)
            if (const auto* vc = std::get_if<ViewChangeMsg>(&src_msg.second)) {
                CHECK(vc->next_view == 1);
                CHECK(vc->latest_qc.seq == 1);
                CHECK_FALSE(vc->beta.has_value());  // last vote was committed
                found = true;
                break;
            }
        CHECK(found);
    }
    SECTION("beta carries the uncommitted voted block") {
        Replica& r = *net.nodes[2];
        auto req = test::make_request(*keys, 1, 1);
        Block b2 = create_prepare_msg(0, 2, r.high_qc().block_hash, std::nullopt, {req}, 0, *keys);
        net.deliver(2, 0, Proposal{b2});  // votes, never commits
        net.inbox.clear();
        net.fire_timer(2);
        bool found = false;
        for (auto& [dst, src_msg] : net.inbox)
            if (const auto* vc = std::get_if<ViewChangeMsg>(&src_msg.second)) {
                REQUIRE(vc->beta.has_value());
                CHECK(vc->beta->header == b2.header);
                found = true;
                break;
            }
        CHECK(found);
    }
    SECTION("one pooled view-change message does not move a node") {
        Replica& r = *net.nodes[2];
        auto vc = vc_from(*net.nodes[0], 5, *keys);
        auto fx = r.on_message(Address::node(0), vc, 10);
        CHECK(count_sends(fx, MsgKind::ViewChange) == 0);
        CHECK(r.phase() == Phase::Normal);
    }
    SECTION("f+1 distinct senders amplify to the smallest pooled view") {
        Replica& r = *net.nodes[2];
        auto vc5 = vc_from(*net.nodes[0], 5, *keys);
        auto vc6 = vc_from(*net.nodes[1], 6, *keys);
        auto fx1 = r.on_message(Address::node(0), vc6, 10);
        CHECK(count_sends(fx1, MsgKind::ViewChange) == 0);
        auto fx2 = r.on_message(Address::node(1), vc5, 11);
        const auto* s = find_send(fx2, MsgKind::ViewChange);
        REQUIRE(s != nullptr);
        CHECK(std::get<ViewChangeMsg>(s->msg).next_view == 5);
    }
    SECTION("the next primary builds NEW-VIEW at 2f+1 pooled messages") {
        Replica& r = *net.nodes[1];  // primary of view 1
        auto fx1 = r.on_message(Address::node(0), vc_from(*net.nodes[0], 1, *keys), 10);
        CHECK(find_send(fx1, MsgKind::NewView) == nullptr);
        auto fx2 = r.on_message(Address::node(2), vc_from(*net.nodes[2], 1, *keys), 11);
        CHECK(find_send(fx2, MsgKind::NewView) == nullptr);
        auto fx3 = r.on_message(Address::node(3), vc_from(*net.nodes[3], 1, *keys), 12);
        const auto* s = find_send(fx3, MsgKind::NewView);
        REQUIRE(s != nullptr);
        CHECK(std::get<NewViewMsg>(s->msg).view == 1);
    }
}

TEST_CASE("NEW-VIEW adoption, Ready and QC_r") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    test::grow_chain(net, *keys, 1);

    std::vector<ViewChangeMsg> vcs = {vc_from(*net.nodes[0], 1, *keys),
                                      vc_from(*net.nodes[2], 1, *keys),
                                      vc_from(*net.nodes[3], 1, *keys)};
    auto nv = nv_for(vcs, 1, *keys);

    SECTION("adopting a NEW-VIEW sends Ready to the new primary") {
        auto fx = net.nodes[2]->on_message(Address::node(1), nv, 20);
        CHECK(net.nodes[2]->cur_view() == 1);
        CHECK(net.nodes[2]->phase() == Phase::AwaitingReady);
        const auto* s = find_send(fx, MsgKind::Ready);
        REQUIRE(s != nullptr);
        CHECK(s->dst == Address::node(1));
    }
    SECTION("wrong sender is ignored") {
        auto fx = net.nodes[2]->on_message(Address::node(3), nv, 20);
        CHECK(net.nodes[2]->cur_view() == 0);
    }
    SECTION("2f+1 readies produce a broadcast QC_r; QC_r restores Normal") {
        net.deliver(1, 1, nv);  // the new primary adopts its own NEW-VIEW
        net.inbox.clear();
        auto ready = [&](NodeId sender) {
            ReadyMsg m;
            m.view = 1;
            m.sender = sender;
            auto rb = canonical_sign_bytes(m);
            m.signature = keys->sign_node(sender, BytesView{rb.data(), rb.size()});
            return m;
        };
        net.deliver(1, 0, ready(0));
        net.deliver(1, 2, ready(2));
        auto fx = net.nodes[1]->on_message(Address::node(3), ready(3), 25);
        const auto* s = find_send(fx, MsgKind::ReadyQC);
        REQUIRE(s != nullptr);
        auto qcr = std::get<ReadyQCMsg>(s->msg);

        net.deliver(2, 1, nv);
        CHECK(net.nodes[2]->phase() == Phase::AwaitingReady);
        net.deliver(2, 1, qcr);
        CHECK(net.nodes[2]->phase() == Phase::Normal);

        // Stale QC_r for an old view is ignored.
        auto fx2 = net.nodes[2]->on_message(Address::node(1), qcr, 30);
        CHECK(net.nodes[2]->phase() == Phase::Normal);
    }
}

TEST_CASE("post-view-change first proposal rules") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    test::grow_chain(net, *keys, 1);
    const Digest tip = net.nodes[2]->high_qc().block_hash;

    // One node voted for an uncommitted block at seq 2: the β candidate.
    auto beta_req = test::make_request(*keys, 2, 1);
    Block orphan = create_prepare_msg(0, 2, tip, std::nullopt, {beta_req}, 0, *keys);
    SignedHeader beta{orphan.header, orphan.proposer_sig};

    std::vector<ViewChangeMsg> vcs = {vc_from(*net.nodes[0], 1, *keys, beta),
                                      vc_from(*net.nodes[2], 1, *keys),
                                      vc_from(*net.nodes[3], 1, *keys)};
    auto nv = nv_for(vcs, 1, *keys);
    net.deliver(2, 1, nv);
    REQUIRE(net.nodes[2]->cur_view() == 1);

    SECTION("rule 2: re-proposal matching the candidate payload is accepted") {
        Block re = create_prepare_msg(1, 2, tip, std::nullopt, {beta_req}, 1, *keys);
        CHECK(re.header.hash != orphan.header.hash);  // new view, new hash
        CHECK(net.nodes[2]->check_proposal(re).accepted());
    }
    SECTION("rule 2 rejects a different payload posing as the candidate") {
        auto other = test::make_request(*keys, 2, 9);
        Block fake = create_prepare_msg(1, 2, tip, std::nullopt, {other}, 1, *keys);
        auto d = net.nodes[2]->check_proposal(fake);
        CHECK(d.what == SafetyDecision::What::Reject);
        CHECK(d.reason == SafetyDecision::Reason::MissingQcNr);
    }
    SECTION("rule 3: a fresh block with a valid qc_nr naming the candidate is accepted") {
        auto nr = [&](NodeId sender) {
            NegativeResponse n;
            n.beta_hash = orphan.header.hash;
            n.view = 1;
            n.sender = sender;
            auto nb = canonical_sign_bytes(n);
            n.signature = keys->sign_node(sender, BytesView{nb.data(), nb.size()});
            return n;
        };
        auto qc_nr = certs::generate_qc_nr({nr(1), nr(2), nr(3)}, 3, *keys);
        REQUIRE(qc_nr.ok());
        auto fresh = test::make_request(*keys, 3, 1);
        Block b = create_prepare_msg(1, 2, tip, *qc_nr, {fresh}, 1, *keys);
        CHECK(net.nodes[2]->check_proposal(b).accepted());
    }
    SECTION("missing qc_nr triggers a view change") {
        auto fresh = test::make_request(*keys, 3, 1);
        Block b = create_prepare_msg(1, 2, tip, std::nullopt, {fresh}, 1, *keys);
        auto d = net.nodes[2]->check_proposal(b);
        CHECK(d.reason == SafetyDecision::Reason::MissingQcNr);
        net.inbox.clear();
        auto fx = net.nodes[2]->on_message(Address::node(1), Proposal{b}, 40);
        CHECK(count_sends(fx, MsgKind::ViewChange) == 1);
        CHECK(count_sends(fx, MsgKind::Vote) == 0);
    }
    SECTION("a qc_nr is rejected outside the first proposal window") {
        // Re-propose the candidate first; the window closes.
        Block re = create_prepare_msg(1, 2, tip, std::nullopt, {beta_req}, 1, *keys);
        net.deliver(2, 1, Proposal{re});
        auto nr = [&](NodeId sender) {
            NegativeResponse n;
            n.beta_hash = orphan.header.hash;
            n.view = 1;
            n.sender = sender;
            auto nb = canonical_sign_bytes(n);
            n.signature = keys->sign_node(sender, BytesView{nb.data(), nb.size()});
            return n;
        };
        auto qc_nr = certs::generate_qc_nr({nr(1), nr(2), nr(3)}, 3, *keys);
        auto fresh = test::make_request(*keys, 3, 2);
        Block b = create_prepare_msg(1, 3, re.header.hash, *qc_nr, {fresh}, 1, *keys);
        auto d = net.nodes[2]->check_proposal(b);
        CHECK(d.what == SafetyDecision::What::Reject);
    }
}

TEST_CASE("payload recovery at the new primary") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    test::grow_chain(net, *keys, 1);
    const Digest tip = net.nodes[1]->high_qc().block_hash;

    auto beta_req = test::make_request(*keys, 2, 1);
    Block orphan = create_prepare_msg(0, 2, tip, std::nullopt, {beta_req}, 0, *keys);
    SignedHeader beta{orphan.header, orphan.proposer_sig};

    std::vector<ViewChangeMsg> vcs = {vc_from(*net.nodes[0], 1, *keys, beta),
                                      vc_from(*net.nodes[2], 1, *keys),
                                      vc_from(*net.nodes[3], 1, *keys)};
    auto nv = nv_for(vcs, 1, *keys);

    SECTION("the new primary without the payload broadcasts a request") {
        net.inbox.clear();
        auto fx = net.nodes[1]->on_message(Address::node(1), nv, 20);
        const auto* s = find_send(fx, MsgKind::PayloadRequest);
        REQUIRE(s != nullptr);
        CHECK(std::get<PayloadRequest>(s->msg).beta_hash == orphan.header.hash);
    }
    SECTION("a holder answers with the block, a non-holder with a negative response") {
        net.deliver(3, 0, Proposal{orphan});  // node 3 voted for it, stores it
        PayloadRequest pr{orphan.header.hash, 1, 1};
        auto fx_holder = net.nodes[3]->on_message(Address::node(1), pr, 21);
        const auto* blk = find_send(fx_holder, MsgKind::PayloadResponse);
        REQUIRE(blk != nullptr);
        CHECK(std::get<PayloadResponseBlock>(blk->msg).block.header.hash == orphan.header.hash);

        auto fx_other = net.nodes[2]->on_message(Address::node(1), pr, 22);
        const auto* nr = find_send(fx_other, MsgKind::NegativeResponse);
        REQUIRE(nr != nullptr);
        CHECK(std::get<NegativeResponse>(nr->msg).beta_hash == orphan.header.hash);
    }
    SECTION("an ancient committed block is served from the chain") {
        const Block* b1 = net.nodes[2]->chain_block(1);
        REQUIRE(b1 != nullptr);
        PayloadRequest pr{b1->header.hash, 1, 1};
        auto fx = net.nodes[2]->on_message(Address::node(1), pr, 23);
        CHECK(find_send(fx, MsgKind::PayloadResponse) != nullptr);
    }
    SECTION("payload response leads to a re-proposal at the same seq") {
        net.deliver(1, 1, nv);  // primary enters view 1, starts recovery
        // Let it reach Normal phase via readies.
        auto ready = [&](NodeId sender) {
            ReadyMsg m;
            m.view = 1;
            m.sender = sender;
            auto rb = canonical_sign_bytes(m);
            m.signature = keys->sign_node(sender, BytesView{rb.data(), rb.size()});
            return m;
        };
        net.deliver(1, 0, ready(0));
        net.deliver(1, 2, ready(2));
        net.deliver(1, 3, ready(3));
        auto qcr_fx = net.nodes[1]->on_message(
            Address::node(1),
            ReadyQCMsg{std::move(certs::generate_qc_ready({ready(0), ready(2), ready(3)}, 3,
                                                          *keys))
                           .value()},
            24);
        CHECK(net.nodes[1]->phase() == Phase::Normal);

        auto fx = net.nodes[1]->on_message(Address::node(3),
                                           PayloadResponseBlock{orphan, 3}, 25);
        const auto* s = find_send(fx, MsgKind::PrePrepare);
        REQUIRE(s != nullptr);
        const Block& re = std::get<Proposal>(s->msg).block;
        CHECK(re.header.seq == orphan.header.seq);
        CHECK(re.header.view == 1);
        CHECK(payload_digest(re.payload) == payload_digest(orphan.payload));
    }
    SECTION("a mismatched payload response is dropped") {
        net.deliver(1, 1, nv);
        auto other = test::make_request(*keys, 2, 9);
        Block wrong = create_prepare_msg(0, 2, tip, std::nullopt, {other}, 0, *keys);
        auto fx = net.nodes[1]->on_message(Address::node(3), PayloadResponseBlock{wrong, 3}, 25);
        CHECK(find_send(fx, MsgKind::PrePrepare) == nullptr);
    }
    SECTION("2f+1 negative responses produce a qc_nr first proposal") {
        net.deliver(1, 1, nv);
        auto ready = [&](NodeId sender) {
            ReadyMsg m;
            m.view = 1;
            m.sender = sender;
            auto rb = canonical_sign_bytes(m);
            m.signature = keys->sign_node(sender, BytesView{rb.data(), rb.size()});
            return m;
        };
        net.deliver(1, 0, ready(0));
        net.deliver(1, 2, ready(2));
        net.deliver(1, 3, ready(3));
        net.deliver(1, 1,
                    ReadyQCMsg{std::move(certs::generate_qc_ready({ready(0), ready(2), ready(3)},
                                                                  3, *keys))
                                   .value()});
        // Give the primary something to propose.
        net.deliver_from_client(1, 3, test::make_request(*keys, 3, 1));

        auto nr = [&](NodeId sender) {
            NegativeResponse n;
            n.beta_hash = orphan.header.hash;
            n.view = 1;
            n.sender = sender;
            auto nb = canonical_sign_bytes(n);
            n.signature = keys->sign_node(sender, BytesView{nb.data(), nb.size()});
            return n;
        };
        net.nodes[1]->on_message(Address::node(0), nr(0), 30);
        net.nodes[1]->on_message(Address::node(2), nr(2), 31);
        auto fx = net.nodes[1]->on_message(Address::node(3), nr(3), 32);
        const auto* s = find_send(fx, MsgKind::PrePrepare);
        REQUIRE(s != nullptr);
        const Block& b = std::get<Proposal>(s->msg).block;
        REQUIRE(b.qc_nr.has_value());
        CHECK(b.qc_nr->block_hash == orphan.header.hash);
        CHECK(b.header.seq == 2);
        CHECK(extends(b.header, tip));
        // All replicas accept it under rule 3.
        net.deliver(2, 1, nv);
        CHECK(net.nodes[2]->check_proposal(b).accepted());
    }
}

TEST_CASE("commit effects: blacklisting and revocation") {
    auto keys = test::make_keys();

    SECTION("a committed blacklist tx bars the culprit from rotation") {
        MiniNet net(4, 1, keys);
        auto r1 = test::make_request(*keys, 0, 1);
        auto r2 = test::make_request(*keys, 0, 2);
        Block xa = create_prepare_msg(3, 7, Digest{}, std::nullopt, {r1}, 2, *keys);
        Block xb = create_prepare_msg(3, 7, Digest{}, std::nullopt, {r2}, 2, *keys);
        EquivocationProof proof{xa.header, xb.header, xa.proposer_sig, xb.proposer_sig};

        // The primary holds the proof and front-queues the blacklist tx.
        auto fx = net.nodes[0]->on_message(Address::node(1),
                                           ProofMsg{MisbehaviorProof{proof}, 1}, 5);
        net.consume(0, std::move(fx));
        bool proposed_blacklist = false;
        for (auto& [dst, src_msg] : net.inbox)
            if (const auto* p = std::get_if<Proposal>(&src_msg.second)) {
                REQUIRE_FALSE(p->block.payload.empty());
                CHECK(p->block.payload.front().is_blacklist_tx());
                proposed_blacklist = true;
                break;
            }
        CHECK(proposed_blacklist);
        net.run();
        for (NodeId i = 0; i < 4; ++i) {
            CHECK(net.nodes[i]->blacklist() == std::set<NodeId>{2});
            CHECK(net.nodes[i]->cur_seq() == 1);
        }
        // Rotation skips the culprit: candidates [0,1,3], view 2 -> node 3.
        CHECK(primary_of(2, 4, net.nodes[0]->blacklist()) == 3);
        CHECK(net.count_events(TraceEvent::Kind::Blacklist) == 4);

        // A second proof against the same culprit is ignored.
        net.inbox.clear();
        auto fx2 = net.nodes[0]->on_message(Address::node(1),
                                            ProofMsg{MisbehaviorProof{proof}, 1}, 50);
        CHECK(count_sends(fx2, MsgKind::PrePrepare) == 0);
    }

    SECTION("revocation restores the pre-commit application state") {
        MiniNet net(4, 1, keys);
        test::grow_chain(net, *keys, 1);
        auto snapshot = net.nodes[2]->app_state();
        auto before_seq = net.nodes[2]->cur_seq();
        test::grow_chain(net, *keys, 2);
        REQUIRE(net.nodes[2]->cur_seq() == 2);
        REQUIRE(net.nodes[2]->app_state().size() == snapshot.size() + 1);

        auto res = net.nodes[2]->try_revoke(2);
        REQUIRE(res.ok());
        CHECK(net.nodes[2]->cur_seq() == before_seq);
        CHECK(net.nodes[2]->app_state() == snapshot);
        CHECK(net.nodes[2]->high_qc().seq == before_seq);

        auto again = net.nodes[2]->try_revoke(2);
        REQUIRE_FALSE(again.ok());
        CHECK(again.error() == Error::CannotRevoke);
    }

    SECTION("genesis cannot be revoked") {
        MiniNet net(4, 1, keys);
        test::grow_chain(net, *keys, 1);
        auto res = net.nodes[0]->try_revoke(0);
        REQUIRE_FALSE(res.ok());
        CHECK(res.error() == Error::CannotRevoke);
    }

    SECTION("sync entries with invalid certificates are ignored") {
        MiniNet net(4, 1, keys);
        auto r1 = test::make_request(*keys, 0, 1);
        Block b = create_prepare_msg(0, 1, net.nodes[2]->high_qc().block_hash, std::nullopt, {r1},
                                     0, *keys);
        auto qc = certs::generate_qc(test::votes_for(b, {0, 1, 2}, *keys), 3, *keys);
        REQUIRE(qc.ok());
        auto bad = *qc;
        bad.agg_sig.v[0] ^= 1;
        net.deliver(2, 0, SyncResponse{{{b, bad}}});
        CHECK(net.nodes[2]->cur_seq() == 0);  // rejected
        net.deliver(2, 0, SyncResponse{{{b, *qc}}});
        CHECK(net.nodes[2]->cur_seq() == 1);  // valid certificate commits
    }
}

TEST_CASE("committing a conflicting certified block yields an equivocation proof") {
    auto keys = test::make_keys();
    MiniNet net(4, 1, keys);
    auto r1 = test::make_request(*keys, 0, 1);
    auto r2 = test::make_request(*keys, 0, 2);
    const Digest tip = net.nodes[2]->high_qc().block_hash;
    Block mine = create_prepare_msg(0, 1, tip, std::nullopt, {r1}, 0, *keys);
    Block other = create_prepare_msg(0, 1, tip, std::nullopt, {r2}, 0, *keys);

    net.deliver(2, 0, Proposal{mine});  // node 2 votes for `mine`
    net.inbox.clear();
    net.events.clear();
    // The network certifies `other`; node 2 learns it via sync.
    auto qc = certs::generate_qc(test::votes_for(other, {0, 1, 3}, *keys), 3, *keys);
    REQUIRE(qc.ok());
    net.deliver(2, 0, SyncResponse{{{other, *qc}}});
    CHECK(net.nodes[2]->cur_seq() == 1);
    CHECK(net.count_events(TraceEvent::Kind::ProofDetected) == 1);
}
