#include <catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace vbft;

namespace {

ReplyMsg reply_from(NodeId node, ClientId client, uint64_t t, SeqNum seq,
                    const crypto::Keychain& keys) {
    ReplyMsg r;
    r.client_id = client;
    r.timestamp = t;
    r.seq = seq;
    r.replier = node;
    auto rb = canonical_sign_bytes(r);
    r.signature = keys.sign_node(node, BytesView{rb.data(), rb.size()});
    return r;
}

size_t count_sends(const Effects& fx) {
    size_t c = 0;
    for (const auto& e : fx)
        if (std::holds_alternative<SendEffect>(e)) ++c;
    return c;
}

}  // namespace

TEST_CASE("client submits with increasing timestamps") {
    auto keys = test::make_keys();
    Client c(0, 4, 3, keys, 3, 100);
    auto fx = c.on_start(1);

    const SendEffect* first = nullptr;
    for (const auto& e : fx)
        if (const auto* s = std::get_if<SendEffect>(&e)) first = s;
    REQUIRE(first != nullptr);
    CHECK(first->dst == Address::node(0));  // believed primary
    const auto& req = std::get<ClientRequest>(first->msg);
    CHECK(req.timestamp == 1);
    CHECK(req.client_id == 0);
    auto cb = canonical_sign_bytes(req);
    CHECK(keys->verify_client(0, BytesView{cb.data(), cb.size()}, req.signature));

    // Confirmation of t=1 triggers submission of t=2 (closed loop).
    c.on_message(Address::node(0), reply_from(0, 0, 1, 1, *keys), 5);
    c.on_message(Address::node(1), reply_from(1, 0, 1, 1, *keys), 6);
    auto fx3 = c.on_message(Address::node(2), reply_from(2, 0, 1, 1, *keys), 7);
    bool submitted_next = false;
    for (const auto& e : fx3)
        if (const auto* s = std::get_if<SendEffect>(&e))
            if (const auto* r = std::get_if<ClientRequest>(&s->msg))
                if (r->timestamp == 2) submitted_next = true;
    CHECK(submitted_next);
}

TEST_CASE("confirmation requires 2f+1 distinct repliers") {
    auto keys = test::make_keys();
    Client c(1, 4, 3, keys, 1, 100);
    c.on_start(1);

    c.on_message(Address::node(0), reply_from(0, 1, 1, 4, *keys), 2);
    c.on_message(Address::node(0), reply_from(0, 1, 1, 4, *keys), 3);  // duplicate replier
    c.on_message(Address::node(1), reply_from(1, 1, 1, 4, *keys), 4);
    CHECK(c.confirmed().empty());
    c.on_message(Address::node(2), reply_from(2, 1, 1, 4, *keys), 5);
    REQUIRE(c.confirmed().count(1) == 1);
    CHECK(c.confirmed().at(1) == 4);
    CHECK(c.all_confirmed());
}

TEST_CASE("replies disagreeing on seq are grouped per sequence") {
    auto keys = test::make_keys();
    Client c(1, 4, 3, keys, 1, 100);
    c.on_start(1);

    // A revocation era: one node answered with a stale sequence.
    c.on_message(Address::node(0), reply_from(0, 1, 1, 3, *keys), 2);
    c.on_message(Address::node(1), reply_from(1, 1, 1, 4, *keys), 3);
    c.on_message(Address::node(2), reply_from(2, 1, 1, 4, *keys), 4);
    CHECK(c.confirmed().empty());  // no group at 2f+1 yet
    c.on_message(Address::node(3), reply_from(3, 1, 1, 4, *keys), 5);
    REQUIRE(c.confirmed().count(1) == 1);
    CHECK(c.confirmed().at(1) == 4);  // the group that reached 2f+1
}

TEST_CASE("invalid reply signatures are dropped") {
    auto keys = test::make_keys();
    Client c(1, 4, 3, keys, 1, 100);
    c.on_start(1);
    auto bad = reply_from(0, 1, 1, 4, *keys);
    bad.signature.v[0] ^= 1;
    c.on_message(Address::node(0), bad, 2);
    c.on_message(Address::node(1), reply_from(1, 1, 1, 4, *keys), 3);
    c.on_message(Address::node(2), reply_from(2, 1, 1, 4, *keys), 4);
    CHECK(c.confirmed().empty());  // the forged reply never counted
}

TEST_CASE("client timeout rebroadcasts to every node") {
    auto keys = test::make_keys();
    Client c(2, 4, 3, keys, 1, 50);
    c.on_start(1);

    SECTION("unanswered request goes to all n nodes and re-arms") {
        auto fx = c.on_timer(1, 51);
        CHECK(count_sends(fx) == 4);
        bool rearmed = false;
        for (const auto& e : fx)
            if (std::holds_alternative<ArmTimerEffect>(e)) rearmed = true;
        CHECK(rearmed);

        // A second expiry rebroadcasts the same (client, t) request.
        auto fx2 = c.on_timer(1, 101);
        CHECK(count_sends(fx2) == 4);
        for (const auto& e : fx2)
            if (const auto* s = std::get_if<SendEffect>(&e))
                CHECK(std::get<ClientRequest>(s->msg).timestamp == 1);
    }
    SECTION("a confirmed request ignores its timer") {
        c.on_message(Address::node(0), reply_from(0, 2, 1, 1, *keys), 2);
        c.on_message(Address::node(1), reply_from(1, 2, 1, 1, *keys), 3);
        c.on_message(Address::node(2), reply_from(2, 2, 1, 1, *keys), 4);
        auto fx = c.on_timer(1, 51);
        CHECK(count_sends(fx) == 0);
    }
}
