#include <sstream>

#include "doctest.h"
#include "ddt/checkpoint.hpp"
#include "oracles.hpp"

using namespace ddt;

namespace {

ModelConfig tiny() {
    ModelConfig c = model_preset("desk");
    c.hidden_dim = 16;
    c.heads = 2;
    c.encoder_layers = 2;
    c.decoder_layers = 1;
    c.alignment_layer = 1;
    c.time_freq_dim = 8;
    c.projector_dim = 8;
    return c;
}

}  // namespace

TEST_CASE("checkpoint bytes round-trip exactly") {
    Checkpoint ck;
    ck.header["alpha"] = "1";
    ck.header["name"] = "x y";
    ck.blocks.emplace_back("a", Tensor::from({2, 2}, {1.0, -0.0, 1e-300, 3.141592653589793}));
    ck.blocks.emplace_back("b.c", Tensor::from({1}, {42.0}));
    const std::string bytes = serialize_checkpoint(ck);
    CHECK(bytes.rfind(kCheckpointMagic, 0) == 0);
    Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.header == ck.header);
    REQUIRE(back.blocks.size() == 2);
    CHECK(back.blocks[0].first == "a");
    CHECK(back.blocks[0].second.shape() == Shape{2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::bit_cast<std::uint64_t>(back.blocks[0].second.data()[i]) ==
              std::bit_cast<std::uint64_t>(ck.blocks[0].second.data()[i]));
    }
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.find("b.c") != nullptr);
    CHECK(back.find("zzz") == nullptr);
}

TEST_CASE("malformed checkpoints raise FormatError") {
    Checkpoint ck;
    ck.blocks.emplace_back("a", Tensor::from({3}, {1, 2, 3}));
    const std::string bytes = serialize_checkpoint(ck);
    CHECK_THROWS_AS(deserialize_checkpoint("NOTMAGIC"), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 10)), FormatError);
    std::string corrupt = bytes;
    corrupt[8] = '\xff';  // absurd header length
    CHECK_THROWS_AS(deserialize_checkpoint(corrupt), FormatError);
}

TEST_CASE("model checkpoints restore every parameter") {
    DDTModel m(tiny(), 9);
    Rng rng(1);
    m.perturb(rng, 0.1);
    Checkpoint ck = checkpoint_from_model(m, {{"note", "hello"}});
    CHECK(ck.header.at("note") == "hello");
    DDTModel r = model_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ck)));
    CHECK(r.config() == m.config());
    for (const auto& [name, t] : m.parameters()) {
        const Tensor& u = r.parameter(name);
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(u.data()[i] == t.data()[i]);
        CHECK(u.requires_grad() == t.requires_grad());
    }
    CHECK(serialize_checkpoint(checkpoint_from_model(r, {{"note", "hello"}})) == serialize_checkpoint(ck));

    Checkpoint missing = ck;
    missing.blocks.erase(missing.blocks.begin());
    CHECK_THROWS_AS(model_from_checkpoint(missing), FormatError);
    Checkpoint wrong = ck;
    wrong.blocks[0].second = Tensor::zeros({1});
    CHECK_THROWS_AS(model_from_checkpoint(wrong), FormatError);
    Checkpoint badcfg = ck;
    badcfg.header["heads"] = "5";
    CHECK_THROWS_AS(model_from_checkpoint(badcfg), FormatError);
}
