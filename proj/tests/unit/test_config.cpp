#include "doctest.h"
#include "ddt/config.hpp"
#include "ddt/rng.hpp"

#include <cmath>
#include <string>

using namespace ddt;

TEST_CASE("key=value parsing") {
    auto kv = parse_key_values("# comment\n a = 1 \n\nb=two words\n");
    CHECK(kv.size() == 2);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    CHECK(kv_int(kv, "a") == 1);
    CHECK_THROWS_AS(kv_int(kv, "b"), ConfigError);
    CHECK_THROWS_AS(kv_double(kv, "missing"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
    CHECK(parse_key_values(format_key_values(kv)) == kv);
}

TEST_CASE("config errors name the offending key") {
    ModelConfig c;
    c.heads = 3;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "heads");
    }
    c = ModelConfig{};
    c.patch_size = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.alignment_layer = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.heads = 8;  // head_dim 8 is fine for rotary
    CHECK_NOTHROW(c.validate());
    c.hidden_dim = 48;
    c.heads = 8;  // head_dim 6 is not
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.block_style = BlockStyle::baseline;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("model config round-trips through key=value text") {
    ModelConfig c = model_preset("desk");
    c.block_style = BlockStyle::baseline;
    CHECK(ModelConfig::from_key_values(parse_key_values(format_key_values(c.to_key_values()))) == c);
}

TEST_CASE("presets match the named configurations") {
    struct Row {
        const char* name;
        std::size_t enc, dec, width, heads;
    };
    for (const Row& r : {Row{"B/2", 8, 4, 768, 12}, Row{"L/2", 20, 4, 1024, 16}, Row{"XL/2", 22, 6, 1152, 16}}) {
        ModelConfig c = model_preset(r.name);
        CHECK(c.encoder_layers == r.enc);
        CHECK(c.decoder_layers == r.dec);
        CHECK(c.encoder_layers + c.decoder_layers == (r.enc + r.dec));
        CHECK(c.hidden_dim == r.width);
        CHECK(c.heads == r.heads);
        CHECK(c.patch_size == 2);
    }
    CHECK(model_preset("B/2").encoder_layers + model_preset("B/2").decoder_layers == 12);
    CHECK(model_preset("L/2").encoder_layers + model_preset("L/2").decoder_layers == 24);
    CHECK(model_preset("XL/2").encoder_layers + model_preset("XL/2").decoder_layers == 28);
    ModelConfig desk = model_preset("desk");
    CHECK(desk.encoder_layers == 4);
    CHECK(desk.decoder_layers == 2);
    CHECK(desk.hidden_dim == 64);
    CHECK(desk.image_size == 8);
    CHECK(desk.channels == 1);
    CHECK_THROWS_AS(model_preset("huge"), ConfigError);
}

TEST_CASE("default alignment layer is the ceiling of half the encoder depth") {
    CHECK(default_alignment_layer(4) == 2);
    CHECK(default_alignment_layer(5) == 3);
    CHECK(default_alignment_layer(1) == 1);
}

TEST_CASE("block style names") {
    CHECK(parse_block_style("baseline") == BlockStyle::baseline);
    CHECK(to_string(BlockStyle::improved) == "improved");
    CHECK_THROWS(parse_block_style("fancy"));
}

TEST_CASE("named random streams are reproducible and distinct") {
    Rng a = Rng::stream(7, "data", 3);
    Rng b = Rng::stream(7, "data", 3);
    Rng c = Rng::stream(7, "noise", 3);
    Rng d = Rng::stream(7, "data", 4);
    const double va = a.normal();
    CHECK(va == b.normal());
    CHECK(va != c.normal());
    CHECK(va != d.normal());
    CHECK(mix_seed(1, "x", 0) != mix_seed(2, "x", 0));
    Rng e(1);
    for (int i = 0; i < 100; ++i) {
        const auto k = e.below(5);
        CHECK(k < 5);
        const double u = e.uniform(2.0, 3.0);
        CHECK(u >= 2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("format_double is shortest and round-trips") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1e-4) == "1e-04");
    CHECK(format_double(3.0) == "3");
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-30.0, 30.0));
        CHECK(std::stod(format_double(v)) == v);
    }
}
