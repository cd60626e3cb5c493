#include <cmath>
#include <random>

#include "doctest.h"
#include "wise/editor.hpp"
#include "wise/errors.hpp"

using namespace wise;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.vocab_size = 256;
    c.d_model = 16;
    c.d_ffn = 24;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 40;
    c.edit_layer = 1;
    return c;
}

EditConfig small_edit_config() {
    EditConfig c;
    c.steps_per_edit = 3;
    c.edits_per_shard = 2;
    c.n_prefixes = 2;
    c.prefix_len = 4;
    c.irrelevant_batch = 2;
    c.rho = 0.5;
    return c;
}

EditExample example(const std::string& prompt, const std::string& target) {
    return {encode_bytes(prompt), encode_bytes(target), encode_bytes("about " + prompt),
            encode_bytes("a quiet road")};
}

std::vector<EditExample> stream(std::size_t n) {
    std::vector<EditExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(example("fact " + std::string(1, static_cast<char>('a' + i)), " x" + std::to_string(i)));
    }
    return out;
}

std::vector<Tokens> pool() {
    return {encode_bytes("the dog sees a tree"), encode_bytes("one old boat"),
            encode_bytes("some green lamp near the river")};
}

Matrix perturbed(const Matrix& m, double scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix out = m;
    for (auto& v : out.flat()) v += n(rng);
    return out;
}

}  // namespace

TEST_CASE("margin loss hand values") {
    const EditConfig c;
    CHECK(margin_loss(25.0, 3.0, c) == 0.0);
    CHECK(margin_loss(15.0, 3.0, c) == 5.0);
    // 3 from the irrelevant hinge, 8 from the edit hinge, 6 from the gap.
    CHECK(margin_loss(12.0, 8.0, c) == 17.0);
    CHECK(margin_loss(20.0, 5.0, c) == 0.0);
}

TEST_CASE("memo loss") {
    EditConfig c;
    CHECK(memo_loss(7.0, c) == 0.0);
    c.use_memo_loss = true;
    CHECK(memo_loss(7.0, c) == 2.0);
    CHECK(memo_loss(4.0, c) == 0.0);
    const std::vector<double> d{9.0, 1.0, 6.0};
    CHECK(memo_loss(d, c) == doctest::Approx(5.0 / 3.0));
    CHECK_THROWS_AS(memo_loss(std::vector<double>{}, c), ConfigError);
}

TEST_CASE("edit config validation and mode names") {
    EditConfig c;
    CHECK_NOTHROW(c.validate());
    c.alpha = 30.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EditConfig{};
    c.rho = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EditConfig{};
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_edit_mode("retrieve") == EditMode::Retrieve);
    CHECK(to_string(EditMode::Merge) == "merge");
    CHECK_THROWS_AS(parse_edit_mode("both"), ConfigError);
}

TEST_CASE("edit loss gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const TinyTransformer m = init_model(small_config(), seed);
        const EditExample ex = example("city of kavo", " lima");
        EditConfig c;
        // Small hinge constants keep every hinge away from its kink at this
        // perturbation size, so the loss is smooth where it is probed.
        c.alpha = 0.01;
        c.beta = 50.0;
        c.gamma = 60.0;
        const Matrix w = perturbed(m.edit_values(), 0.3, seed + 10);
        const EditLoss l = edit_loss(m, w, ex, pool(), c);
        CHECK(l.loss == doctest::Approx(l.ar_loss + l.margin));
        CHECK(l.margin == doctest::Approx(margin_loss(l.delta_edit, l.delta_irrelevant, c)));
        auto f = [&](const Matrix& x) { return edit_loss(m, x, ex, pool(), c).loss; };
        CHECK(finite_diff_check(f, w, l.grad, 30, seed).max_rel_error < 1e-4);

        c.margin_weight = 0.25;
        const EditLoss lw = edit_loss(m, w, ex, pool(), c);
        CHECK(lw.loss == doctest::Approx(lw.ar_loss + 0.25 * lw.margin));
        auto fw = [&](const Matrix& x) { return edit_loss(m, x, ex, pool(), c).loss; };
        CHECK(finite_diff_check(fw, w, lw.grad, 30, seed + 5).max_rel_error < 1e-4);
    }
}

TEST_CASE("edit loss at the main memory has no routing activation") {
    const TinyTransformer m = init_model(small_config(), 1);
    const EditLoss l = edit_loss(m, m.edit_values(), example("city of kavo", " lima"), pool(), EditConfig{});
    CHECK(l.delta_edit == 0.0);
    CHECK(l.delta_irrelevant == 0.0);
    CHECK(l.margin == 20.0 + 10.0);
    CHECK_THROWS_AS(edit_loss(m, m.edit_values(), example("x", " y"), {}, EditConfig{}), ConfigError);
}

TEST_CASE("masked step only writes inside the active mask") {
    const Matrix main = perturbed(Matrix(6, 5), 1.0, 1);
    SideMemory s = init_side(main, 2, 0.4, 2);
    s.active_shard = 1;
    const Matrix grad = perturbed(Matrix(6, 5), 1.0, 3);
    EditConfig c;
    c.lr = 0.5;
    masked_step(s, grad, c);
    for (std::size_t i = 0; i < main.size(); ++i) {
        if (s.masks[1][i] != 0.0) {
            CHECK(s.shard_values[1][i] == main[i] - 0.5 * grad[i]);
        } else {
            CHECK(s.shard_values[1][i] == main[i]);
        }
        CHECK(s.shard_values[0][i] == main[i]);
    }
    CHECK_THROWS_AS(masked_step(s, Matrix(2, 2), c), ShapeError);
    s.active_shard = 5;
    CHECK_THROWS_AS(masked_step(s, grad, c), InputError);
}

TEST_CASE("prefix augmentation") {
    const TinyTransformer m = init_model(small_config(), 4);
    const EditExample ex = example("city of kavo", " lima");
    const EditConfig c = small_edit_config();
    const auto v = augment_prefixes(m, ex, c, 9);
    REQUIRE(v.size() == 3);
    CHECK(v[0] == ex);
    for (std::size_t i = 1; i < v.size(); ++i) {
        CHECK(v[i].prompt.size() == ex.prompt.size() + c.prefix_len);
        CHECK(Tokens(v[i].prompt.end() - ex.prompt.size(), v[i].prompt.end()) == ex.prompt);
        CHECK((v[i].prompt[0] >= 'a' && v[i].prompt[0] <= 'z'));
        CHECK(v[i].target == ex.target);
    }
    CHECK(augment_prefixes(m, ex, c, 9) == v);

    EditConfig none = c;
    none.prefix_len = 0;
    CHECK(augment_prefixes(m, ex, none, 9).size() == 1);

    EditConfig huge = c;
    huge.prefix_len = 35;
    CHECK_THROWS_AS(augment_prefixes(m, ex, huge, 9), InputError);
}

TEST_CASE("merge mode keeps one memory and merges when all shards are full") {
    const TinyTransformer m = init_model(small_config(), 5);
    Editor ed(m, small_edit_config(), MergeSpec{}, EditMode::Merge, pool(), 7);
    double prev = ed.memories()[0].epsilon;
    for (const auto& ex : stream(5)) {
        const EditLogEntry e = ed.edit_one(ex);
        CHECK(e.epsilon <= prev);
        CHECK(e.steps == 3);
        prev = e.epsilon;
    }
    CHECK(ed.memories().size() == 1);
    REQUIRE(ed.merge_events().size() == 1);
    CHECK(ed.merge_events()[0].after_edit == 3);
    CHECK(ed.merge_events()[0].shards == 2);
    CHECK(ed.log()[3].merged);
    CHECK(ed.memories()[0].edits_recorded == 5);
    CHECK(ed.memories()[0].active_shard == 0);
    CHECK(ed.log()[2].shard == 1);
}

TEST_CASE("retrieve mode starts a new memory after each merge") {
    const TinyTransformer m = init_model(small_config(), 5);
    const StreamResult r =
        run_stream(m, stream(9), small_edit_config(), MergeSpec{}, EditMode::Retrieve, pool(), 7);
    CHECK(r.memories.size() == 3);
    CHECK(r.merge_events.size() == 2);
    CHECK(r.log.back().memory == 2);
    CHECK(r.memories[2].edits_recorded == 1);
    CHECK(std::isfinite(r.memories[1].epsilon));
}

TEST_CASE("editing is deterministic") {
    const TinyTransformer m = init_model(small_config(), 6);
    const auto a = run_stream(m, stream(5), small_edit_config(), MergeSpec{}, EditMode::Merge, pool(), 3);
    const auto b = run_stream(m, stream(5), small_edit_config(), MergeSpec{}, EditMode::Merge, pool(), 3);
    CHECK(a.memories[0].values.bit_equal(b.memories[0].values));
    CHECK(a.memories[0].epsilon == b.memories[0].epsilon);
    const auto c = run_stream(m, stream(5), small_edit_config(), MergeSpec{}, EditMode::Merge, pool(), 4);
    CHECK_FALSE(a.memories[0].values.bit_equal(c.memories[0].values));
}

TEST_CASE("steps never touch coordinates outside the active mask") {
    const TinyTransformer m = init_model(small_config(), 8);
    Editor ed(m, small_edit_config(), MergeSpec{}, EditMode::Merge, pool(), 1);
    std::size_t checked = 0;
    ed.set_step_observer([&](std::size_t, const Matrix& before, const Matrix& after, const Mask& mask) {
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] == 0.0 && before[i] != after[i]) FAIL("frozen coordinate changed");
        ++checked;
    });
    ed.run(stream(3));
    CHECK(checked == 9);
}

TEST_CASE("the edited prompt moves the side memory") {
    const TinyTransformer m = init_model(small_config(), 9);
    SideMemory side = init_side(m.edit_values(), 2, 0.5, 1);
    EditConfig c = small_edit_config();
    c.steps_per_edit = 10;
    const EditLogEntry e = edit_one(m, side, example("city of kavo", " lima"), pool(), c, 2);
    CHECK(e.delta_edit > 0.0);
    CHECK(side.epsilon == e.delta_edit);
    CHECK(side.edits_recorded == 1);
    CHECK_THROWS_AS(edit_one(m, side, EditExample{}, pool(), c, 2), InputError);
}
