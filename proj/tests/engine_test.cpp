#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "text2loc/common/errors.hpp"
#include "text2loc/engine/adam.hpp"
#include "text2loc/engine/checkpoint.hpp"
#include "text2loc/engine/nn.hpp"
#include "text2loc/engine/ops.hpp"

using namespace text2loc;
using namespace text2loc::engine;
using namespace text2loc::testing;

namespace {

Tensor weighted_sum(const Tensor& out, Rng& rng)
{
    return sum(mul(out, random_tensor(out.shape(), rng)));
}

} // namespace

TEST_CASE("primitive op examples")
{
    const auto s = softmax_rows(Tensor({ 3 }, { 0, 0, 0 }));
    for (double v : s.values())
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const auto r = relu(Tensor({ 2 }, { -1, 2 }));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 2.0);

    const auto mx = max_axis_with_argmax(Tensor({ 2, 2 }, { 1, 5, 4, 2 }), 0);
    CHECK(mx.values.shape() == Shape { 2 });
    CHECK(mx.values.at(0) == 4.0);
    CHECK(mx.values.at(1) == 5.0);
    CHECK(mx.argmax == std::vector<std::size_t> { 1, 0 });
}

TEST_CASE("max ties route to the lowest index")
{
    auto x = Tensor({ 3, 1 }, { 2, 2, 1 }, true);
    backward(sum(max_axis(x, 0)));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("shape mismatches and NaN inputs are rejected")
{
    const auto a = Tensor::zeros({ 2, 3 });
    const auto b = Tensor::zeros({ 2, 3 });
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, Tensor::zeros({ 3, 2 })), ShapeError);
    const auto nan = Tensor({ 2 }, { 1.0, std::numeric_limits<double>::quiet_NaN() });
    CHECK_THROWS_AS(softmax_rows(nan), ValueError);
    CHECK_THROWS_AS(relu(nan), ValueError);
    CHECK_THROWS_AS(Tensor({ 2, 2 }, { 1, 2, 3 }), ShapeError);
}

TEST_CASE("softmax rows sum to one and attention is a convex combination")
{
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor({ 5, 9 }, rng);
        const auto s = softmax_rows(scale(x, 20.0));
        for (std::size_t r = 0; r < 5; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 9; ++c)
                total += s.at(r, c);
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }

        const auto q = random_tensor({ 4, 6 }, rng);
        const auto k = random_tensor({ 7, 6 }, rng);
        const auto v = random_tensor({ 7, 3 }, rng);
        const auto out = scaled_dot_product_attention(scale(q, 5.0), k, v);
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t j = 0; j < 7; ++j) {
                lo = std::min(lo, v.at(j, c));
                hi = std::max(hi, v.at(j, c));
            }
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(out.at(i, c) >= lo - 1e-12);
                CHECK(out.at(i, c) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("scaled dot-product attention")
{
    Rng rng(3);
    SUBCASE("single key forces unit weight")
    {
        const auto q = random_tensor({ 4, 5 }, rng);
        const auto k = random_tensor({ 1, 5 }, rng);
        const auto v = Tensor({ 1, 3 }, { 0.5, -2.0, 7.0 });
        const auto out = scaled_dot_product_attention(q, k, v);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(out.at(i, c) == doctest::Approx(v.at(0, c)).epsilon(1e-14));
    }
    SUBCASE("uniform scores average the values")
    {
        const auto q = Tensor::zeros({ 2, 4 });
        const auto k = random_tensor({ 5, 4 }, rng);
        const auto v = random_tensor({ 5, 3 }, rng);
        const auto out = scaled_dot_product_attention(q, k, v);
        const auto col_mean = mean_axis(v, 0);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(out.at(i, c) == doctest::Approx(col_mean.at(c)).epsilon(1e-13));
    }
    SUBCASE("random 3x4 case matches the explicit double sum")
    {
        const auto q = random_mat(3, 4, rng);
        const auto k = random_mat(3, 4, rng);
        const auto v = random_mat(3, 4, rng);
        const auto out = scaled_dot_product_attention(to_tensor(q), to_tensor(k), to_tensor(v));
        CHECK(max_abs_diff(to_mat(out), attention_loop(q, k, v)) < 1e-13);

        // composed primitive route
        const auto scores = scale(matmul(to_tensor(q), transpose(to_tensor(k))), 0.5);
        const auto composed = matmul(softmax_rows(scores), to_tensor(v));
        CHECK(max_abs_diff(to_mat(out), to_mat(composed)) < 1e-13);
    }
    SUBCASE("empty key set is rejected")
    {
        CHECK_THROWS_AS(scaled_dot_product_attention(Tensor::zeros({ 2, 4 }),
                                                     Tensor::zeros({ 0, 4 }),
                                                     Tensor::zeros({ 0, 4 })),
                        ShapeError);
    }
}

TEST_CASE("segmented attention equals per-segment evaluation")
{
    Rng rng(11);
    const auto q = random_tensor({ 5, 8 }, rng);
    const auto k = random_tensor({ 6, 8 }, rng);
    const auto v = random_tensor({ 6, 4 }, rng);
    const Offsets qo { 0, 2, 5 };
    const Offsets ko { 0, 4, 6 };
    const auto out = to_mat(attention(q, k, v, 2, qo, ko));
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t h = 0; h < 2; ++h) {
            Mat qs, ks, vs;
            for (auto r = qo[s]; r < qo[s + 1]; ++r)
                qs.push_back(cols_of(to_mat(q), h * 4, 4)[r]);
            for (auto r = ko[s]; r < ko[s + 1]; ++r) {
                ks.push_back(cols_of(to_mat(k), h * 4, 4)[r]);
                vs.push_back(cols_of(to_mat(v), h * 2, 2)[r]);
            }
            const auto ref = attention_loop(qs, ks, vs);
            for (std::size_t i = 0; i < ref.size(); ++i)
                for (std::size_t c = 0; c < 2; ++c)
                    CHECK(std::abs(out[qo[s] + i][h * 2 + c] - ref[i][c]) < 1e-13);
        }
    }
}

TEST_CASE("multi-head attention")
{
    Rng rng(5);
    SUBCASE("one head with identity projections degenerates to plain attention")
    {
        ParameterSet ps;
        auto mha = make_multi_head_attention(ps, "mha", 4, 1, rng);
        for (auto* w : { &mha.wq, &mha.wk, &mha.wv, &mha.output.weight }) {
            auto vals = w->mutable_values();
            std::fill(vals.begin(), vals.end(), 0.0);
            for (std::size_t i = 0; i < 4; ++i)
                vals[i * 4 + i] = 1.0;
        }
        auto b = mha.output.bias.mutable_values();
        std::fill(b.begin(), b.end(), 0.0);
        const auto q = random_tensor({ 3, 4 }, rng);
        const auto k = random_tensor({ 5, 4 }, rng);
        const auto v = random_tensor({ 5, 4 }, rng);
        CHECK(max_abs_diff(to_mat(multi_head_attention(q, k, v, mha)),
                           to_mat(scaled_dot_product_attention(q, k, v))) < 1e-14);
    }
    SUBCASE("four heads at width 8 match the head-slice oracle")
    {
        ParameterSet ps;
        auto mha = make_multi_head_attention(ps, "mha", 8, 4, rng);
        const auto q = random_mat(3, 8, rng);
        const auto k = random_mat(6, 8, rng);
        const auto v = random_mat(6, 8, rng);
        const auto out = multi_head_attention(to_tensor(q), to_tensor(k), to_tensor(v), mha);
        const auto ref = mha_loop(q, k, v, to_mat(mha.wq), to_mat(mha.wk), to_mat(mha.wv),
                                  to_mat(mha.output.weight), row_vec(mha.output.bias), 4);
        CHECK(max_abs_diff(to_mat(out), ref) < 1e-13);
    }
    SUBCASE("zero values give the output bias")
    {
        ParameterSet ps;
        auto mha = make_multi_head_attention(ps, "mha", 8, 4, rng);
        const auto out = multi_head_attention(random_tensor({ 3, 8 }, rng),
                                              random_tensor({ 4, 8 }, rng),
                                              Tensor::zeros({ 4, 8 }), mha);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t c = 0; c < 8; ++c)
                CHECK(out.at(i, c) == doctest::Approx(mha.output.bias.at(c)).epsilon(1e-15));
    }
    SUBCASE("indivisible width is rejected")
    {
        ParameterSet ps;
        CHECK_THROWS_AS(make_multi_head_attention(ps, "mha", 6, 4, rng), ShapeError);
    }
}

TEST_CASE("transformer block with max pooling")
{
    Rng rng(9);
    ParameterSet ps;
    const auto block = make_transformer_block(ps, "blk", 8, 4, 16, rng);

    SUBCASE("single row is its own pooled output")
    {
        const auto x = random_mat(1, 8, rng);
        const auto out = transformer_block_maxpool(to_tensor(x), block);
        CHECK(max_abs_diff(row_vec(out), block_oracle(x, ps, "blk", 4)[0]) < 1e-13);
    }
    SUBCASE("duplicated rows leave the output unchanged")
    {
        const auto x = random_mat(1, 8, rng);
        const Mat twice { x[0], x[0] };
        CHECK(max_abs_diff(row_vec(transformer_block_maxpool(to_tensor(x), block)),
                           row_vec(transformer_block_maxpool(to_tensor(twice), block))) < 1e-13);
    }
    SUBCASE("random n=3 input matches the unrolled residual chain")
    {
        const auto x = random_mat(3, 8, rng);
        const auto out = transformer_block_maxpool(to_tensor(x), block);
        CHECK(max_abs_diff(row_vec(out), col_max(block_oracle(x, ps, "blk", 4))) < 1e-13);
    }
    SUBCASE("row permutation invariance")
    {
        for (int trial = 0; trial < 10; ++trial) {
            auto x = random_mat(6, 8, rng);
            const auto base = row_vec(transformer_block_maxpool(to_tensor(x), block));
            rng.shuffle(x.begin(), x.end());
            CHECK(max_abs_diff(base, row_vec(transformer_block_maxpool(to_tensor(x), block))) <=
                  1e-10);
        }
    }
    SUBCASE("zero rows are rejected")
    {
        CHECK_THROWS_AS(transformer_block_maxpool(Tensor::zeros({ 0, 8 }), block), ShapeError);
    }
}

TEST_CASE("backward")
{
    Rng rng(21);
    SUBCASE("sum of W x gives x broadcast over output columns")
    {
        auto w = random_tensor({ 3, 2 }, rng, true);
        const auto x = Tensor({ 1, 3 }, { 1.5, -2.0, 0.25 });
        const auto leaves = backward(sum(matmul(x, w)));
        REQUIRE(leaves.size() == 1);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                CHECK(w.grad()[i * 2 + j] == x.at(i));
    }
    SUBCASE("constant graph yields no gradients")
    {
        const auto a = random_tensor({ 2, 2 }, rng);
        CHECK(backward(sum(relu(a))).empty());
    }
    SUBCASE("non-scalar loss is rejected")
    {
        auto a = random_tensor({ 2, 2 }, rng, true);
        CHECK_THROWS_AS(backward(relu(a)), ShapeError);
    }
    SUBCASE("replaying a tape gives bit-identical gradients")
    {
        ParameterSet ps;
        const auto block = make_transformer_block(ps, "blk", 8, 2, 8, rng);
        const auto x = random_tensor({ 4, 8 }, rng, true);
        Tape tape(weighted_sum(transformer_block_maxpool(x, block), rng));
        tape.backward();
        std::vector<std::vector<double>> first;
        for (auto& t : ps.tensors())
            first.emplace_back(t.grad().begin(), t.grad().end());
        ps.zero_grad();
        tape.backward();
        std::size_t i = 0;
        for (auto& t : ps.tensors())
            CHECK(std::vector<double>(t.grad().begin(), t.grad().end()) == first[i++]);
    }
    SUBCASE("no-grad mode records nothing")
    {
        auto a = random_tensor({ 2, 2 }, rng, true);
        NoGradGuard guard;
        CHECK_FALSE(relu(a).requires_grad());
    }
}

TEST_CASE("every primitive passes the finite-difference check")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto a = random_tensor({ 3, 4 }, rng, true);
        auto b = random_tensor({ 4, 5 }, rng, true);
        auto c = random_tensor({ 3, 4 }, rng, true);
        auto bias = random_tensor({ 4 }, rng, true);
        auto q = random_tensor({ 5, 8 }, rng, true);
        auto k = random_tensor({ 6, 8 }, rng, true);
        auto v = random_tensor({ 6, 4 }, rng, true);
        Rng wrng(seed + 1000);
        const auto w1 = random_tensor({ 3, 5 }, wrng);
        const auto w2 = random_tensor({ 3, 4 }, wrng);
        const auto w3 = random_tensor({ 5, 4 }, wrng);
        const std::vector<std::size_t> picks { 1, 0, 3 };
        const std::vector<std::size_t> rows { 2, 0, 2 };

        auto loss = [&] {
            auto t = sum(mul(matmul(a, b), w1));
            t = add(t, sum(mul(relu(add_bias(sub(a, c), bias)), w2)));
            t = add(t, sum(mul(softmax_rows(mul(a, c)), w2)));
            t = add(t, sum(pick(log_softmax_rows(c), picks)));
            t = add(t, sum(mul(l2_normalize_rows(a), w2)));
            t = add(t, sum(mul(transpose(concat_cols({ a, c })), transpose(concat_cols({ w2, w2 })))));
            t = add(t, sum(mul(concat_rows({ slice_rows(a, 1, 2), slice_rows(c, 0, 1) }), w2)));
            t = add(t, sum(mul(slice_cols(b, 1, 3), slice_cols(b, 0, 3))));
            t = add(t, sum(mul(gather_rows(c, rows), w2)));
            t = add(t, sum(mul(max_axis(a, 0), mean_axis(c, 0))));
            t = add(t, sum(mul(max_axis(b, 1), reshape(max_axis(a, 0), { 4 }))));
            t = add(t, scale(mean(segment_max(c, { 0, 1, 3 })), 3.0));
            t = add(t, sum(mul(attention(q, k, v, 2, { 0, 2, 5 }, { 0, 3, 6 }), w3)));
            return t;
        };
        const auto r = check_gradients(loss, { a, b, c, bias, q, k, v }, rng);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked > 100);
    }
}

TEST_CASE("adam")
{
    SUBCASE("zero gradient leaves parameters unchanged")
    {
        auto p = Tensor({ 3 }, { 1, -2, 3 }, true);
        p.mutable_grad();
        std::vector<Tensor> params { p };
        AdamState state;
        adam_step(params, state, 1e-3);
        CHECK(state.step == 1);
        CHECK(p.at(0) == 1.0);
        CHECK(p.at(1) == -2.0);
        CHECK(p.at(2) == 3.0);
    }
    SUBCASE("first step moves by lr times the gradient sign")
    {
        auto p = Tensor({ 2 }, { 0.0, 0.0 }, true);
        auto g = p.mutable_grad();
        g[0] = 0.37;
        g[1] = -12.0;
        std::vector<Tensor> params { p };
        AdamState state;
        adam_step(params, state, 1e-2);
        CHECK(p.at(0) == doctest::Approx(-1e-2).epsilon(1e-6));
        CHECK(p.at(1) == doctest::Approx(1e-2).epsilon(1e-6));
    }
    SUBCASE("quadratic bowl descends")
    {
        auto p = Tensor({ 2 }, { 3.0, -4.0 }, true);
        std::vector<Tensor> params { p };
        AdamState state;
        std::vector<double> losses;
        for (int step = 0; step < 100; ++step) {
            p.zero_grad();
            const auto loss = sum(mul(p, p));
            losses.push_back(loss.item());
            backward(loss);
            adam_step(params, state, 0.05);
        }
        for (std::size_t i = 5; i < losses.size(); ++i)
            CHECK(losses[i] < losses[i - 1]);
        CHECK(state.step == 100);
    }
    SUBCASE("non-positive learning rate is rejected")
    {
        std::vector<Tensor> params { Tensor({ 1 }, { 0.0 }, true) };
        AdamState state;
        CHECK_THROWS_AS(adam_step(params, state, 0.0), ValueError);
        CHECK_THROWS_AS(adam_step(params, state, -1.0), ValueError);
    }
}

TEST_CASE("learning-rate schedule")
{
    CHECK(lr_schedule(0, 5e-4) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_schedule(6, 5e-4) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_schedule(7, 5e-4) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(lr_schedule(14, 5e-4) == doctest::Approx(8e-5).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip and corruption")
{
    Rng rng(1);
    ParameterSet ps;
    make_linear(ps, "lin", 3, 4, rng);
    AdamState adam;
    auto params = ps.tensors();
    for (auto& p : params) {
        auto g = p.mutable_grad();
        std::fill(g.begin(), g.end(), 0.5);
    }
    adam_step(params, adam, 1e-3);

    const auto bytes = encode_checkpoint(make_checkpoint(ps, &adam, { { "kind", "test" } }));
    const auto decoded = decode_checkpoint(bytes);
    CHECK(decoded.metadata.at("kind") == "test");
    CHECK(encode_checkpoint(decoded) == bytes);

    Rng other(99);
    ParameterSet fresh;
    make_linear(fresh, "lin", 3, 4, other);
    restore_parameters(decoded, fresh);
    CHECK(row_vec(fresh.get("lin.weight")) == row_vec(ps.get("lin.weight")));
    const auto restored = restore_adam(decoded, fresh);
    CHECK(restored.step == 1);
    CHECK(restored.first_moment == adam.first_moment);

    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
    auto flipped = bytes;
    flipped[20] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);

    ParameterSet wrong;
    make_linear(wrong, "lin", 3, 5, other);
    CHECK_THROWS_AS(restore_parameters(decoded, wrong), CheckpointError);
}
