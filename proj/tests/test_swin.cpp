#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace swinsight;
using testing_support::random_tensor;
using testing_support::random_tensor_f;

namespace {

// [1, G, G, 1] grid whose value at (i, j) is i * G + j.
Tensor<double> labeled_grid(std::size_t g) {
    Tensor<double> t({1, g, g, 1});
    for (std::size_t i = 0; i < g * g; ++i) t[i] = static_cast<double>(i);
    return t;
}

AttentionParams<double> attention_params(Tape<double>& tape, Rng& rng, std::size_t c, std::size_t heads, std::size_t window,
                                         bool bias, double scale = 0.5) {
    AttentionParams<double> p;
    p.qkv_weight = tape.leaf(random_tensor({c, 3 * c}, rng, scale));
    p.qkv_bias = tape.leaf(random_tensor({3 * c}, rng, scale));
    p.proj_weight = tape.leaf(random_tensor({c, c}, rng, scale));
    p.proj_bias = tape.leaf(random_tensor({c}, rng, scale));
    if (bias) p.relative_bias_table = tape.leaf(random_tensor({(2 * window - 1) * (2 * window - 1), heads}, rng, scale));
    return p;
}

const Tensor<double>* const kNoMask = nullptr;

}  // namespace

TEST(ModelConfig, PresetsAndValidation) {
    const auto micro = model_preset("swin-micro");
    EXPECT_EQ(micro.image_size, 32u);
    EXPECT_EQ(micro.patch_size, 2u);
    EXPECT_EQ(micro.embed_dim, 16u);
    EXPECT_EQ(micro.depths, (std::vector<std::size_t>{1, 1, 2}));
    EXPECT_EQ(micro.num_heads, (std::vector<std::size_t>{2, 2, 4}));
    EXPECT_EQ(micro.window_size, 4u);
    EXPECT_EQ(micro.mlp_ratio, 2.0);
    EXPECT_NO_THROW(micro.validate());
    const auto t = model_preset("swin-t-like");
    EXPECT_EQ(t.image_size, 224u);
    EXPECT_EQ(t.depths, (std::vector<std::size_t>{2, 2, 6, 2}));
    EXPECT_EQ(t.num_heads, (std::vector<std::size_t>{3, 6, 12, 24}));
    EXPECT_NO_THROW(t.validate());
    EXPECT_THROW(model_preset("swin-huge"), ConfigError);

    auto bad = micro;
    bad.image_size = 33;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = micro;
    bad.num_heads = {2, 2};
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = micro;
    bad.num_heads = {3, 2, 4};
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = micro;
    bad.num_classes = 3;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelConfig, WindowClampAndShift) {
    const auto c = model_preset("swin-micro");
    EXPECT_EQ(c.grid_side(0), 16u);
    EXPECT_EQ(c.stage_window(0), 4u);
    EXPECT_EQ(c.stage_shift(0), 2u);
    EXPECT_EQ(c.grid_side(2), 4u);
    EXPECT_EQ(c.stage_window(2), 4u);
    EXPECT_EQ(c.stage_shift(2), 0u);  // window covers the whole grid
    auto t = model_preset("swin-t-like");
    EXPECT_EQ(t.grid_side(3), 7u);
    EXPECT_EQ(t.stage_shift(3), 0u);
    EXPECT_EQ(t.final_dim(), 768u);
}

TEST(ModelConfig, TextRoundTrip) {
    auto c = model_preset("swin-t-like");
    c.drop_rate = 0.1;
    c.use_relative_position_bias = false;
    ModelConfig back;
    std::istringstream is(c.to_text());
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        ASSERT_TRUE(back.set(line.substr(0, eq), line.substr(eq + 1)));
    }
    EXPECT_EQ(back, c);
    EXPECT_FALSE(back.set("nonsense", "1"));
}

TEST(PatchEmbed, ShapesZeroAndBasis) {
    Rng rng(1);
    Tape<double> tape;
    const std::size_t c = 5, p = 2;
    auto w = tape.constant(random_tensor({3 * p * p, c}, rng));
    auto b = tape.constant(random_tensor({c}, rng));
    EXPECT_EQ(patch_embed(tape.constant(Tensor<double>({1, 3, 32, 32})), w, b, p).shape(), (Shape{1, 256, c}));

    auto zb = tape.constant(Tensor<double>({c}));
    for (double v : patch_embed(tape.constant(Tensor<double>({1, 3, 4, 4})), w, zb, p).value().data()) EXPECT_EQ(v, 0.0);

    // One-hot pixel (channel 1, row 1, col 0) inside patch (0, 1) of a 4x4 image.
    Tensor<double> img({1, 3, 4, 4});
    img.at({0, 1, 1, 2}) = 1.0;
    const auto tok = patch_embed(tape.constant(img), w, b, p).value();
    const std::size_t token = 0 * 2 + 1, feature = 1 * p * p + 1 * p + 0;
    for (std::size_t k = 0; k < c; ++k) {
        EXPECT_DOUBLE_EQ(tok.at({0, token, k}), w.value().at({feature, k}) + b.value()[k]);
        EXPECT_DOUBLE_EQ(tok.at({0, 0, k}), b.value()[k]);
    }
    EXPECT_THROW(patch_embed(tape.constant(Tensor<double>({1, 3, 5, 5})), w, b, p), ShapeError);
}

TEST(WindowPartition, IndexOracle) {
    Tape<double> tape;
    const auto w = window_partition(tape.constant(labeled_grid(4)), 2).value();
    ASSERT_EQ(w.shape(), (Shape{4, 4, 1}));
    EXPECT_EQ(std::vector<double>(w.vec().begin(), w.vec().begin() + 4), (std::vector<double>{0, 1, 4, 5}));
    // Windows are row-major over the window grid.
    for (std::size_t win = 0; win < 4; ++win) {
        const std::size_t wi = win / 2, wj = win % 2;
        for (std::size_t t = 0; t < 4; ++t) {
            const std::size_t i = wi * 2 + t / 2, j = wj * 2 + t % 2;
            EXPECT_EQ(w[win * 4 + t], static_cast<double>(i * 4 + j));
        }
    }
    const auto whole = window_partition(tape.constant(labeled_grid(4)), 4).value();
    EXPECT_EQ(whole.shape(), (Shape{1, 16, 1}));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(whole[i], static_cast<double>(i));
    EXPECT_THROW(window_partition(tape.constant(labeled_grid(6)), 4), ShapeError);
}

TEST(WindowPartition, RoundTripProperty) {
    Rng rng(2);
    {
        Tape<double> tape;
        const auto x = random_tensor({1, 8, 8, 4}, rng);
        EXPECT_EQ(window_reverse(window_partition(tape.constant(x), 4), 4, 8, 8).value(), x);
    }
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t w = 1 + rng.below(4);
        const std::size_t hp = w * (1 + rng.below(3)), wp = w * (1 + rng.below(3));
        const std::size_t b = 1 + rng.below(3), c = 1 + rng.below(5);
        const auto x = random_tensor({b, hp, wp, c}, rng);
        Tape<double> tape;
        ASSERT_EQ(window_reverse(window_partition(tape.constant(x), w), w, hp, wp).value(), x) << "trial " << trial;
    }
}

TEST(WindowPartition, GradientOfRoundTripIsIdentity) {
    Rng rng(3);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 4, 4, 3}, rng));
    const auto r = random_tensor({2, 4, 4, 3}, rng);
    tape.backward(sum(mul(window_reverse(window_partition(x, 2), 2, 4, 4), tape.constant(r))));
    EXPECT_EQ(tape.grad(x), r);
}

TEST(CyclicShift, IndexOracleAndRoundTrip) {
    Tape<double> tape;
    const auto g = labeled_grid(2);  // a b / c d
    EXPECT_EQ(cyclic_shift(tape.constant(g), 0).value(), g);
    EXPECT_EQ(cyclic_shift(tape.constant(g), 1).value().vec(), (std::vector<double>{3, 2, 1, 0}));  // d c / b a

    const auto g5 = labeled_grid(5);
    const auto s = cyclic_shift(tape.constant(g5), 2).value();
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s.at({0, i, j, 0}), g5.at({0, (i + 2) % 5, (j + 2) % 5, 0}));
    }

    Rng rng(4);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t grid = 1 + rng.below(9), shift = rng.below(grid);
        const auto x = random_tensor({1 + rng.below(2), grid, grid, 1 + rng.below(4)}, rng);
        Tape<double> t2;
        ASSERT_EQ(cyclic_unshift(cyclic_shift(t2.constant(x), shift), shift).value(), x) << "trial " << trial;
    }
}

TEST(AttentionMask, StructureAndSymmetry) {
    const auto zero = shifted_window_mask<double>(8, 4, 0);
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
    const auto m = shifted_window_mask<double>(8, 4, 2);
    ASSERT_EQ(m.shape(), (Shape{4, 16, 16}));
    for (std::size_t w = 0; w < 4; ++w) {
        for (std::size_t p = 0; p < 16; ++p) {
            EXPECT_EQ(m.at({w, p, p}), 0.0);
            for (std::size_t q = 0; q < 16; ++q) {
                EXPECT_EQ(m.at({w, p, q}), m.at({w, q, p}));
                EXPECT_TRUE(m.at({w, p, q}) == 0.0 || m.at({w, p, q}) == kMaskValue);
            }
        }
    }
    // The top-left window never straddles a shift boundary.
    for (std::size_t k = 0; k < 256; ++k) EXPECT_EQ(m[k], 0.0);
    // In the bottom-right window, token (0,0) and token (3,3) come from different regions.
    EXPECT_EQ(m.at({3, 0, 15}), kMaskValue);
}

TEST(WindowAttention, SingleTokenReturnsValue) {
    Tape<double> tape;
    AttentionParams<double> p;
    p.qkv_weight = tape.constant(Tensor<double>({1, 3}, std::vector<double>{0.7, -1.3, 5.0}));
    p.qkv_bias = tape.constant(Tensor<double>({3}));
    p.proj_weight = tape.constant(Tensor<double>({1, 1}, 1.0));
    p.proj_bias = tape.constant(Tensor<double>({1}));
    const auto out = window_attention(tape.constant(Tensor<double>({1, 1, 1}, 1.0)), p, kNoMask, 1, 1).value();
    EXPECT_DOUBLE_EQ(out[0], 5.0);
}

TEST(WindowAttention, IdenticalValuesGiveIdenticalRows) {
    Rng rng(5);
    Tape<double> tape;
    const std::size_t c = 4;
    auto p = attention_params(tape, rng, c, 2, 2, true);
    // Zero the value projection; constant value bias makes every V row equal.
    Tensor<double> w = p.qkv_weight.value();
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 2 * c; j < 3 * c; ++j) w.at({i, j}) = 0.0;
    }
    p.qkv_weight = tape.constant(w);
    const auto out = window_attention(tape.constant(random_tensor({3, 4, c}, rng)), p, kNoMask, 2, 2).value();
    for (std::size_t win = 0; win < 3; ++win) {
        for (std::size_t t = 1; t < 4; ++t) {
            for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(out.at({win, t, k}), out.at({win, 0, k}), 1e-12);
        }
    }
}

TEST(WindowAttention, MatchesScalarComputation) {
    // One head, C = 2, a 2x2 window (4 tokens), no bias table, no mask.
    Rng rng(6);
    Tape<double> tape;
    auto p = attention_params(tape, rng, 2, 1, 2, false);
    const auto x = random_tensor({1, 4, 2}, rng);
    const auto out = window_attention(tape.constant(x), p, kNoMask, 1, 2).value();

    const auto& W = p.qkv_weight.value();
    const auto& B = p.qkv_bias.value();
    double q[4][2], k[4][2], v[4][2];
    for (int t = 0; t < 4; ++t) {
        for (int d = 0; d < 2; ++d) {
            q[t][d] = B[d] + x[t * 2] * W[d] + x[t * 2 + 1] * W[6 + d];
            k[t][d] = B[2 + d] + x[t * 2] * W[2 + d] + x[t * 2 + 1] * W[6 + 2 + d];
            v[t][d] = B[4 + d] + x[t * 2] * W[4 + d] + x[t * 2 + 1] * W[6 + 4 + d];
        }
    }
    const auto& P = p.proj_weight.value();
    const auto& PB = p.proj_bias.value();
    for (int t = 0; t < 4; ++t) {
        double s[4], z = 0;
        for (int u = 0; u < 4; ++u) {
            s[u] = std::exp((q[t][0] * k[u][0] + q[t][1] * k[u][1]) / std::sqrt(2.0));
            z += s[u];
        }
        double a[2] = {0, 0};
        for (int u = 0; u < 4; ++u) {
            a[0] += s[u] / z * v[u][0];
            a[1] += s[u] / z * v[u][1];
        }
        for (int d = 0; d < 2; ++d) EXPECT_NEAR(out[t * 2 + d], PB[d] + a[0] * P[d] + a[1] * P[2 + d], 1e-12);
    }
}

TEST(WindowAttention, RowsSumToOneAndMaskedPairsVanish) {
    Rng rng(7);
    Tape<float> tape;
    const std::size_t c = 8, heads = 2, window = 4, grid = 8;
    AttentionParams<float> p;
    p.qkv_weight = tape.constant(random_tensor_f({c, 3 * c}, rng, 0.8));
    p.qkv_bias = tape.constant(random_tensor_f({3 * c}, rng, 0.8));
    p.proj_weight = tape.constant(random_tensor_f({c, c}, rng));
    p.proj_bias = tape.constant(random_tensor_f({c}, rng));
    p.relative_bias_table = tape.constant(random_tensor_f({49, heads}, rng));
    const auto mask = shifted_window_mask<float>(grid, window, 2);
    const std::size_t nw = 4, n = 16;
    Var<float> weights;
    window_attention(tape.constant(random_tensor_f({2 * nw, n, c}, rng, 2.0)), p, &mask, heads, window, &weights);
    const auto& a = weights.value();
    ASSERT_EQ(a.shape(), (Shape{2 * nw, heads, n, n}));
    std::size_t masked = 0;
    for (std::size_t w = 0; w < 2 * nw; ++w) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const float v = a.at({w, h, i, j});
                    s += v;
                    if (mask.at({w % nw, i, j}) != 0.0f) {
                        EXPECT_LT(v, 1e-8f);
                        ++masked;
                    }
                }
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
        }
    }
    EXPECT_GT(masked, 0u);
}

TEST(SwinBlock, ZeroWeightsAreIdentity) {
    Rng rng(8);
    SwinModel<double> model(testing_support::tiny_config({2, 2}), 1);
    for (auto& [name, t] : model.parameters()) {
        if (name.find(".attn.") != std::string::npos || name.find(".mlp.") != std::string::npos) t.fill(0.0);
    }
    Tape<double> tape;
    const auto bound = model.bind(tape, false);
    const auto x = random_tensor({2, 4, 4, 8}, rng);
    const auto mask = shifted_window_mask<double>(4, 2, 1);
    for (std::size_t blk = 0; blk < 2; ++blk) {
        const auto y = swin_block(tape.constant(x), model.block_params(bound, 0, blk), 2, 2, blk, &mask).value();
        EXPECT_EQ(y, x);
    }
}

TEST(SwinBlock, FullWindowMatchesGlobalAttention) {
    for (bool bias : {true, false}) {
        auto cfg = testing_support::tiny_config({1, 1});
        cfg.window_size = 4;  // stage 0 grid is 4, so one window covers it
        cfg.use_relative_position_bias = bias;
        SwinModel<double> model(cfg, 2);
        testing_support::jitter_parameters(model, 3);
        Rng rng(9);
        const auto x = random_tensor({1, 4, 4, 8}, rng);
        Tape<double> tape;
        const auto bound = model.bind(tape, false);
        const auto y = swin_block(tape.constant(x), model.block_params(bound, 0, 0), 2, 4, 0, kNoMask).value();
        const auto ref = testing_support::global_block_oracle(x.vec(), 4, 8, 2, model.parameters(), "stages.0.blocks.0.");
        ASSERT_EQ(y.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
    }
}

TEST(PatchMerging, ShapesConstantAndPlacement) {
    Rng rng(10);
    Tape<double> tape;
    const std::size_t c = 3;
    auto nw = tape.constant(random_tensor({4 * c}, rng));
    auto nb = tape.constant(random_tensor({4 * c}, rng));
    auto red = tape.constant(random_tensor({4 * c, 2 * c}, rng));
    EXPECT_EQ(patch_merging(tape.constant(random_tensor({1, 2, 2, c}, rng)), nw, nb, red).shape(), (Shape{1, 1, 1, 2 * c}));
    EXPECT_THROW(patch_merging(tape.constant(random_tensor({1, 3, 2, c}, rng)), nw, nb, red), ShapeError);

    // Constant input: layernorm gives beta everywhere, so every output cell is equal.
    const auto flat = patch_merging(tape.constant(Tensor<double>({1, 4, 4, c}, 2.5)), nw, nb, red).value();
    for (std::size_t cell = 1; cell < 4; ++cell) {
        for (std::size_t k = 0; k < 2 * c; ++k) EXPECT_DOUBLE_EQ(flat[cell * 2 * c + k], flat[k]);
    }

    const auto x = random_tensor({2, 4, 4, c}, rng);
    const auto y = patch_merging(tape.constant(x), nw, nb, red).value();
    const std::size_t offs[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};  // (dy, dx)
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                std::vector<double> v;
                for (const auto& o : offs) {
                    for (std::size_t k = 0; k < c; ++k) v.push_back(x.at({b, 2 * i + o[0], 2 * j + o[1], k}));
                }
                double mean = 0, var = 0;
                for (double e : v) mean += e;
                mean /= v.size();
                for (double e : v) var += (e - mean) * (e - mean);
                var /= v.size();
                for (std::size_t k = 0; k < v.size(); ++k) v[k] = (v[k] - mean) / std::sqrt(var + 1e-5) * nw.value()[k] + nb.value()[k];
                for (std::size_t o = 0; o < 2 * c; ++o) {
                    double s = 0;
                    for (std::size_t k = 0; k < 4 * c; ++k) s += v[k] * red.value().at({k, o});
                    EXPECT_NEAR(y.at({b, i, j, o}), s, 1e-12);
                }
            }
        }
    }
}

TEST(SwinModel, ForwardShapesAndBatchIndependence) {
    SwinModel<float> model(model_preset("swin-micro"), 4);
    Rng rng(11);
    auto batch = random_tensor_f({3, 3, 32, 32}, rng);
    // Sample 2 duplicates sample 0.
    std::copy_n(batch.data().begin(), 3 * 32 * 32, batch.data().begin() + 2 * 3 * 32 * 32);
    const auto logits = model.forward(batch);
    ASSERT_EQ(logits.shape(), (Shape{3, 2}));
    EXPECT_EQ(logits[0], logits[4]);
    EXPECT_EQ(logits[1], logits[5]);

    Tensor<float> swapped = batch;
    const std::size_t img = 3 * 32 * 32;
    std::copy_n(batch.data().begin(), img, swapped.data().begin() + img);
    std::copy_n(batch.data().begin() + img, img, swapped.data().begin());
    const auto ls = model.forward(swapped);
    EXPECT_EQ(ls[0], logits[2]);
    EXPECT_EQ(ls[1], logits[3]);
    EXPECT_EQ(ls[2], logits[0]);
    EXPECT_EQ(ls[3], logits[1]);

    EXPECT_EQ(model.forward(batch), logits);  // deterministic
    EXPECT_THROW(model.forward(Tensor<float>({1, 3, 16, 16})), ShapeError);
}

TEST(SwinModel, FeaturesFactorizeForward) {
    SwinModel<double> model(model_preset("swin-micro"), 5);
    testing_support::jitter_parameters(model, 6, 0.05);
    Rng rng(12);
    const auto batch = random_tensor({2, 3, 32, 32}, rng);
    const auto f = model.extract_features(batch);
    EXPECT_EQ(f.shape(), (Shape{2, 16 * 4}));
    EXPECT_EQ(model.apply_head(f), model.forward(batch));
}

TEST(SwinModel, ParameterAudit) {
    const auto cfg = model_preset("swin-micro");
    SwinModel<float> model(cfg, 1);
    EXPECT_EQ(model.parameters().size(), SwinModel<float>::expected_shapes(cfg).size());
    auto params = model.parameters();
    params["head.weight"] = Tensor<float>({3, 2});
    EXPECT_THROW(SwinModel<float>(cfg, params), ShapeError);
    params = model.parameters();
    params.erase("norm.bias");
    EXPECT_THROW(SwinModel<float>(cfg, params), ShapeError);
    params = model.parameters();
    params["extra"] = Tensor<float>({1});
    EXPECT_THROW(SwinModel<float>(cfg, params), ShapeError);
}

TEST(SwinModel, InitializationConvention) {
    SwinModel<double> model(model_preset("swin-micro"), 7);
    for (const auto& [name, t] : model.parameters()) {
        const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        const bool is_norm = name.find("norm") != std::string::npos;
        if (is_norm && !is_bias) {
            for (double v : t.data()) EXPECT_EQ(v, 1.0) << name;
        } else if (is_bias) {
            for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
        } else {
            double sq = 0;
            for (double v : t.data()) {
                EXPECT_LE(std::abs(v), 0.04 + 1e-12) << name;
                sq += v * v;
            }
            if (t.size() > 500) {
                EXPECT_NEAR(std::sqrt(sq / t.size()), 0.02 * 0.88, 0.003) << name;
            }
        }
    }
}

TEST(SwinModel, GradientCheckTinyConfigs) {
    for (auto depths : {std::vector<std::size_t>{1, 1}, std::vector<std::size_t>{2, 2}}) {
        const auto cfg = testing_support::tiny_config(depths);
        SwinModel<double> model(cfg, 21);
        testing_support::jitter_parameters(model, 22);
        Rng rng(23);
        const auto images = random_tensor({2, 3, 8, 8}, rng);
        std::vector<std::string> names;
        std::vector<Tensor<double>> inputs;
        for (const auto& [name, t] : model.parameters()) {
            names.push_back(name);
            inputs.push_back(t);
        }
        auto f = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
            typename SwinModel<double>::Bound b;
            for (std::size_t i = 0; i < names.size(); ++i) b.vars.emplace(names[i], vars[i]);
            return cross_entropy(model.logits(b, tape.constant(images)), {0, 1});
        };
        const auto r = testing_support::check_gradients(f, inputs);
        EXPECT_LT(r.worst, 1e-3) << names[r.worst_input];
    }
}
