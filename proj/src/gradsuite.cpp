#include "texstat/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "texstat/attention.hpp"
#include "texstat/ksco.hpp"
#include "texstat/ops.hpp"
#include "texstat/stet.hpp"
#include "texstat/stft.hpp"
#include "texstat/train.hpp"

namespace texstat {

namespace {

using TD = Tensor<double>;

TD rnd(Shape s, double lo, double hi, std::uint64_t seed, bool grad = true) {
    std::mt19937_64 rng(seed);
    TD t = TD::uniform(std::move(s), lo, hi, rng);
    if (grad) t.set_requires_grad(true);
    return t;
}

// Fixed weighting tensor so losses have non-uniform gradients.
TD weights(const Shape& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return TD::uniform(s, 0.5, 1.5, rng);
}

TD wsum(const TD& x, const TD& w) { return reduce_all(ReduceKind::kSum, mul(x, w)); }

TD ssum(const TD& x) { return reduce_all(ReduceKind::kSum, x); }

// Pushes every value at least `margin` away from zero (keeps its sign) so
// kinked activations see one-sided difference quotients.
void keep_away_from_zero(TD& t, double margin) {
    double* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (std::fabs(d[i]) < margin) d[i] = d[i] < 0 ? d[i] - margin : d[i] + margin;
}

// Adds a small distinct ramp so min/max reductions have unique extrema.
void make_distinct(TD& t) {
    double* d = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) d[i] += 1e-3 * static_cast<double>(i);
}

// True when every aggregated value sits comfortably inside or outside its
// quantization bin: difference quotients must not step across a bin edge
// (jump) or a level center (kink), except for values exactly on a level,
// where the symmetric quotient and the gradient rule agree (both zero).
// A perturbation of eps=1e-5 moves an aggregated value by at most
// eps * |sigmoid' * w2 * w1| ~ 1.5e-6, so a 2e-5 margin keeps quotients
// one-sided while remaining easy to satisfy for a few hundred values.
bool ksco_margins_ok(const TD& fa, const QuantizationLevels<double>& lv, double margin) {
    if (lv.half_width <= 5e-3) return false;
    const double* d = fa.data();
    for (std::int64_t i = 0; i < fa.numel(); ++i) {
        double dl = std::numeric_limits<double>::infinity();
        for (double w : lv.levels) dl = std::min(dl, std::fabs(d[i] - w));
        if (std::fabs(dl - lv.half_width) <= margin) return false;
        if (dl > 1e-12 && dl <= margin) return false;
    }
    return true;
}

GradCheckReport check(const std::function<TD()>& f, const std::vector<TD>& inputs) {
    return gradient_check(f, inputs);
}

std::vector<GradCase> ops_cases() {
    std::vector<GradCase> cs;
    auto add_case = [&cs](std::string name, std::function<GradCheckReport()> run) {
        cs.push_back({"ops", std::move(name), std::move(run)});
    };

    add_case("add_broadcast", [] {
        TD a = rnd({2, 3, 4}, -1, 1, 11);
        TD b = rnd({3, 1}, -1, 1, 12);
        TD w = weights({2, 3, 4}, 13);
        return check([=] { return wsum(add(a, b), w); }, {a, b});
    });
    add_case("sub", [] {
        TD a = rnd({3, 5}, -1, 1, 21), b = rnd({3, 5}, -1, 1, 22);
        TD w = weights({3, 5}, 23);
        return check([=] { return wsum(sub(a, b), w); }, {a, b});
    });
    add_case("mul_broadcast", [] {
        TD a = rnd({2, 6}, -1, 1, 31), b = rnd({6}, -1, 1, 32);
        TD w = weights({2, 6}, 33);
        return check([=] { return wsum(mul(a, b), w); }, {a, b});
    });
    add_case("div", [] {
        TD a = rnd({2, 5}, -1, 1, 41), b = rnd({5}, 0.7, 1.6, 42);
        TD w = weights({2, 5}, 43);
        return check([=] { return wsum(divide(a, b), w); }, {a, b});
    });
    add_case("scalar_affine_neg", [] {
        TD a = rnd({7}, -1, 1, 51);
        TD w = weights({7}, 52);
        return check([=] { return wsum(add_scalar(mul_scalar(neg(a), 0.7), 0.3), w); }, {a});
    });
    add_case("exp", [] {
        TD a = rnd({2, 3}, -1, 1, 61);
        TD w = weights({2, 3}, 62);
        return check([=] { return wsum(exp(a), w); }, {a});
    });
    add_case("abs", [] {
        TD a = rnd({9}, -1, 1, 71);
        keep_away_from_zero(a, 0.2);
        TD w = weights({9}, 72);
        return check([=] { return wsum(abs(a), w); }, {a});
    });
    add_case("sigmoid", [] {
        TD a = rnd({3, 3}, -2, 2, 81);
        TD w = weights({3, 3}, 82);
        return check([=] { return wsum(sigmoid(a), w); }, {a});
    });
    add_case("relu", [] {
        TD a = rnd({8}, -1, 1, 91);
        keep_away_from_zero(a, 0.2);
        TD w = weights({8}, 92);
        return check([=] { return wsum(relu(a), w); }, {a});
    });
    add_case("softmax", [] {
        TD a = rnd({3, 5}, -2, 2, 101);
        TD w = weights({3, 5}, 102);
        return check([=] { return wsum(softmax(a, 1), w); }, {a});
    });
    add_case("matmul", [] {
        TD a = rnd({3, 4}, -1, 1, 111), b = rnd({4, 2}, -1, 1, 112);
        TD w = weights({3, 2}, 113);
        return check([=] { return wsum(matmul(a, b), w); }, {a, b});
    });
    add_case("transpose_matmul", [] {
        TD a = rnd({4, 3}, -1, 1, 121), b = rnd({4, 2}, -1, 1, 122);
        TD w = weights({3, 2}, 123);
        return check([=] { return wsum(matmul(transpose(a), b), w); }, {a, b});
    });
    add_case("conv2d_padded", [] {
        TD x = rnd({2, 5, 5}, -1, 1, 131), k = rnd({3, 2, 3, 3}, -0.5, 0.5, 132);
        TD w = weights({3, 5, 5}, 133);
        return check([=] { return wsum(conv2d(x, k, 1, 1, 1), w); }, {x, k});
    });
    add_case("conv2d_stride_dilation", [] {
        TD x = rnd({1, 9, 9}, -1, 1, 141), k = rnd({2, 1, 3, 3}, -0.5, 0.5, 142);
        TD w = weights({2, 5, 5}, 143);
        return check([=] { return wsum(conv2d(x, k, 2, 2, 2), w); }, {x, k});
    });
    add_case("conv2d_1x1", [] {
        TD x = rnd({3, 4, 4}, -1, 1, 151), k = rnd({2, 3, 1, 1}, -0.5, 0.5, 152);
        TD w = weights({2, 4, 4}, 153);
        return check([=] { return wsum(conv2d(x, k), w); }, {x, k});
    });
    add_case("pool_avg", [] {
        TD x = rnd({2, 6, 6}, -1, 1, 161);
        TD w = weights({2, 3, 3}, 162);
        return check([=] { return wsum(pool2d(PoolKind::kAvg, x, 2, 2), w); }, {x});
    });
    add_case("pool_max", [] {
        TD x = rnd({1, 6, 6}, -1, 1, 171);
        make_distinct(x);
        TD w = weights({1, 3, 3}, 172);
        return check([=] { return wsum(pool2d(PoolKind::kMax, x, 2, 2), w); }, {x});
    });
    add_case("pool_global_avg", [] {
        TD x = rnd({3, 5, 4}, -1, 1, 181);
        TD w = weights({3, 1, 1}, 182);
        return check([=] { return wsum(pool2d(PoolKind::kGlobalAvg, x), w); }, {x});
    });
    add_case("resize_bilinear", [] {
        TD x = rnd({2, 3, 5}, -1, 1, 191);
        TD w = weights({2, 5, 7}, 192);
        return check([=] { return wsum(resize_bilinear(x, 5, 7), w); }, {x});
    });
    add_case("upsample_downsample", [] {
        TD x = rnd({1, 4, 4}, -1, 1, 201);
        TD w = weights({1, 4, 4}, 202);
        return check([=] { return wsum(downsample_half(upsample2x(x)), w); }, {x});
    });
    add_case("concat_permute_reshape_select", [] {
        TD a = rnd({2, 3}, -1, 1, 211), b = rnd({2, 3}, -1, 1, 212);
        TD w = weights({12}, 213);
        return check(
            [=] {
                TD r = reshape(permute(concat<double>({a, b}, 0), {1, 0}), {12});
                return add(wsum(r, w), ssum(select(a, 0, 1)));
            },
            {a, b});
    });
    add_case("reduce_sum_mean", [] {
        TD a = rnd({3, 4, 2}, -1, 1, 221);
        TD w1 = weights({3, 2}, 222), w2 = weights({1, 4, 2}, 223);
        return check(
            [=] {
                return add(wsum(reduce(ReduceKind::kSum, a, 1), w1),
                           wsum(reduce(ReduceKind::kMean, a, 0, true), w2));
            },
            {a});
    });
    add_case("reduce_min_max", [] {
        TD a = rnd({3, 5}, -1, 1, 231);
        make_distinct(a);
        return check(
            [=] {
                return add(ssum(reduce(ReduceKind::kMin, a, 1)),
                           ssum(reduce(ReduceKind::kMax, a, 0)));
            },
            {a});
    });
    return cs;
}

std::vector<GradCase> ksco_cases() {
    std::vector<GradCase> cs;
    cs.push_back({"ksco", "aggregate", [] {
                      std::mt19937_64 rng(301);
                      TD f = rnd({3, 4, 4}, -1, 1, 302);
                      auto p = make_ksco_aggregate_params<double>(3, rng);
                      TD w = weights({1, 4, 4}, 303);
                      return check([=] { return wsum(aggregate(f, p), w); },
                                   {f, p.w1, p.b1, p.w2, p.b2});
                  }});
    cs.push_back(
        {"ksco", "embedding_pipeline", [] {
             // Seed search keeps aggregated values away from bin edges, where
             // the counting map is discontinuous by construction.
             for (std::uint64_t seed = 310;; ++seed) {
                 if (seed == 410) throw NumericError("no clean seed for ksco embedding check");
                 std::mt19937_64 rng(seed);
                 TD f = rnd({3, 4, 4}, -1, 1, seed + 1000);
                 auto p = make_ksco_aggregate_params<double>(3, rng);
                 TD fa = aggregate(f, p);
                 auto lv = quantization_levels(fa, 4);
                 if (!ksco_margins_ok(fa, lv, 2e-5)) continue;
                 auto freeze = std::make_shared<KscoFreeze<double>>();
                 ksco(f, 4, p, false, freeze.get());  // fill the replay slot
                 TD w = weights({4, 16}, seed + 2000);
                 return check([=] { return wsum(ksco(f, 4, p, false, freeze.get()).s, w); },
                              {f, p.w1, p.b1, p.w2, p.b2});
             }
         }});
    return cs;
}

std::vector<GradCase> attention_cases() {
    std::vector<GradCase> cs;
    cs.push_back({"attention", "comprehensive_attention", [] {
                      TD f = rnd({3, 4, 4}, -1, 1, 501);
                      TD w = weights({3, 4, 4}, 502);
                      return check([=] { return wsum(comprehensive_attention(f), w); }, {f});
                  }});
    cs.push_back({"attention", "window_partition_merge", [] {
                      TD f = rnd({2, 4, 4}, -1, 1, 511);
                      TD w = weights({2, 4, 4}, 512);
                      return check(
                          [=] { return wsum(window_merge(window_partition(f, 2), 4, 4), w); },
                          {f});
                  }});
    cs.push_back({"attention", "lwsa_self", [] {
                      std::mt19937_64 rng(521);
                      TD f = rnd({4, 4, 4}, -1, 1, 522);
                      auto p = make_attention_params<double>(4, 2, 2, rng);
                      TD w = weights({4, 4, 4}, 523);
                      return check([=] { return wsum(lwsa(f, f, f, p), w); },
                                   {f, p.l_q, p.l_k, p.l_v, p.l_o});
                  }});
    cs.push_back({"attention", "lwsa_cross", [] {
                      std::mt19937_64 rng(531);
                      TD q = rnd({4, 4, 4}, -1, 1, 532);
                      TD k = rnd({4, 4, 4}, -1, 1, 533);
                      auto p = make_attention_params<double>(4, 2, 2, rng);
                      TD w = weights({4, 4, 4}, 534);
                      return check([=] { return wsum(lwsa(q, k, k, p), w); }, {q, k});
                  }});
    return cs;
}

std::vector<GradCase> stft_cases() {
    // Shared toy construction: C=4, 4x4 grid, N=4, heads=2, window=2, with
    // the gate's output layer knocked off its neutral zero initialization so
    // all gate parameters influence the loss.
    struct Built {
        TD f;
        StftParams<double> p;
        std::shared_ptr<KscoFreeze<double>> freeze;
        TD w;
    };
    auto build = [] {
        for (std::uint64_t seed = 610;; ++seed) {
            if (seed == 710) throw NumericError("no clean seed for stft check");
            std::mt19937_64 rng(seed);
            TD f = rnd({4, 4, 4}, -1, 1, seed + 1000);
            auto p = make_stft_params<double>(4, 4, 2, 2, true, rng);
            {
                std::mt19937_64 r2(seed + 3000);
                for (Tensor<double>* t : {&p.mlp_w2, &p.mlp_b2}) {
                    double* d = t->data();
                    for (std::int64_t i = 0; i < t->numel(); ++i)
                        d[i] = (static_cast<double>(r2() >> 11) * 0x1.0p-53 - 0.5) * 0.6;
                }
            }
            TD fa = aggregate(f, p.ksco);
            auto lv = quantization_levels(fa, 4);
            if (!ksco_margins_ok(fa, lv, 2e-5)) continue;
            auto freeze = std::make_shared<KscoFreeze<double>>();
            stft_forward(f, p, freeze.get());
            return Built{f, p, freeze, weights({4, 4, 4}, seed + 2000)};
        }
    };
    std::vector<GradCase> cs;
    cs.push_back({"stft", "fusion_wrt_input", [build] {
                      Built b = build();
                      auto fn = [b] {
                          return wsum(stft_forward(b.f, b.p, b.freeze.get()).fusion, b.w);
                      };
                      return check(fn, {b.f});
                  }});
    cs.push_back({"stft", "fusion_wrt_params", [build] {
                      Built b = build();
                      auto fn = [b] {
                          return wsum(stft_forward(b.f, b.p, b.freeze.get()).fusion, b.w);
                      };
                      return check(fn, {b.p.alpha, b.p.mlp_w1, b.p.mlp_b1, b.p.mlp_w2, b.p.mlp_b2,
                                        b.p.attn.l_o, b.p.ksco.w1});
                  }});
    return cs;
}

std::vector<GradCase> stet_cases() {
    std::vector<GradCase> cs;
    cs.push_back({"stet", "texture_enhanced_ffn", [] {
                      std::mt19937_64 rng(801);
                      auto p = make_stet_params<double>(4, 4, {2, 3, 4}, 2, 2, rng);
                      TD x = rnd({4, 4, 4}, -1, 1, 802);
                      TD w = weights({4, 4, 4}, 803);
                      return check([=] { return wsum(texture_enhanced_ffn(x, p), w); },
                                   {x, p.ffn_d1_w, p.ffn_d1_b, p.ffn_d6_w, p.ffn_d6_b,
                                    p.ffn_d12_w, p.ffn_d12_b, p.ffn_m1_w, p.ffn_m1_b, p.ffn_m2_w,
                                    p.ffn_m2_b});
                  }});
    cs.push_back(
        {"stet", "full_wrt_feats_and_params", [] {
             for (std::uint64_t seed = 810;; ++seed) {
                 if (seed == 910) throw NumericError("no clean seed for stet check");
                 std::mt19937_64 rng(seed);
                 // Bottleneck-level embedding: a fixed input, so only its
                 // replayed statistics matter, not its margins.
                 TD f_b = rnd({3, 2, 2}, -1, 1, seed + 1000, /*grad=*/false);
                 auto p_b = make_ksco_aggregate_params<double>(3, rng);
                 auto freeze_b = std::make_shared<KscoFreeze<double>>();
                 auto emb = ksco(f_b, 4, p_b, false, freeze_b.get());

                 auto p = make_stet_params<double>(4, 4, {2, 3, 4}, 2, 2, rng);
                 std::vector<TD> feats = {rnd({2, 16, 16}, -1, 1, seed + 1100),
                                          rnd({3, 8, 8}, -1, 1, seed + 1200),
                                          rnd({4, 4, 4}, -1, 1, seed + 1300)};
                 bool clean = true;
                 for (std::size_t k = 0; k < feats.size(); ++k) {
                     TD fa = aggregate(feats[k], p.ksco[k]);
                     if (!ksco_margins_ok(fa, quantization_levels(fa, 4), 2e-5)) {
                         clean = false;
                         break;
                     }
                 }
                 if (!clean) continue;
                 auto freeze = std::make_shared<std::vector<KscoFreeze<double>>>();
                 stet_forward(emb, feats, p, freeze.get());
                 TD w = weights({4, 4, 4}, seed + 2000);
                 auto fn = [=] { return wsum(stet_forward(emb, feats, p, freeze.get()), w); };
                 return check(fn, {feats[0], feats[1], feats[2], p.proj_q_w, p.proj_q_b,
                                   p.proj_kv_w, p.attn.l_q, p.ffn_m1_w});
             }
         }});
    return cs;
}

std::vector<GradCase> loss_cases() {
    std::vector<GradCase> cs;
    cs.push_back({"loss", "dice", [] {
                      TD pred = rnd({1, 6, 6}, 0.05, 0.95, 901);
                      TD target = rnd({1, 6, 6}, 0, 1, 902, /*grad=*/false);
                      double* t = target.data();
                      for (std::int64_t i = 0; i < target.numel(); ++i) t[i] = t[i] > 0.5 ? 1 : 0;
                      return check([=] { return dice_loss(pred, target); }, {pred});
                  }});
    cs.push_back({"loss", "dice_batch_mean", [] {
                      TD p1 = rnd({1, 4, 4}, 0.05, 0.95, 911);
                      TD p2 = rnd({1, 4, 4}, 0.05, 0.95, 912);
                      TD t1 = rnd({1, 4, 4}, 0, 1, 913, false), t2 = rnd({1, 4, 4}, 0, 1, 914, false);
                      for (TD* t : {&t1, &t2}) {
                          double* d = t->data();
                          for (std::int64_t i = 0; i < t->numel(); ++i) d[i] = d[i] > 0.5 ? 1 : 0;
                      }
                      return check(
                          [=] {
                              return mul_scalar(add(dice_loss(p1, t1), dice_loss(p2, t2)), 0.5);
                          },
                          {p1, p2});
                  }});
    return cs;
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
    return {"ops", "ksco", "attention", "stft", "stet", "loss"};
}

std::vector<GradCase> gradcheck_cases(const std::string& module) {
    std::vector<GradCase> all;
    auto append = [&all](std::vector<GradCase> v) {
        for (auto& c : v) all.push_back(std::move(c));
    };
    if (module == "all" || module == "ops") append(ops_cases());
    if (module == "all" || module == "ksco") append(ksco_cases());
    if (module == "all" || module == "attention") append(attention_cases());
    if (module == "all" || module == "stft") append(stft_cases());
    if (module == "all" || module == "stet") append(stet_cases());
    if (module == "all" || module == "loss") append(loss_cases());
    if (all.empty()) throw ConfigError("unknown gradcheck module '" + module + "'");
    return all;
}

}  // namespace texstat
